"""Metrics, robustness sweeps, and principal-component embedding analysis.

Evaluation revolves around UAR (unweighted average recall), the mean of
per-class recalls, so imbalanced test sets cannot be gamed by majority
voting. In the binary task, sensitivity is the recall of the pathological
class and specificity the recall of the normal class; UAR is their mean.

Robustness is probed three ways: mixing noise into the waveform at falling
SNR, truncating the clip and zero-padding it back to one second, and zeroing
one mel band's log energy at a time before the DCT. A sweep's unperturbed
point runs the identical code path as the clean evaluation, so the two agree
bit for bit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .errors import (BadConfig, DegenerateData, EmptySet, SilentNoise,
                     SilentSignal)
from .features import (MelFilterbank, ablate_band, dct_coefficients,
                       default_filterbank, log_mel_energies, mfcc)
from .synth import derive_rng

POSITIVE_CLASS = "asphyxia"
NEGATIVE_CLASS = "normal"

NOISE_KINDS = ("gaussian", "playground", "bark", "siren")
DEFAULT_SNR_LEVELS_DB = (math.inf, 20.0, 10.0, 5.0, 0.0, -5.0)
GAUSSIAN_NOISE_STD = math.sqrt(0.1)


# -- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class EvalReport:
    class_names: tuple
    confusion: np.ndarray      # (K, K) counts, rows = true class
    uar: float
    sensitivity: float | None  # recall of the pathological class, binary only
    specificity: float | None  # recall of the normal class, binary only

    @property
    def n(self) -> int:
        return int(self.confusion.sum())

    def to_dict(self) -> dict:
        return {"class_names": list(self.class_names),
                "confusion": self.confusion.tolist(),
                "n": self.n, "uar": self.uar,
                "sensitivity": self.sensitivity,
                "specificity": self.specificity}


def uar_from_confusion(confusion: np.ndarray) -> float:
    """Mean per-class recall over classes that appear at least once."""
    confusion = np.asarray(confusion)
    totals = confusion.sum(axis=1)
    present = totals > 0
    if not np.any(present):
        raise EmptySet("confusion matrix has no examples")
    recalls = np.diag(confusion)[present] / totals[present]
    return float(np.mean(recalls))


def recall_of(confusion: np.ndarray, class_names, name: str) -> float | None:
    if name not in class_names:
        return None
    i = list(class_names).index(name)
    total = confusion[i].sum()
    return float(confusion[i, i] / total) if total > 0 else None


def evaluate_labels(true_labels, pred_labels, class_names) -> EvalReport:
    """Confusion-matrix report from parallel true/predicted label lists."""
    if len(true_labels) == 0:
        raise EmptySet("cannot evaluate zero rows")
    if len(true_labels) != len(pred_labels):
        raise BadConfig("true and predicted label counts differ")
    names = tuple(class_names)
    index = {name: i for i, name in enumerate(names)}
    confusion = np.zeros((len(names), len(names)), dtype=np.int64)
    for t, p in zip(true_labels, pred_labels):
        if t not in index or p not in index:
            bad = t if t not in index else p
            raise BadConfig(f"label {bad!r} is not one of {names}")
        confusion[index[t], index[p]] += 1
    return EvalReport(
        class_names=names, confusion=confusion,
        uar=uar_from_confusion(confusion),
        sensitivity=recall_of(confusion, names, POSITIVE_CLASS),
        specificity=recall_of(confusion, names, NEGATIVE_CLASS))


def evaluate(predict_fn, feature_stack: np.ndarray, true_labels,
             class_names) -> EvalReport:
    """Run a predictor over an (N, 40, 101) stack and score it."""
    if len(feature_stack) == 0:
        raise EmptySet("cannot evaluate zero rows")
    pred = predict_fn(feature_stack)
    return evaluate_labels(list(true_labels), list(pred), class_names)


# -- noise mixing ------------------------------------------------------------

def make_noise(kind: str, n_samples: int, sample_rate: int,
               rng: np.random.Generator) -> AudioClip:
    """Synthetic stand-ins for the environmental recordings.

    gaussian: white noise, standard deviation sqrt(0.1).
    playground: pink (1/f) noise, the broadband hubbub case.
    bark: amplitude-modulated noise bursts.
    siren: a 600-1200 Hz tone swept up and down.
    """
    t = np.arange(n_samples, dtype=np.float64) / sample_rate
    if kind == "gaussian":
        wave = rng.normal(0.0, GAUSSIAN_NOISE_STD, n_samples)
    elif kind == "playground":
        white = rng.normal(0.0, 1.0, n_samples)
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate)
        spectrum /= np.sqrt(np.maximum(freqs, 1.0))
        wave = np.fft.irfft(spectrum, n=n_samples)
    elif kind == "bark":
        wave = rng.normal(0.0, 1.0, n_samples)
        envelope = np.zeros(n_samples)
        burst_len = int(0.08 * sample_rate)
        n_bursts = max(1, int(round(n_samples / sample_rate * 4)))
        for _ in range(n_bursts):
            i0 = int(rng.integers(0, max(1, n_samples - burst_len)))
            ramp = np.hanning(burst_len)
            envelope[i0:i0 + burst_len] = np.maximum(
                envelope[i0:i0 + burst_len], ramp[:n_samples - i0])
        wave *= envelope
        if not np.any(wave):
            wave = rng.normal(0.0, 1.0, n_samples)  # degenerate draw guard
    elif kind == "siren":
        sweep_hz = 1.0
        lo, hi = 600.0, 1200.0
        phase0 = rng.uniform(0.0, 2.0 * np.pi)
        tri = 2.0 * np.abs(sweep_hz * t - np.floor(sweep_hz * t + 0.5))
        inst_freq = lo + (hi - lo) * tri
        phase = 2.0 * np.pi * np.cumsum(inst_freq) / sample_rate
        wave = np.sin(phase + phase0)
    else:
        raise BadConfig(f"unknown noise kind {kind!r}; "
                        f"expected one of {NOISE_KINDS}")
    peak = np.max(np.abs(wave))
    if peak > 0:
        wave = wave / peak * 0.9
    return AudioClip(wave.astype(np.float32), sample_rate)


@dataclass(frozen=True)
class MixResult:
    clip: AudioClip
    alpha: float
    clipped: bool


def mix_noise(clip: AudioClip, noise: AudioClip, snr_db: float) -> MixResult:
    """x + alpha*noise with alpha chosen to hit the target SNR exactly.

    snr_db = inf is the clean sentinel: the waveform passes through
    untouched. The sum is peak-clipped to [-1, 1] only when it overshoots,
    and the result flags whether that happened.
    """
    if math.isinf(snr_db):
        if snr_db < 0:
            raise BadConfig("target SNR of -inf dB is not mixable")
        return MixResult(AudioClip(clip.samples.copy(), clip.sample_rate),
                         0.0, False)
    x = clip.samples.astype(np.float64)
    p_x = float(np.mean(x ** 2))
    if p_x <= 0.0:
        raise SilentSignal("signal power is zero; SNR undefined")
    n = noise.samples.astype(np.float64)
    if len(n) < len(x):
        n = np.tile(n, math.ceil(len(x) / len(n)))
    n = n[:len(x)]
    p_n = float(np.mean(n ** 2))
    if p_n <= 0.0:
        raise SilentNoise("noise power is zero; cannot scale to target SNR")
    alpha = math.sqrt(p_x / (p_n * 10.0 ** (snr_db / 10.0)))
    mixed = x + alpha * n
    clipped = bool(np.max(np.abs(mixed)) > 1.0)
    if clipped:
        mixed = np.clip(mixed, -1.0, 1.0)
    return MixResult(AudioClip(mixed.astype(np.float32), clip.sample_rate),
                     alpha, clipped)


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepCurve:
    kind: str                  # "noise:<kind>", "length", "filterbank"
    axis: tuple                # SNR dB / seconds / band center Hz
    reports: tuple             # one EvalReport per axis point
    model_tag: str = ""

    def __post_init__(self):
        diffs = np.diff([float(a) for a in self.axis])
        if len(diffs) and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise BadConfig(f"sweep axis must be strictly monotone: {self.axis}")

    @property
    def uar_at(self) -> tuple:
        return tuple(r.uar for r in self.reports)

    CSV_HEADER = ["axis", "uar", "sensitivity", "specificity"]

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.CSV_HEADER)
            for a, r in zip(self.axis, self.reports):
                writer.writerow([a, r.uar,
                                 "" if r.sensitivity is None else r.sensitivity,
                                 "" if r.specificity is None else r.specificity])


def load_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        return [{"axis": float(row["axis"]), "uar": float(row["uar"]),
                 "sensitivity": float(row["sensitivity"]) if row["sensitivity"] else None,
                 "specificity": float(row["specificity"]) if row["specificity"] else None}
                for row in reader]


def _feature_stack(clips, bank: MelFilterbank) -> np.ndarray:
    return np.stack([mfcc(c, bank).coeffs.astype(np.float32) for c in clips])


def noise_sweep(predict_fn, clips, labels, class_names, kind: str,
                levels_db=DEFAULT_SNR_LEVELS_DB, seed: int = 0,
                noise_clip: AudioClip | None = None,
                model_tag: str = "") -> SweepCurve:
    """One evaluation per SNR level, noise freshly drawn per clip.

    levels must be sorted by falling SNR (clean first). A user-supplied
    noise clip overrides the built-in generator for this kind.
    """
    levels = [float(v) for v in levels_db]
    if any(b >= a for a, b in zip(levels, levels[1:])):
        raise BadConfig(f"SNR levels must strictly decrease: {levels}")
    bank = default_filterbank()
    reports = []
    for level in levels:
        rng = derive_rng(seed, f"noise/{kind}/{level!r}")
        mixed = []
        for clip in clips:
            if noise_clip is not None:
                noise = noise_clip
            else:
                noise = make_noise(kind, len(clip), clip.sample_rate, rng)
            mixed.append(mix_noise(clip, noise, level).clip)
        reports.append(evaluate(predict_fn, _feature_stack(mixed, bank),
                                labels, class_names))
    return SweepCurve(kind=f"noise:{kind}", axis=tuple(levels),
                      reports=tuple(reports), model_tag=model_tag)


def truncate_and_pad(clip: AudioClip, keep_s: float) -> AudioClip:
    """First keep_s seconds of the clip, zero-padded back to full length."""
    n = len(clip)
    keep = min(n, int(round(keep_s * clip.sample_rate)))
    out = np.zeros_like(clip.samples)
    out[:keep] = clip.samples[:keep]
    return AudioClip(out, clip.sample_rate)


def length_sweep(predict_fn, clips, labels, class_names,
                 model_tag: str = "") -> SweepCurve:
    """Evaluate on the first 0.1 s, 0.2 s, ..., 1.0 s of each clip."""
    bank = default_filterbank()
    lengths = [round(0.1 * (i + 1), 1) for i in range(10)]
    reports = []
    for keep_s in lengths:
        shortened = [truncate_and_pad(c, keep_s) for c in clips]
        reports.append(evaluate(predict_fn, _feature_stack(shortened, bank),
                                labels, class_names))
    return SweepCurve(kind="length", axis=tuple(lengths),
                      reports=tuple(reports), model_tag=model_tag)


def filterbank_sweep(predict_fn, clips, labels, class_names,
                     model_tag: str = "") -> SweepCurve:
    """Evaluate with each of the 40 mel bands ablated in turn.

    The axis is each band's center frequency (its middle edge) in Hz.
    """
    bank = default_filterbank()
    reports = []
    centers = []
    for band in range(len(bank.weights)):
        stack = np.stack([ablate_band(c, band, bank).coeffs.astype(np.float32)
                          for c in clips])
        reports.append(evaluate(predict_fn, stack, labels, class_names))
        centers.append(bank.center_hz(band))
    return SweepCurve(kind="filterbank", axis=tuple(centers),
                      reports=tuple(reports), model_tag=model_tag)


# -- principal-component analysis ---------------------------------------------

@dataclass(frozen=True)
class PcaResult:
    mean: np.ndarray         # (d,)
    components: np.ndarray   # (d, d), rows are unit-norm principal directions
    ratios: np.ndarray       # (d,), descending, sums to 1

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def reconstruct(self, scores: np.ndarray) -> np.ndarray:
        return scores @ self.components + self.mean


def pca_fit(embeddings: np.ndarray) -> PcaResult:
    """Eigendecomposition of the sample covariance of the embeddings."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateData(f"need an (n>=2, d) matrix, got {x.shape}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    total = eigvals.sum()
    if total <= 0.0:
        raise DegenerateData("embeddings have zero total variance")
    return PcaResult(mean=mean, components=eigvecs[:, order].T,
                     ratios=eigvals / total)


def pca_report(embeddings: np.ndarray, labels, out_dir,
               tag: str = "pca") -> PcaResult:
    """Write the cumulative-variance and top-2 projection CSVs."""
    from pathlib import Path

    result = pca_fit(embeddings)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cumulative = np.cumsum(result.ratios)
    with open(out_dir / f"{tag}_cumulative.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["component", "cumulative_ratio"])
        for i, value in enumerate(cumulative, start=1):
            writer.writerow([i, repr(float(value))])
    scores = result.transform(embeddings)
    with open(out_dir / f"{tag}_projection.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["pc1", "pc2", "label"])
        for row, label in zip(scores, labels):
            writer.writerow([repr(float(row[0])), repr(float(row[1])), label])
    return result
