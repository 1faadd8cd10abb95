"""Deterministic synthetic corpora for desk-scale transfer experiments.

The generative model is a harmonic stack on a linearly swept fundamental,
gated by raised-cosine burst envelopes. The two cry classes encode the
clinically reported alterations: "asphyxia" clips have a higher fundamental,
lower amplitude, fewer and shorter bursts, and a rising pitch contour, while
"normal" clips sit lower and louder with more bursts. Source-task corpora
(words / speakers / gender) reuse the same synthesizer with the class
structure moved into burst/sweep templates, per-subject pitch, or pitch
range respectively.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import PIPELINE_RATE, AudioClip, write_wav
from .errors import InvalidSpec

CLIP_DURATION_S = 1.0
N_HARMONICS = 6
_ANTIALIAS_HZ = 3900.0  # harmonics that would sweep past this are dropped

TASKS = ("target_cry", "words", "speakers", "gender")


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Deterministic per-purpose RNG stream: hash the label into the seed."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    tag = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([seed & (2 ** 64 - 1), tag]))


@dataclass(frozen=True)
class CrySpec:
    """Parameters of one synthetic vocalization."""

    f0_base: float          # Hz
    f0_slope: float         # Hz/s, sign encodes rising/falling melody
    burst_count: int
    burst_duration_s: float
    amplitude: float        # peak, in (0, 1]
    harmonic_rolloff: float  # per-harmonic decay factor, in (0, 1)
    seed: int

    def validate(self) -> "CrySpec":
        if not 100.0 <= self.f0_base <= 1200.0:
            raise InvalidSpec(f"f0_base {self.f0_base} outside [100, 1200] Hz")
        if self.burst_count < 1:
            raise InvalidSpec(f"burst_count {self.burst_count} < 1")
        if self.burst_count * self.burst_duration_s > CLIP_DURATION_S + 1e-12:
            raise InvalidSpec("bursts do not fit in one second")
        if self.burst_duration_s <= 0:
            raise InvalidSpec("burst_duration_s must be positive")
        if not 0.0 < self.amplitude <= 1.0:
            raise InvalidSpec(f"amplitude {self.amplitude} outside (0, 1]")
        if not 0.0 < self.harmonic_rolloff < 1.0:
            raise InvalidSpec(f"harmonic_rolloff {self.harmonic_rolloff} outside (0, 1)")
        return self


def synth_cry(spec: CrySpec) -> AudioClip:
    """Render a 1 s clip at 8 kHz, deterministic in spec.seed.

    The seed drives per-harmonic phases and burst placement jitter; the
    waveform is peak-normalized to spec.amplitude.
    """
    spec.validate()
    rng = derive_rng(spec.seed, "synth_cry")
    n = round(CLIP_DURATION_S * PIPELINE_RATE)
    t = np.arange(n, dtype=np.float64) / PIPELINE_RATE

    phases = rng.uniform(0.0, 2.0 * np.pi, N_HARMONICS)
    f_max = spec.f0_base + max(0.0, spec.f0_slope * CLIP_DURATION_S)
    base_phase = 2.0 * np.pi * (spec.f0_base * t + 0.5 * spec.f0_slope * t * t)
    wave = np.zeros(n, dtype=np.float64)
    for h in range(1, N_HARMONICS + 1):
        if h * f_max >= _ANTIALIAS_HZ:
            continue
        wave += spec.harmonic_rolloff ** (h - 1) * np.sin(h * base_phase + phases[h - 1])

    envelope = np.zeros(n, dtype=np.float64)
    slot = CLIP_DURATION_S / spec.burst_count
    jitter_span = max(0.0, (slot - spec.burst_duration_s) / 2.0)
    jitters = rng.uniform(-jitter_span, jitter_span, spec.burst_count)
    for k in range(spec.burst_count):
        start_s = k * slot + (slot - spec.burst_duration_s) / 2.0 + jitters[k]
        start_s = min(max(start_s, 0.0), CLIP_DURATION_S - spec.burst_duration_s)
        i0 = int(round(start_s * PIPELINE_RATE))
        i1 = min(i0 + int(round(spec.burst_duration_s * PIPELINE_RATE)), n)
        tau = np.arange(i1 - i0, dtype=np.float64) / max(i1 - i0 - 1, 1)
        envelope[i0:i1] = np.maximum(envelope[i0:i1], 0.5 * (1.0 - np.cos(2.0 * np.pi * tau)))

    wave *= envelope
    peak = np.max(np.abs(wave))
    if peak <= 0.0:
        raise InvalidSpec("spec produced a silent waveform")
    wave *= spec.amplitude / peak
    return AudioClip(wave.astype(np.float32), PIPELINE_RATE)


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: str
    subject_id: str
    split: str = ""


@dataclass
class Manifest:
    """Corpus index: relative WAV paths with labels and subject ids."""

    rows: list[ManifestRow]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        self.root = Path(self.root)
        paths = [r.path for r in self.rows]
        if len(set(paths)) != len(paths):
            raise InvalidSpec("manifest paths are not unique")

    HEADER = ["path", "label", "subject_id", "split"]

    def clip_path(self, row: ManifestRow) -> Path:
        return self.root / row.path

    @property
    def class_names(self) -> list[str]:
        return sorted({r.label for r in self.rows})

    @property
    def subject_ids(self) -> list[str]:
        return sorted({r.subject_id for r in self.rows})

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(self.HEADER)
            for r in self.rows:
                writer.writerow([r.path, r.label, r.subject_id, r.split])

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != cls.HEADER:
                raise InvalidSpec(f"{path}: expected manifest header {','.join(cls.HEADER)}")
            rows = [ManifestRow(r[0], r[1], r[2], r[3] if len(r) > 3 else "")
                    for r in reader if r]
        return cls(rows=rows, root=path.parent)


def _subject_specs_target_cry(rng: np.random.Generator, label: str) -> dict:
    if label == "normal":
        return {
            "f0_base": rng.uniform(350.0, 500.0),
            "amplitude": rng.uniform(0.6, 1.0),
            "burst_count": int(rng.integers(3, 6)),
            "f0_slope": rng.uniform(-50.0, 50.0),
            "burst_duration_s": rng.uniform(0.12, 0.18),
            "harmonic_rolloff": rng.uniform(0.4, 0.7),
        }
    return {
        "f0_base": rng.uniform(550.0, 800.0),
        "amplitude": rng.uniform(0.2, 0.5),
        "burst_count": int(rng.integers(1, 3)),
        "f0_slope": rng.uniform(60.0, 180.0),
        "burst_duration_s": rng.uniform(0.06, 0.12),
        "harmonic_rolloff": rng.uniform(0.4, 0.7),
    }


def _word_template(class_index: int) -> dict:
    # class identity = burst count x sweep shape, shared across subjects
    burst_count = 1 + class_index % 4
    slope = (-90.0, 90.0)[(class_index // 4) % 2]
    extra = 40.0 * (class_index // 8)
    return {
        "burst_count": burst_count,
        "f0_slope": slope + np.sign(slope) * extra,
        "burst_duration_s": min(0.18, 0.9 / burst_count),
    }


def synth_corpus(task: str, n_subjects: int, clips_per_subject: int,
                 class_count: int, seed: int, out_dir) -> Manifest:
    """Write a WAV corpus plus manifest.csv; fully deterministic in seed."""
    if task not in TASKS:
        raise InvalidSpec(f"unknown task {task!r}; expected one of {TASKS}")
    if class_count < 2 or n_subjects < class_count or clips_per_subject < 1:
        raise InvalidSpec("need n_subjects >= class_count >= 2 and at "
                          "least one clip per subject")
    if task in ("target_cry", "gender") and class_count != 2:
        raise InvalidSpec(f"{task} is a 2-class task")
    if task == "speakers" and class_count != n_subjects:
        raise InvalidSpec("speakers task requires class_count == n_subjects")
    if task == "words" and clips_per_subject < class_count:
        raise InvalidSpec("words task needs clips_per_subject >= class_count "
                          "so every speaker covers every word")

    out_dir = Path(out_dir)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)

    rows: list[ManifestRow] = []
    for s in range(n_subjects):
        subject_id = f"subj{s:03d}"
        srng = derive_rng(seed, f"{task}/subject/{s}")

        if task == "target_cry":
            label = ("normal", "asphyxia")[s % 2]
            base = _subject_specs_target_cry(srng, label)
        elif task == "gender":
            label = ("male", "female")[s % 2]
            lo, hi = (110.0, 180.0) if label == "male" else (200.0, 320.0)
            base = {
                "f0_base": srng.uniform(lo, hi),
                "amplitude": srng.uniform(0.5, 0.9),
                "burst_count": int(srng.integers(2, 5)),
                "f0_slope": srng.uniform(-60.0, 60.0),
                "burst_duration_s": srng.uniform(0.1, 0.18),
                "harmonic_rolloff": srng.uniform(0.4, 0.7),
            }
        elif task == "speakers":
            label = f"spk{s:03d}"
            # distinct, well-separated fundamental per subject
            f0 = 150.0 + 250.0 * s / max(n_subjects - 1, 1)
            base = {
                "f0_base": f0,
                "amplitude": srng.uniform(0.5, 0.9),
                "burst_count": int(srng.integers(2, 5)),
                "f0_slope": srng.uniform(-40.0, 40.0),
                "burst_duration_s": srng.uniform(0.1, 0.18),
                "harmonic_rolloff": srng.uniform(0.4, 0.7),
            }
        else:  # words: subject = voice, class = utterance template
            label = None
            base = {
                "f0_base": srng.uniform(150.0, 350.0),
                "amplitude": srng.uniform(0.5, 0.9),
                "harmonic_rolloff": srng.uniform(0.4, 0.7),
            }

        for c in range(clips_per_subject):
            crng = derive_rng(seed, f"{task}/clip/{s}/{c}")
            params = dict(base)
            if task == "words":
                class_index = c % class_count
                label = f"word{class_index}"
                params.update(_word_template(class_index))
            params["f0_base"] = float(np.clip(
                params["f0_base"] * crng.uniform(0.97, 1.03), 100.0, 1200.0))
            params["amplitude"] = float(np.clip(
                params["amplitude"] * crng.uniform(0.9, 1.0), 0.05, 1.0))
            clip_seed = int(crng.integers(0, 2 ** 63))
            spec = CrySpec(seed=clip_seed, **params)
            rel = f"wavs/{subject_id}_clip{c:03d}.wav"
            write_wav(out_dir / rel, synth_cry(spec))
            rows.append(ManifestRow(path=rel, label=label, subject_id=subject_id))

    manifest = Manifest(rows=rows, root=out_dir)
    manifest.save(out_dir / "manifest.csv")
    return manifest
