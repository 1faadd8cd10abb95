"""Subject-disjoint splitting, balanced batching, augmentation, and the
training loop with best-validation-UAR checkpoint selection.

Whole subjects are assigned to train/val/test so no individual contributes
clips to more than one set. Mini-batches draw every slot from a uniformly
random class (sampling rows with replacement), which keeps imbalanced
corpora balanced in expectation. Each training clip is randomly time-shifted
before feature extraction. The loop runs a fixed number of epochs with a
two-stage learning rate and keeps the epoch with the best validation UAR.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .audio import AudioClip, read_wav
from .errors import BadConfig, DivergedLoss, EmptyClass, TooFewSubjects
from .evaluation import uar_from_confusion
from .features import mfcc
from .nncore import SGD, Tensor, multiclass_hinge_loss
from .synth import Manifest, ManifestRow, derive_rng

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 50
    lr_initial: float = 0.001
    lr_after: float = 0.0001
    lr_switch_epoch: int = 15
    momentum: float = 0.9
    time_shift_max_s: float = 0.1
    seed: int = 0

    def validate(self) -> "TrainConfig":
        positive = (self.epochs, self.batch_size, self.lr_initial,
                    self.lr_after, self.lr_switch_epoch)
        if any(v <= 0 for v in positive):
            raise BadConfig("epochs, batch size, learning rates, and the "
                            "switch epoch must all be positive")
        if self.momentum < 0 or self.time_shift_max_s < 0:
            raise BadConfig("momentum and time_shift_max_s must be >= 0")
        return self

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch index."""
        return self.lr_initial if epoch <= self.lr_switch_epoch else self.lr_after

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr_initial": self.lr_initial, "lr_after": self.lr_after,
                "lr_switch_epoch": self.lr_switch_epoch,
                "momentum": self.momentum,
                "time_shift_max_s": self.time_shift_max_s, "seed": self.seed}


@dataclass(frozen=True)
class SplitPlan:
    """Whole-subject partition into train/val/test."""

    assignment: dict          # subject_id -> split name
    realized_ratios: dict     # split name -> clip fraction

    def rows_for(self, manifest: Manifest, split: str) -> list[ManifestRow]:
        if split not in SPLITS:
            raise BadConfig(f"unknown split {split!r}")
        return [r for r in manifest.rows if self.assignment[r.subject_id] == split]

    def annotate(self, manifest: Manifest) -> Manifest:
        rows = [ManifestRow(r.path, r.label, r.subject_id,
                            self.assignment[r.subject_id])
                for r in manifest.rows]
        return Manifest(rows=rows, root=manifest.root)


def split_subjects(manifest: Manifest, ratios=(0.6, 0.2, 0.2),
                   seed: int = 0) -> SplitPlan:
    """Greedy stratified assignment of whole subjects, deterministic in seed.

    Every class must have at least three subjects. One subject per class is
    first reserved for each split (best effort when subjects carry several
    classes); the rest are shuffled and placed, largest subjects first, where
    their primary class is furthest below its target clip count.
    """
    if (len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9
            or any(r <= 0 for r in ratios)):
        raise BadConfig(f"ratios {ratios} must be three positive fractions "
                        f"summing to 1")
    by_subject: dict = {}
    for r in manifest.rows:
        by_subject.setdefault(r.subject_id, []).append(r)
    class_subjects: dict = {}
    for r in manifest.rows:
        class_subjects.setdefault(r.label, set()).add(r.subject_id)
    for label in sorted(class_subjects):
        n = len(class_subjects[label])
        if n < 3:
            raise TooFewSubjects(
                f"class {label!r} has {n} subject(s); a subject-disjoint "
                f"train/val/test split needs at least 3")

    rng = derive_rng(seed, "split")
    labels = sorted(class_subjects)
    totals = Counter(r.label for r in manifest.rows)
    targets = {(label, s): ratios[k] * totals[label]
               for label in labels for k, s in enumerate(SPLITS)}
    counts = {(label, s): 0 for label in labels for s in SPLITS}
    assignment: dict = {}

    def place(subject_id: str, split: str):
        assignment[subject_id] = split
        for row in by_subject[subject_id]:
            counts[(row.label, split)] += 1

    for label in labels:
        for split in SPLITS:
            if any(assignment.get(s) == split for s in class_subjects[label]):
                continue
            free = sorted(s for s in class_subjects[label] if s not in assignment)
            if free:
                place(free[int(rng.integers(0, len(free)))], split)

    remaining = sorted(s for s in by_subject if s not in assignment)
    perm = rng.permutation(len(remaining))
    remaining = [remaining[i] for i in perm]
    remaining.sort(key=lambda s: -len(by_subject[s]))  # stable; ties stay shuffled
    for subject_id in remaining:
        tally = Counter(r.label for r in by_subject[subject_id])
        primary = max(sorted(tally), key=lambda L: tally[L])
        place(subject_id, max(
            SPLITS, key=lambda s: targets[(primary, s)] - counts[(primary, s)]))

    total = len(manifest.rows)
    realized = {s: sum(counts[(label, s)] for label in labels) / total
                for s in SPLITS}
    return SplitPlan(assignment=assignment, realized_ratios=realized)


def split_clips(manifest: Manifest, ratios=(0.6, 0.2, 0.2),
                seed: int = 0) -> Manifest:
    """Clip-level split for corpora where subjects and classes coincide
    (e.g. a speaker-identification source task). Returns an annotated
    manifest; stratified per class, deterministic in seed."""
    rng = derive_rng(seed, "split-clips")
    by_label: dict = {}
    for r in manifest.rows:
        by_label.setdefault(r.label, []).append(r)
    annotated = {}
    for label in sorted(by_label):
        rows = by_label[label]
        perm = rng.permutation(len(rows))
        n = len(rows)
        n_train = max(1, round(ratios[0] * n))
        n_val = max(1, round(ratios[1] * n))
        for j, i in enumerate(perm):
            split = ("train" if j < n_train
                     else "val" if j < n_train + n_val else "test")
            annotated[id(rows[i])] = split
    rows = [ManifestRow(r.path, r.label, r.subject_id, annotated[id(r)])
            for r in manifest.rows]
    return Manifest(rows=rows, root=manifest.root)


def balanced_sampler(rows: list[ManifestRow], batch_size: int,
                     rng: np.random.Generator, class_names=None):
    """Stream of ceil(n/batch_size) batches; every slot picks a class
    uniformly, then a row of that class uniformly (with replacement).
    Class availability is checked eagerly, before the first batch."""
    by_class: dict = {}
    for r in rows:
        by_class.setdefault(r.label, []).append(r)
    names = sorted(by_class) if class_names is None else list(class_names)
    for name in names:
        if not by_class.get(name):
            raise EmptyClass(f"no rows available for class {name!r}")
    n_batches = math.ceil(len(rows) / batch_size)
    k = len(names)

    def batches():
        for _ in range(n_batches):
            class_picks = rng.integers(0, k, size=batch_size)
            batch = []
            for c in class_picks:
                pool = by_class[names[c]]
                batch.append(pool[int(rng.integers(0, len(pool)))])
            yield batch

    return batches()


def time_shift(clip: AudioClip, rng: np.random.Generator,
               max_shift_s: float = 0.1) -> AudioClip:
    """Shift by U[-max, +max] seconds, zero-filling the vacated end."""
    n = len(clip)
    k = int(round(rng.uniform(-max_shift_s, max_shift_s) * clip.sample_rate))
    out = np.zeros_like(clip.samples)
    if k > 0:
        out[k:] = clip.samples[:n - k]
    elif k < 0:
        out[:n + k] = clip.samples[-k:]
    else:
        out[:] = clip.samples
    return AudioClip(out, clip.sample_rate)


def _load_clips(manifest: Manifest, rows) -> list[AudioClip]:
    return [read_wav(manifest.clip_path(r)) for r in rows]


def _label_indices(rows, class_names) -> np.ndarray:
    index = {name: i for i, name in enumerate(class_names)}
    try:
        return np.array([index[r.label] for r in rows], dtype=np.int64)
    except KeyError as exc:
        raise BadConfig(f"label {exc} not among model classes {class_names}")


def _predict_indices(model, features: np.ndarray, batch_size: int = 100):
    """Argmax predictions for an (N, 40, 101) feature stack."""
    from .model import forward_logits

    preds = []
    for start in range(0, len(features), batch_size):
        logits = forward_logits(model, features[start:start + batch_size])
        preds.append(np.argmax(logits.value, axis=1))
    return np.concatenate(preds) if preds else np.empty(0, dtype=np.int64)


def validation_uar(model, features: np.ndarray, true_idx: np.ndarray,
                   n_classes: int) -> float:
    model.eval()
    pred = _predict_indices(model, features)
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (true_idx, pred), 1)
    return uar_from_confusion(conf)


def train(model, manifest: Manifest, plan: SplitPlan | Manifest,
          config: TrainConfig, verbose: bool = False):
    """Run the SGD schedule; return (model at best epoch, history rows).

    History rows are dicts with epoch, lr, train_loss, val_uar. The model is
    left holding the parameters (and batch-norm statistics) of the epoch
    with the highest validation UAR, earliest epoch winning ties; its meta
    dict records the choice.
    """
    config.validate()
    if model.class_names is None:
        raise BadConfig("model needs class_names to train against a manifest")
    if isinstance(plan, SplitPlan):
        train_rows = plan.rows_for(manifest, "train")
        val_rows = plan.rows_for(manifest, "val")
    else:  # pre-annotated manifest (clip-level splits)
        train_rows = [r for r in plan.rows if r.split == "train"]
        val_rows = [r for r in plan.rows if r.split == "val"]
    if not train_rows or not val_rows:
        raise BadConfig("split produced an empty train or validation set")

    class_names = model.class_names
    k = len(class_names)
    sampler_rng = derive_rng(config.seed, "sampler")
    augment_rng = derive_rng(config.seed, "augment")

    train_clips = {r.path: c for r, c in
                   zip(train_rows, _load_clips(manifest, train_rows))}
    train_targets = {r.path: i for r, i in
                     zip(train_rows, _label_indices(train_rows, class_names))}
    val_feats = np.stack([
        mfcc(c).coeffs.astype(np.float32)
        for c in _load_clips(manifest, val_rows)])
    val_idx = _label_indices(val_rows, class_names)

    opt = SGD(model.parameters(), lr=config.lr_initial, momentum=config.momentum)
    history = []
    best = {"uar": -1.0, "epoch": 0, "state": None}
    for epoch in range(1, config.epochs + 1):
        opt.lr = config.lr_at(epoch)
        model.train()
        losses = []
        for batch in balanced_sampler(train_rows, config.batch_size,
                                      sampler_rng, class_names):
            feats = np.empty((len(batch), 40, 101), dtype=np.float32)
            targets = np.empty(len(batch), dtype=np.int64)
            for i, row in enumerate(batch):
                shifted = time_shift(train_clips[row.path], augment_rng,
                                     config.time_shift_max_s)
                feats[i] = mfcc(shifted).coeffs
                targets[i] = train_targets[row.path]
            logits = model(Tensor(feats[:, None], requires_grad=False))
            loss = multiclass_hinge_loss(logits, targets)
            if not np.isfinite(loss.value):
                raise DivergedLoss(f"loss became {loss.value} at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.value))

        val_uar = validation_uar(model, val_feats, val_idx, k)
        history.append({"epoch": epoch, "lr": opt.lr,
                        "train_loss": float(np.mean(losses)),
                        "val_uar": float(val_uar)})
        if val_uar > best["uar"]:
            best = {"uar": float(val_uar), "epoch": epoch,
                    "state": {name: arr.copy()
                              for name, arr in model.state_arrays()}}
        if verbose and (epoch % 10 == 0 or epoch == 1):
            print(f"  epoch {epoch:3d}  lr {opt.lr:.4g}  "
                  f"loss {history[-1]['train_loss']:.4f}  val UAR {val_uar:.3f}")

    model.load_state(best["state"])
    model.eval()
    model.meta.update(best_epoch=best["epoch"], best_val_uar=best["uar"],
                      train_config=config.to_dict())
    return model, history


HISTORY_HEADER = ["epoch", "lr", "train_loss", "val_uar"]


def write_history(path, history) -> None:
    """Full-precision CSV so identical runs produce identical bytes."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_HEADER)
        for row in history:
            writer.writerow([row["epoch"], repr(row["lr"]),
                             repr(row["train_loss"]), repr(row["val_uar"])])


def read_history(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != HISTORY_HEADER:
            raise BadConfig(f"{path}: unexpected history header {header}")
        return [{"epoch": int(r[0]), "lr": float(r[1]),
                 "train_loss": float(r[2]), "val_uar": float(r[3])}
                for r in reader if r]
