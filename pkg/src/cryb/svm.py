"""RBF-kernel SVM baseline trained with sequential minimal optimization.

Features are the flattened 40x101 coefficient matrices (4040 dims),
z-scored with training-set statistics. The dual problem is solved by SMO
with maximal-violating-pair working-set selection: at each step the pair
that most violates the KKT conditions is updated analytically, until the
violation gap falls under tolerance. Class imbalance is handled through
per-class box constraints C_i = C * w(class of i), mirroring the balanced
sampling used for the neural model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (BadConfig, CorruptCheckpoint, ShapeMismatch, SingleClass)

SVM_MAGIC = b"CRYSVM01"
STD_FLOOR = 1e-8
DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_SCALE_GRID = (0.1, 1.0, 10.0)  # divided by feature dim


def standardize_fit(x_train: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and (floored) standard deviation of training rows."""
    x_train = np.asarray(x_train, dtype=np.float64)
    if x_train.ndim != 2 or x_train.shape[0] < 2:
        raise BadConfig(f"need at least 2 training rows, got {x_train.shape}")
    means = x_train.mean(axis=0)
    stds = np.maximum(x_train.std(axis=0), STD_FLOOR)
    return means, stds


def standardize_apply(x: np.ndarray, means: np.ndarray,
                      stds: np.ndarray) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - means) / stds


def rbf_kernel(u: np.ndarray, v: np.ndarray, gamma: float) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeMismatch(f"kernel operands {u.shape} vs {v.shape}")
    if gamma <= 0:
        raise BadConfig(f"gamma must be positive, got {gamma}")
    d = u - v
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_gram(x: np.ndarray, z: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * squared distances) between all row pairs of x and z."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    sq = (np.sum(x * x, axis=1)[:, None] + np.sum(z * z, axis=1)[None, :]
          - 2.0 * (x @ z.T))
    return np.exp(-gamma * np.maximum(sq, 0.0))


@dataclass
class SvmModel:
    support: np.ndarray        # (n_sv, d) standardized support vectors
    dual_coef: np.ndarray      # (n_sv,) alpha_i * y_i
    bias: float
    gamma: float
    c: float
    class_weights: tuple       # (w_pos, w_neg)
    means: np.ndarray
    stds: np.ndarray
    converged: bool = True
    pos_label: str = ""
    neg_label: str = ""
    metrics: dict | None = None

    def decision(self, x_raw: np.ndarray) -> np.ndarray:
        """Signed distances for raw (unstandardized) feature rows."""
        x = standardize_apply(np.atleast_2d(x_raw), self.means, self.stds)
        k = rbf_gram(self.support, x, self.gamma)
        return self.dual_coef @ k + self.bias

    def predict(self, x_raw: np.ndarray) -> np.ndarray:
        """+1/-1 per row; ties on the boundary go to +1."""
        return np.where(self.decision(x_raw) >= 0.0, 1, -1)

    def predict_labels(self, x_raw: np.ndarray) -> list[str]:
        if not self.pos_label or not self.neg_label:
            raise BadConfig("model has no class labels attached; set "
                            "pos_label and neg_label first")
        return [self.pos_label if s > 0 else self.neg_label
                for s in self.predict(x_raw)]


def dual_objective(alpha: np.ndarray, y: np.ndarray, gram: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ gram @ ay)


def smo_train(x: np.ndarray, y: np.ndarray, c: float, gamma: float,
              class_weights=(1.0, 1.0), tol: float = 1e-3,
              max_iter: int = 100_000, standardized: bool = False,
              precomputed_gram: np.ndarray | None = None) -> SvmModel:
    """Solve the soft-margin dual for labels y in {-1, +1}.

    class_weights scales the box constraint per class: C_i = c * w_pos for
    positive rows and c * w_neg for negative ones. Stops when the maximal
    KKT violation gap drops to tol; if max_iter is exhausted first, the
    returned model carries converged=False.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ShapeMismatch(f"X {x.shape} incompatible with y {y.shape}")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClass("training rows must include both classes")
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise BadConfig("labels must be -1 or +1")
    if c <= 0 or gamma <= 0 or min(class_weights) <= 0:
        raise BadConfig("C, gamma, and class weights must be positive")

    if standardized:
        means = np.zeros(x.shape[1])
        stds = np.ones(x.shape[1])
        xs = x
    else:
        means, stds = standardize_fit(x)
        xs = standardize_apply(x, means, stds)

    n = len(y)
    gram = precomputed_gram if precomputed_gram is not None \
        else rbf_gram(xs, xs, gamma)
    w_pos, w_neg = class_weights
    box = np.where(y > 0, c * w_pos, c * w_neg)
    alpha = np.zeros(n)
    u = np.zeros(n)              # sum_j alpha_j y_j K_ij, bias-free margins
    converged = False
    for _ in range(max_iter):
        e = u - y
        up_mask = ((y > 0) & (alpha < box)) | ((y < 0) & (alpha > 0))
        low_mask = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < box))
        i = int(np.flatnonzero(up_mask)[np.argmin(e[up_mask])])
        j = int(np.flatnonzero(low_mask)[np.argmax(e[low_mask])])
        if e[j] - e[i] <= tol:
            converged = True
            break
        eta = gram[i, i] + gram[j, j] - 2.0 * gram[i, j]
        if eta <= 1e-12:
            eta = 1e-12
        # analytic optimum along the feasible segment, then box clipping
        if y[i] != y[j]:
            lo = max(0.0, alpha[j] - alpha[i])
            hi = min(box[j], box[i] + alpha[j] - alpha[i])
        else:
            lo = max(0.0, alpha[i] + alpha[j] - box[i])
            hi = min(box[j], alpha[i] + alpha[j])
        a_j = alpha[j] + y[j] * (e[i] - e[j]) / eta
        a_j = min(max(a_j, lo), hi)
        a_i = alpha[i] + y[i] * y[j] * (alpha[j] - a_j)
        u += (a_i - alpha[i]) * y[i] * gram[i] + (a_j - alpha[j]) * y[j] * gram[j]
        alpha[i], alpha[j] = a_i, a_j

    e = u - y
    free = (alpha > 1e-9) & (alpha < box - 1e-9)
    if np.any(free):
        bias = float(np.mean(-e[free]))
    else:
        up_mask = ((y > 0) & (alpha < box)) | ((y < 0) & (alpha > 0))
        low_mask = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < box))
        b_up = np.min(e[up_mask]) if np.any(up_mask) else 0.0
        b_low = np.max(e[low_mask]) if np.any(low_mask) else 0.0
        bias = float(-(b_up + b_low) / 2.0)

    sv = alpha > 1e-9
    return SvmModel(
        support=xs[sv].copy(), dual_coef=(alpha * y)[sv], bias=bias,
        gamma=gamma, c=c, class_weights=(float(w_pos), float(w_neg)),
        means=means, stds=stds, converged=converged)


def class_weights_from_counts(n_pos: int, n_neg: int) -> tuple[float, float]:
    """Inverse-frequency weights normalized so a balanced set gets (1, 1)."""
    n = n_pos + n_neg
    return n / (2.0 * n_pos), n / (2.0 * n_neg)


def svm_grid_search(x_train, y_train, x_val, y_val, c_grid=DEFAULT_C_GRID,
                    gamma_grid=None, class_weights=(1.0, 1.0),
                    tol: float = 1e-3):
    """Exhaustive (C, gamma) search scored by validation UAR.

    Ties go to the smaller C, then the smaller gamma. Returns
    (best model, best C, best gamma, results) where results is one dict
    per grid point.
    """
    from .evaluation import uar_from_confusion

    x_train = np.asarray(x_train, dtype=np.float64)
    d = x_train.shape[1]
    if gamma_grid is None:
        gamma_grid = tuple(s / d for s in DEFAULT_GAMMA_SCALE_GRID)
    means, stds = standardize_fit(x_train)
    xs_train = standardize_apply(x_train, means, stds)
    xs_val = standardize_apply(x_val, means, stds)
    y_val = np.asarray(y_val)

    best = None
    results = []
    for gamma in sorted(gamma_grid):
        gram = rbf_gram(xs_train, xs_train, gamma)
        for c in sorted(c_grid):
            model = smo_train(xs_train, y_train, c, gamma,
                              class_weights=class_weights, tol=tol,
                              standardized=True, precomputed_gram=gram)
            decision = (model.dual_coef @ rbf_gram(model.support, xs_val, gamma)
                        + model.bias)
            pred = np.where(decision >= 0.0, 1, -1)
            conf = np.zeros((2, 2), dtype=np.int64)
            for t, p in zip(y_val, pred):
                conf[0 if t > 0 else 1, 0 if p > 0 else 1] += 1
            val_uar = uar_from_confusion(conf)
            results.append({"C": c, "gamma": gamma, "val_uar": val_uar,
                            "n_support": int(len(model.dual_coef)),
                            "converged": model.converged})
            key = (val_uar, -c, -gamma)
            if best is None or key > best[0]:
                model.means, model.stds = means, stds
                best = (key, model, c, gamma)
    _, model, c, gamma = best
    return model, c, gamma, results


def features_from_mfccs(matrices) -> np.ndarray:
    """Flatten (40, 101) coefficient matrices into 4040-dim rows."""
    return np.stack([np.asarray(m.coeffs if hasattr(m, "coeffs") else m)
                     .reshape(-1) for m in matrices])


def save_svm(model: SvmModel, path, class_names=None, metrics=None) -> None:
    header = {
        "config": {"gamma": model.gamma, "C": model.c,
                   "class_weights": list(model.class_weights),
                   "converged": model.converged,
                   "pos_label": model.pos_label,
                   "neg_label": model.neg_label},
        "metrics": metrics or model.metrics or {},
        "class_names": class_names,
        "arrays": {},
    }
    arrays = [("support", model.support), ("dual_coef", model.dual_coef),
              ("bias", np.array([model.bias])), ("means", model.means),
              ("stds", model.stds)]
    header["arrays"] = {name: list(np.asarray(a).shape) for name, a in arrays}
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(SVM_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_svm(path) -> SvmModel:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:8] != SVM_MAGIC:
        raise CorruptCheckpoint(f"{path}: bad SVM magic")
    (hlen,) = struct.unpack_from("<I", raw, 8)
    if 12 + hlen > len(raw):
        raise CorruptCheckpoint(f"{path}: truncated header")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        shapes = {k: tuple(v) for k, v in header["arrays"].items()}
        config = header["config"]
    except (ValueError, KeyError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header: {exc}") from exc
    payload = raw[12 + hlen:]
    need = sum(8 * int(np.prod(s, dtype=np.int64)) for s in shapes.values())
    if len(payload) != need:
        raise CorruptCheckpoint(f"{path}: payload size mismatch")
    arrays = {}
    offset = 0
    for name, shape in shapes.items():
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=count,
                                     offset=offset).reshape(shape).copy()
        offset += 8 * count
    model = SvmModel(
        support=arrays["support"], dual_coef=arrays["dual_coef"],
        bias=float(arrays["bias"][0]), gamma=float(config["gamma"]),
        c=float(config["C"]), class_weights=tuple(config["class_weights"]),
        means=arrays["means"], stds=arrays["stds"],
        converged=bool(config.get("converged", True)),
        pos_label=config.get("pos_label", ""),
        neg_label=config.get("neg_label", ""),
        metrics=header.get("metrics"))
    return model
