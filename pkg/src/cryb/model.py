"""res8 residual network, its checkpoint container, and transfer loading.

The network maps a 40x101 coefficient matrix to K logits:

    conv_in(1->45) -> BN -> ReLU -> avg_pool 4x3
    -> 6 x [ y = ReLU(x + BN(conv(x))) ]
    -> conv_out(45->45) -> BN -> ReLU -> global_avg_pool -> linear(45->K)

The 45-dim global-average-pooled vector doubles as the embedding used by the
principal-component analysis. Checkpoints are a single binary file: an 8-byte
magic, a little-endian uint32 header length, a JSON header mapping array
names to shapes (plus config and provenance), and the raw float32
little-endian payload concatenated in header order. Transfer loading rebuilds
the network for a new class count, copies every non-head array bitwise from a
source checkpoint, and draws a fresh Glorot head.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (ArchMismatch, BadConfig, CorruptCheckpoint, ShapeMismatch)
from .features import MfccMatrix
from .nncore import (BatchNorm2d, Conv2d, Linear, Module, Tensor, avg_pool,
                     global_avg_pool)

CHECKPOINT_MAGIC = b"CRYB0001"
HEAD_PREFIX = "head."


@dataclass(frozen=True)
class Res8Config:
    n_classes: int
    n_channels: int = 45
    n_res_blocks: int = 6
    input_shape: tuple = (1, 40, 101)

    def validate(self) -> "Res8Config":
        if self.n_classes < 2:
            raise BadConfig(f"n_classes {self.n_classes} < 2")
        if self.n_channels < 1 or self.n_res_blocks < 1:
            raise BadConfig("channel and block counts must be positive")
        if len(self.input_shape) != 3 or self.input_shape[0] != 1:
            raise BadConfig(f"input_shape {self.input_shape} must be (1, H, W)")
        return self

    def to_dict(self) -> dict:
        return {"n_classes": self.n_classes, "n_channels": self.n_channels,
                "n_res_blocks": self.n_res_blocks,
                "input_shape": list(self.input_shape)}

    @classmethod
    def from_dict(cls, d: dict) -> "Res8Config":
        try:
            return cls(n_classes=int(d["n_classes"]),
                       n_channels=int(d["n_channels"]),
                       n_res_blocks=int(d["n_res_blocks"]),
                       input_shape=tuple(d["input_shape"])).validate()
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptCheckpoint(f"bad config in header: {exc}") from exc


class ResBlock(Module):
    """Shortcut block y = ReLU(x + BN(conv(x)))."""

    def __init__(self, channels: int, rng: np.random.Generator, name: str):
        self.conv = Conv2d(channels, channels, rng, name=f"{name}.conv")
        self.bn = BatchNorm2d(channels, name=f"{name}.bn")

    def __call__(self, x: Tensor) -> Tensor:
        return (x + self.bn(self.conv(x))).relu()


class Res8(Module):
    def __init__(self, config: Res8Config, rng: np.random.Generator,
                 class_names=None):
        config.validate()
        if class_names is not None and len(class_names) != config.n_classes:
            raise BadConfig("class_names length does not match n_classes")
        self.config = config
        self.class_names = list(class_names) if class_names else None
        self.meta: dict = {}
        c = config.n_channels
        self.conv_in = Conv2d(1, c, rng, name="conv_in")
        self.bn_in = BatchNorm2d(c, name="bn_in")
        self.blocks = [ResBlock(c, rng, name=f"block{i}")
                       for i in range(config.n_res_blocks)]
        self.conv_out = Conv2d(c, c, rng, name="conv_out")
        self.bn_out = BatchNorm2d(c, name="bn_out")
        self.head = Linear(c, config.n_classes, rng, name="head")

    def _batchnorms(self) -> list[BatchNorm2d]:
        return [self.bn_in] + [b.bn for b in self.blocks] + [self.bn_out]

    def train(self):
        for bn in self._batchnorms():
            bn.train()

    def eval(self):
        for bn in self._batchnorms():
            bn.eval()

    def _check_input(self, x: Tensor):
        expect = self.config.input_shape
        if len(x.shape) != 4 or tuple(x.shape[1:]) != tuple(expect):
            raise ShapeMismatch(
                f"expected input (N, {expect[0]}, {expect[1]}, {expect[2]}), "
                f"got {tuple(x.shape)}")

    def trunk(self, x: Tensor) -> Tensor:
        """Everything up to (and including) global average pooling."""
        self._check_input(x)
        h = self.bn_in(self.conv_in(x)).relu()
        h = avg_pool(h, 4, 3)
        for block in self.blocks:
            h = block(h)
        h = self.bn_out(self.conv_out(h)).relu()
        return global_avg_pool(h)

    def __call__(self, x: Tensor) -> Tensor:
        return self.head(self.trunk(x))

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All persisted arrays: parameters plus BN running statistics,
        in a fixed architecture order."""
        items = [(p.name, p.value) for p in self.parameters()]
        for bn in self._batchnorms():
            items.append((f"{bn.name}.running_mean", bn.running_mean))
            items.append((f"{bn.name}.running_var", bn.running_var))
        return items

    def load_state(self, arrays: dict):
        own = self.state_arrays()
        for name, _ in own:
            if name not in arrays:
                raise ArchMismatch(f"checkpoint missing array {name!r}")
        params = {p.name: p for p in self.parameters()}
        for name, value in arrays.items():
            if name in params:
                target = params[name]
                if target.value.shape != value.shape:
                    raise ArchMismatch(
                        f"{name}: shape {value.shape} != {target.value.shape}")
                target.value = value.copy()
                target.momentum_buf = np.zeros_like(value)
            elif name.endswith((".running_mean", ".running_var")):
                bn_name, attr = name.rsplit(".", 1)
                bn = next((b for b in self._batchnorms() if b.name == bn_name),
                          None)
                if bn is None:
                    raise ArchMismatch(f"no batchnorm layer named {bn_name!r}")
                if getattr(bn, attr).shape != value.shape:
                    raise ArchMismatch(f"{name}: wrong shape {value.shape}")
                setattr(bn, attr, value.copy())
            else:
                raise ArchMismatch(f"unexpected array {name!r} in checkpoint")


def build_res8(config: Res8Config, rng: np.random.Generator,
               class_names=None) -> Res8:
    return Res8(config, rng, class_names=class_names)


def parameter_count(model: Res8) -> int:
    return sum(p.value.size for p in model.parameters())


def forward_logits(model: Res8, batch: np.ndarray) -> Tensor:
    """(N, 40, 101) coefficient batch -> (N, K) logit Tensor."""
    batch = np.asarray(batch)
    if batch.ndim != 3:
        raise ShapeMismatch(f"expected (N, H, W) batch, got {batch.shape}")
    x = Tensor(batch[:, None, :, :].astype(np.float32), requires_grad=False)
    return model(x)


def predict_labels(model: Res8, feature_stack: np.ndarray,
                   batch_size: int = 100) -> list[str]:
    """Argmax class names for an (N, 40, 101) stack, evaluated in chunks."""
    if not model.class_names:
        raise ArchMismatch("model carries no class names")
    names = []
    for start in range(0, len(feature_stack), batch_size):
        logits = forward_logits(model, feature_stack[start:start + batch_size])
        names.extend(model.class_names[i]
                     for i in np.argmax(logits.value, axis=1))
    return names


def forward_embed(model: Res8, mfcc) -> np.ndarray:
    """Embedding for one coefficient matrix: the pooled pre-head vector."""
    mat = mfcc.coeffs if isinstance(mfcc, MfccMatrix) else np.asarray(mfcc)
    if mat.shape != tuple(model.config.input_shape[1:]):
        raise ShapeMismatch(f"expected {model.config.input_shape[1:]}, "
                            f"got {mat.shape}")
    x = Tensor(mat[None, None].astype(np.float32), requires_grad=False)
    return model.trunk(x).value[0].copy()


def _write_container(path, magic: bytes, header: dict,
                     arrays: list[tuple[str, np.ndarray]]):
    header = dict(header)
    header["arrays"] = {name: list(arr.shape) for name, arr in arrays}
    blob = json.dumps(header, sort_keys=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_container(path, magic: bytes) -> tuple[dict, dict]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(magic) + 4 or raw[:len(magic)] != magic:
        raise CorruptCheckpoint(f"{path}: bad magic")
    (hlen,) = struct.unpack_from("<I", raw, len(magic))
    start = len(magic) + 4
    if start + hlen > len(raw):
        raise CorruptCheckpoint(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
        shapes = {name: tuple(shape) for name, shape in header["arrays"].items()}
    except (ValueError, KeyError, AttributeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header: {exc}") from exc
    payload = raw[start + hlen:]
    need = sum(4 * int(np.prod(s, dtype=np.int64)) if s else 4
               for s in shapes.values())
    if len(payload) != need:
        raise CorruptCheckpoint(
            f"{path}: payload is {len(payload)} bytes, header implies {need}")
    arrays = {}
    offset = 0
    for name, shape in shapes.items():
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arrays[name] = np.frombuffer(
            payload, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
        offset += 4 * count
    return header, arrays


def save_checkpoint(model: Res8, path, source_task: str = "",
                    seed=None, metrics=None):
    header = {
        "config": model.config.to_dict(),
        "source_task": source_task or model.meta.get("source_task", ""),
        "seed": model.meta.get("seed") if seed is None else seed,
        "metrics": metrics if metrics is not None else model.meta.get("metrics", {}),
        "class_names": model.class_names,
        "block_form": "single conv + batchnorm inside the shortcut sum",
    }
    _write_container(path, CHECKPOINT_MAGIC, header, model.state_arrays())


def load_checkpoint(path) -> Res8:
    header, arrays = _read_container(path, CHECKPOINT_MAGIC)
    config = Res8Config.from_dict(header.get("config", {}))
    model = Res8(config, np.random.default_rng(0),
                 class_names=header.get("class_names"))
    try:
        model.load_state(arrays)
    except ArchMismatch as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from exc
    model.meta = {k: header.get(k) for k in ("source_task", "seed", "metrics")}
    return model


def read_checkpoint_header(path) -> dict:
    header, _ = _read_container(path, CHECKPOINT_MAGIC)
    return header


def transfer_load(target_config: Res8Config, source_ckpt_path,
                  rng: np.random.Generator, class_names=None) -> Res8:
    """Target-task model seeded from a source checkpoint.

    Every array except the head is copied bitwise; the head is freshly
    Glorot-initialized for the target class count. The whole network stays
    trainable.
    """
    header, arrays = _read_container(source_ckpt_path, CHECKPOINT_MAGIC)
    source_config = Res8Config.from_dict(header.get("config", {}))
    target_config.validate()
    if (source_config.n_channels != target_config.n_channels
            or source_config.n_res_blocks != target_config.n_res_blocks
            or tuple(source_config.input_shape) != tuple(target_config.input_shape)):
        raise ArchMismatch(
            f"source architecture {source_config.to_dict()} incompatible "
            f"with target {target_config.to_dict()}")
    model = Res8(target_config, rng, class_names=class_names)
    non_head = {name: value for name, value in arrays.items()
                if not name.startswith(HEAD_PREFIX)}
    expected = {name for name, _ in model.state_arrays()
                if not name.startswith(HEAD_PREFIX)}
    if set(non_head) != expected:
        missing = sorted(expected - set(non_head))[:3]
        extra = sorted(set(non_head) - expected)[:3]
        raise ArchMismatch(f"array name mismatch (missing {missing}, "
                           f"unexpected {extra})")
    params = {p.name: p for p in model.parameters()}
    for name, value in non_head.items():
        if name in params:
            if params[name].value.shape != value.shape:
                raise ArchMismatch(
                    f"{name}: shape {value.shape} != {params[name].value.shape}")
            params[name].value = value.copy()
        else:
            bn_name, attr = name.rsplit(".", 1)
            bn = next(b for b in model._batchnorms() if b.name == bn_name)
            if getattr(bn, attr).shape != value.shape:
                raise ArchMismatch(f"{name}: wrong shape {value.shape}")
            setattr(bn, attr, value.copy())
    model.meta = {"source_task": header.get("source_task", ""),
                  "transfer_from": str(source_ckpt_path)}
    return model
