"""Reverse-mode automatic differentiation on numpy arrays, plus the layers
needed for a small residual CNN.

A Tensor wraps one ndarray together with a closure that, given the tensor's
gradient, accumulates gradients into its parents. backward() topologically
sorts the graph and runs the closures in reverse. Everything runs in float32
by default; gradient-checking code can build float64 graphs by passing
float64 arrays in, since ops inherit the dtype of their inputs.

Conv2d is expressed with im2col so both passes ride on matrix products:
forward is one (N*H*W, C*9) @ (C*9, C_out) product, backward is two products
plus a nine-slice scatter-add back onto the padded input.
"""

from __future__ import annotations

import numpy as np

from .errors import BadClassIndex, BadShape, NoForwardRecorded, ShapeMismatch


class Tensor:
    """Node in the computation graph: value, gradient, and backward closure."""

    __slots__ = ("value", "grad", "_backward_fn", "_parents", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=True):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self):
        if self.value.size != 1:
            raise BadShape("backward() expects a scalar loss tensor")
        if not self._parents and self._backward_fn is None:
            raise NoForwardRecorded(
                "backward() called on a tensor that no recorded op produced")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- elementwise / reduction ops ------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(
            np.asarray(other, dtype=self.dtype), requires_grad=False)
        if self.shape != other.shape and other.value.size != 1:
            raise ShapeMismatch(f"add shapes {self.shape} vs {other.shape}")
        out = Tensor(self.value + other.value, parents=(self, other))

        def _backward(g):
            self._accumulate(g)
            other._accumulate(g if other.shape == g.shape else np.sum(g))

        out._backward_fn = _backward
        return out

    def __mul__(self, scalar: float):
        out = Tensor(self.value * scalar, parents=(self,))
        out._backward_fn = lambda g: self._accumulate(g * scalar)
        return out

    def relu(self):
        mask = self.value > 0
        out = Tensor(np.where(mask, self.value, 0), parents=(self,))
        out._backward_fn = lambda g: self._accumulate(g * mask)
        return out

    def reshape(self, *shape):
        out = Tensor(self.value.reshape(*shape), parents=(self,))
        out._backward_fn = lambda g: self._accumulate(g.reshape(self.shape))
        return out

    def matmul(self, other: "Tensor"):
        out = Tensor(self.value @ other.value, parents=(self, other))

        def _backward(g):
            self._accumulate(g @ other.value.T)
            other._accumulate(self.value.T @ g)

        out._backward_fn = _backward
        return out


class Parameter(Tensor):
    """Named leaf tensor with a momentum buffer for SGD."""

    __slots__ = ("name", "momentum_buf", "frozen")

    def __init__(self, value, name: str, frozen: bool = False):
        super().__init__(np.asarray(value), parents=(), backward_fn=None)
        self.name = name
        self.momentum_buf = np.zeros_like(self.value)
        self.frozen = frozen


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator,
                   dtype=np.float32) -> np.ndarray:
    """U(-k, k) with k = sqrt(6 / (fan_in + fan_out))."""
    k = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-k, k, size=shape).astype(dtype)


class Module:
    """Minimal layer base: recursive parameter discovery by attribute walk."""

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for attr in vars(self).values():
            if isinstance(attr, Parameter):
                params.append(attr)
            elif isinstance(attr, Module):
                params.extend(attr.parameters())
            elif isinstance(attr, (list, tuple)):
                for item in attr:
                    if isinstance(item, Module):
                        params.extend(item.parameters())
        return params

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def _im2col(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) zero-padded by 1 -> (N*H*W, C*9) patch matrix."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, h, w), dtype=x.dtype)
    for idx in range(9):
        di, dj = divmod(idx, 3)
        cols[:, :, idx] = xp[:, :, di:di + h, dj:dj + w]
    # (N, H, W, C, 9) -> rows ordered by output pixel
    return cols.transpose(0, 3, 4, 1, 2).reshape(n * h * w, c * 9)


def _col2im(cols: np.ndarray, x_shape) -> np.ndarray:
    """Adjoint of _im2col: scatter patch-gradient rows back onto the input."""
    n, c, h, w = x_shape
    cols = cols.reshape(n, h, w, c, 9).transpose(0, 3, 4, 1, 2)
    xp = np.zeros((n, c, h + 2, w + 2), dtype=cols.dtype)
    for idx in range(9):
        di, dj = divmod(idx, 3)
        xp[:, :, di:di + h, dj:dj + w] += cols[:, :, idx]
    return xp[:, :, 1:h + 1, 1:w + 1]


class Conv2d(Module):
    """3x3 convolution, stride 1, zero padding 1 (shape preserving)."""

    def __init__(self, in_channels: int, out_channels: int,
                 rng: np.random.Generator, name: str, bias: bool = True):
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = in_channels * 9
        fan_out = out_channels * 9
        self.weight = Parameter(
            glorot_uniform((out_channels, in_channels, 3, 3), fan_in, fan_out, rng),
            name=f"{name}.weight")
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32),
                              name=f"{name}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.in_channels:
            raise ShapeMismatch(f"conv expects {self.in_channels} channels, got {c}")
        dtype = x.dtype
        cols = _im2col(x.value)
        w_mat = self.weight.value.reshape(self.out_channels, -1).T.astype(dtype)
        out_val = cols @ w_mat
        if self.bias is not None:
            out_val = out_val + self.bias.value.astype(dtype)
        out_val = out_val.reshape(n, h, w, self.out_channels).transpose(0, 3, 1, 2)
        parents = (x, self.weight) + ((self.bias,) if self.bias is not None else ())
        out = Tensor(out_val, parents=parents)

        def _backward(g):
            g_rows = g.transpose(0, 2, 3, 1).reshape(n * h * w, self.out_channels)
            if self.bias is not None and self.bias.requires_grad:
                self.bias._accumulate(g_rows.sum(axis=0).astype(self.bias.dtype))
            if self.weight.requires_grad:
                gw = (cols.T @ g_rows).T.reshape(self.weight.shape)
                self.weight._accumulate(gw.astype(self.weight.dtype))
            if x.requires_grad:
                x._accumulate(_col2im(g_rows @ w_mat.T, x.shape))

        out._backward_fn = _backward
        return out


class BatchNorm2d(Module):
    """Per-channel batch normalization over (N, H, W).

    Training mode normalizes by batch statistics and updates running
    estimates with momentum 0.1 (running variance uses the unbiased batch
    variance). Eval mode normalizes by the running estimates.
    """

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, channels: int, name: str):
        self.channels = channels
        self.name = name
        self.gamma = Parameter(np.ones(channels, dtype=np.float32),
                               name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels, dtype=np.float32),
                              name=f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.training = True

    def __call__(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.channels:
            raise ShapeMismatch(f"batchnorm expects {self.channels} channels, got {c}")
        dtype = x.dtype
        m = n * h * w
        if self.training:
            mean = x.value.mean(axis=(0, 2, 3))
            var = x.value.var(axis=(0, 2, 3))
            if m > 1:
                unbiased = var * (m / (m - 1))
            else:
                unbiased = var
            self.running_mean = ((1 - self.MOMENTUM) * self.running_mean
                                 + self.MOMENTUM * mean.astype(np.float32))
            self.running_var = ((1 - self.MOMENTUM) * self.running_var
                                + self.MOMENTUM * unbiased.astype(np.float32))
        else:
            mean = self.running_mean.astype(dtype)
            var = self.running_var.astype(dtype)

        inv_std = 1.0 / np.sqrt(var + self.EPS)
        x_hat = (x.value - mean[:, None, None]) * inv_std[:, None, None]
        gamma = self.gamma.value.astype(dtype)
        out_val = gamma[:, None, None] * x_hat + self.beta.value.astype(dtype)[:, None, None]
        out = Tensor(out_val, parents=(x, self.gamma, self.beta))
        training = self.training

        def _backward(g):
            if self.beta.requires_grad:
                self.beta._accumulate(g.sum(axis=(0, 2, 3)).astype(self.beta.dtype))
            if self.gamma.requires_grad:
                self.gamma._accumulate(
                    (g * x_hat).sum(axis=(0, 2, 3)).astype(self.gamma.dtype))
            if not x.requires_grad:
                return
            gxh = g * gamma[:, None, None]
            if training:
                # batch statistics depend on x, so the full Jacobian applies
                sum_g = gxh.sum(axis=(0, 2, 3), keepdims=True)
                sum_gx = (gxh * x_hat).sum(axis=(0, 2, 3), keepdims=True)
                gx = (inv_std[:, None, None] / m) * (
                    m * gxh - sum_g - x_hat * sum_gx)
            else:
                gx = gxh * inv_std[:, None, None]
            x._accumulate(gx)

        out._backward_fn = _backward
        return out

    def eval(self):
        self.training = False

    def train(self):
        self.training = True


def avg_pool(x: Tensor, pool_h: int, pool_w: int) -> Tensor:
    """Non-overlapping average pooling; trailing rows/cols that do not fill
    a whole window are dropped."""
    n, c, h, w = x.shape
    oh, ow = h // pool_h, w // pool_w
    if oh == 0 or ow == 0:
        raise ShapeMismatch(f"pool {pool_h}x{pool_w} larger than input {h}x{w}")
    trimmed = x.value[:, :, :oh * pool_h, :ow * pool_w]
    out_val = trimmed.reshape(n, c, oh, pool_h, ow, pool_w).mean(axis=(3, 5))
    out = Tensor(out_val, parents=(x,))
    scale = 1.0 / (pool_h * pool_w)

    def _backward(g):
        gx = np.zeros_like(x.value)
        expanded = np.broadcast_to(
            g[:, :, :, None, :, None] * scale,
            (n, c, oh, pool_h, ow, pool_w),
        ).reshape(n, c, oh * pool_h, ow * pool_w)
        gx[:, :, :oh * pool_h, :ow * pool_w] = expanded
        x._accumulate(gx)

    out._backward_fn = _backward
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    n, c, h, w = x.shape
    out = Tensor(x.value.mean(axis=(2, 3)), parents=(x,))
    scale = 1.0 / (h * w)

    def _backward(g):
        x._accumulate(np.broadcast_to(
            g[:, :, None, None] * scale, x.shape).astype(g.dtype))

    out._backward_fn = _backward
    return out


class Linear(Module):
    """Dense layer y = x W^T + b."""

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, name: str):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(
            glorot_uniform((out_features, in_features), in_features, out_features, rng),
            name=f"{name}.weight")
        self.bias = Parameter(np.zeros(out_features, dtype=np.float32),
                              name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeMismatch(f"linear expects {self.in_features} features, "
                           f"got {x.shape[-1]}")
        dtype = x.dtype
        w = self.weight.value.astype(dtype)
        b = self.bias.value.astype(dtype)
        out = Tensor(x.value @ w.T + b, parents=(x, self.weight, self.bias))

        def _backward(g):
            if self.bias.requires_grad:
                self.bias._accumulate(g.sum(axis=0).astype(self.bias.dtype))
            if self.weight.requires_grad:
                self.weight._accumulate((g.T @ x.value).astype(self.weight.dtype))
            if x.requires_grad:
                x._accumulate(g @ w)

        out._backward_fn = _backward
        return out


def multiclass_hinge_loss(scores: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over the batch of sum_{j != y} max(0, 1 + s_j - s_y)."""
    s = scores.value
    n, k = s.shape
    targets = np.asarray(targets)
    if targets.shape != (n,):
        raise ShapeMismatch(f"targets shape {targets.shape} does not match batch {n}")
    if targets.min() < 0 or targets.max() >= k:
        raise BadClassIndex(f"class labels must lie in 0..{k - 1}")
    rows = np.arange(n)
    correct = s[rows, targets]
    margins = 1.0 + s - correct[:, None]
    margins[rows, targets] = 0.0
    active = margins > 0
    loss_val = np.array(margins[active].sum() / n, dtype=s.dtype)
    out = Tensor(loss_val, parents=(scores,))

    def _backward(g):
        gs = active.astype(s.dtype)
        gs[rows, targets] = -active.sum(axis=1).astype(s.dtype)
        scores._accumulate(gs * (g / n))

    out._backward_fn = _backward
    return out


class SGD:
    """Stateful SGD with classical momentum.

    buf <- momentum * buf + grad; value <- value - lr * buf. Parameters whose
    frozen flag is set, or whose gradient is absent, are skipped.
    """

    def __init__(self, params: list[Parameter], lr: float, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum

    def step(self):
        for p in self.params:
            if p.frozen or p.grad is None:
                continue
            p.momentum_buf = self.momentum * p.momentum_buf + p.grad
            p.value = p.value - self.lr * p.momentum_buf

    def zero_grad(self):
        for p in self.params:
            p.grad = None
