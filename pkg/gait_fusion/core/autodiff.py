"""Dense tensors with reverse-mode differentiation.

Each primitive computes its forward value with numpy and, when any input
requires a gradient, attaches a closure mapping the output gradient to input
gradients. ``backward`` walks the recorded graph once in reverse topological
order.
"""

import contextlib
import threading
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..constants import (
    BATCH_NORM_EPS,
    BATCH_NORM_MOMENTUM,
    ERR_SHAPE_MISMATCH,
    FINITE_DIFF_FLOOR,
    LAYER_NORM_EPS,
)
from ..exceptions import ContractError

_state = threading.local()


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the dtype new tensors are created with."""
    previous = default_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A node in the computation graph"""

    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype or default_dtype()))
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.parents: Tuple["Tensor", ...] = ()
        self.backward_fn: Optional[BackwardFn] = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self.parents

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # Operator sugar for the few places it reads better
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _as_tensor(x: Union[Tensor, np.ndarray, float]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.parents = tuple(inputs)
        out.backward_fn = backward_fn
    return out


def _require(condition: bool, what: str, a, b) -> None:
    if not condition:
        raise ContractError(ERR_SHAPE_MISMATCH.format(what, a, b))


class Tape:
    """Recorded primitive applications in topological order."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, seed: np.ndarray) -> None:
        grads: Dict[int, np.ndarray] = {id(self.nodes[-1]): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = np.ascontiguousarray(g) if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def backward(loss: Tensor) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return Tape([])
    tape = Tape.from_output(loss)
    tape.backward(np.ones_like(loss.data))
    return tape


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require(a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0], "matmul", a.shape, b.shape)

    def _backward(g):
        return g @ b.data.T, a.data.T @ g

    return _record(a.data @ b.data, (a, b), _backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """y = x·wᵀ + b for x (N, in), w (out, in), b (out,)."""
    _require(x.data.ndim == 2 and w.data.ndim == 2 and x.shape[1] == w.shape[1], "linear", x.shape, w.shape)
    if b is not None:
        _require(b.shape == (w.shape[0],), "linear bias", b.shape, (w.shape[0],))
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def _backward(g):
        grads = [g @ w.data, g.T @ x.data]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, _backward, "linear")


def pointwise_linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """1x1 convolution over channels of an (N, C, T, V) tensor."""
    _require(x.data.ndim == 4 and w.data.ndim == 2 and x.shape[1] == w.shape[1], "pointwise_linear", x.shape, w.shape)
    _require(b.shape == (w.shape[0],), "pointwise_linear bias", b.shape, (w.shape[0],))
    out = np.einsum("oc,nctv->notv", w.data, x.data, optimize=True) + b.data[None, :, None, None]

    def _backward(g):
        dx = np.einsum("oc,notv->nctv", w.data, g, optimize=True)
        dw = np.einsum("notv,nctv->oc", g, x.data, optimize=True)
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _record(out, (x, w, b), _backward, "pointwise_linear")


def temporal_output_length(t: int, kernel: int, stride: int, padding: int) -> int:
    return (t + 2 * padding - kernel) // stride + 1


def temporal_conv(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Convolution along T, independently per node, with zero padding."""
    _require(x.data.ndim == 4 and w.data.ndim == 3 and x.shape[1] == w.shape[1], "temporal_conv", x.shape, w.shape)
    _require(b.shape == (w.shape[0],), "temporal_conv bias", b.shape, (w.shape[0],))
    kernel = w.shape[2]
    if kernel % 2 != 1:
        raise ContractError(f"temporal kernel must be odd, got {kernel}")
    if stride < 1 or padding < 0:
        raise ContractError("stride must be >= 1 and padding >= 0")
    n, c, t, v = x.shape
    t_out = temporal_output_length(t, kernel, stride, padding)
    if t_out < 1:
        raise ContractError(f"temporal_conv output length {t_out} < 1 for T={t}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (0, 0))) if padding else x.data
    span = stride * (t_out - 1) + 1
    out = np.zeros((n, w.shape[0], t_out, v), dtype=x.data.dtype)
    for j in range(kernel):
        out += np.einsum("oc,nctv->notv", w.data[:, :, j], xp[:, :, j:j + span:stride, :], optimize=True)
    out += b.data[None, :, None, None]

    def _backward(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        for j in range(kernel):
            dw[:, :, j] = np.einsum("notv,nctv->oc", g, xp[:, :, j:j + span:stride, :], optimize=True)
            dxp[:, :, j:j + span:stride, :] += np.einsum("oc,notv->nctv", w.data[:, :, j], g, optimize=True)
        dx = dxp[:, :, padding:padding + t, :] if padding else dxp
        return dx, dw, g.sum(axis=(0, 2, 3))

    return _record(out, (x, w, b), _backward, "temporal_conv")


def graph_mul(x: Tensor, a_hat: Tensor) -> Tensor:
    """y[n,c,t,v] = sum_u x[n,c,t,u] * A_hat[u,v]."""
    v = x.shape[-1] if x.data.ndim == 4 else -1
    _require(x.data.ndim == 4 and a_hat.shape == (v, v), "graph_mul", x.shape, a_hat.shape)
    out = np.einsum("nctu,uv->nctv", x.data, a_hat.data, optimize=True)

    def _backward(g):
        dx = np.einsum("nctv,uv->nctu", g, a_hat.data, optimize=True)
        da = np.einsum("nctu,nctv->uv", x.data, g, optimize=True) if a_hat.requires_grad else None
        return dx, da

    return _record(out, (x, a_hat), _backward, "graph_mul")


class BatchNormState:
    """Running statistics of one batch-norm layer (buffers, not parameters)."""

    def __init__(self, channels: int, momentum: float = BATCH_NORM_MOMENTUM, eps: float = BATCH_NORM_EPS):
        self.running_mean = np.zeros(channels, dtype=default_dtype())
        self.running_var = np.ones(channels, dtype=default_dtype())
        self.momentum = momentum
        self.eps = eps


def _channel_view(arr: np.ndarray, ndim: int) -> np.ndarray:
    shape = [1] * ndim
    shape[1] = -1
    return arr.reshape(shape)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-channel normalization over every axis except axis 1."""
    _require(x.data.ndim >= 2 and gamma.shape == (x.shape[1],) and beta.shape == (x.shape[1],),
             "batch_norm", x.shape, gamma.shape)
    if x.shape[0] == 0:
        raise ContractError("batch_norm on an empty batch")
    axes = tuple(i for i in range(x.data.ndim) if i != 1)
    count = x.data.size // x.shape[1]
    gamma_v = _channel_view(gamma.data, x.data.ndim)
    beta_v = _channel_view(beta.data, x.data.ndim)

    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        x_hat = (x.data - _channel_view(mean, x.data.ndim)) * _channel_view(inv_std, x.data.ndim)
        m = state.momentum
        unbiased = var * count / max(count - 1, 1)
        state.running_mean[:] = (1 - m) * state.running_mean + m * mean
        state.running_var[:] = (1 - m) * state.running_var + m * unbiased
    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        x_hat = (x.data - _channel_view(state.running_mean, x.data.ndim)) * _channel_view(inv_std, x.data.ndim)
    x_hat = x_hat.astype(x.data.dtype, copy=False)
    out = gamma_v * x_hat + beta_v

    def _backward(g):
        dgamma = (g * x_hat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dx_hat = g * gamma_v
        inv = _channel_view(inv_std, x.data.ndim).astype(x.data.dtype)
        if training:
            sum_dx_hat = _channel_view(dx_hat.sum(axis=axes), x.data.ndim)
            sum_dx_hat_xhat = _channel_view((dx_hat * x_hat).sum(axis=axes), x.data.ndim)
            dx = inv / count * (count * dx_hat - sum_dx_hat - x_hat * sum_dx_hat_xhat)
        else:
            dx = dx_hat * inv
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), _backward, "batch_norm")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-row normalization of an (N, D) tensor with a learned affine."""
    _require(x.data.ndim == 2 and x.shape[1] >= 2, "layer_norm", x.shape, "N x D with D >= 2")
    _require(gain.shape == (x.shape[1],) and bias.shape == (x.shape[1],), "layer_norm affine", gain.shape, x.shape)
    d = x.shape[1]
    mean = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean) * inv_std
    out = x_hat * gain.data + bias.data

    def _backward(g):
        dx_hat = g * gain.data
        dx = inv_std / d * (d * dx_hat - dx_hat.sum(axis=1, keepdims=True)
                            - x_hat * (dx_hat * x_hat).sum(axis=1, keepdims=True))
        return dx, (g * x_hat).sum(axis=0), g.sum(axis=0)

    return _record(out, (x, gain, bias), _backward, "layer_norm")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def _backward(g):
        return (g * mask,)

    return _record(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), _backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = x.data
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)

    def _backward(g):
        return (g * out * (1.0 - out),)

    return _record(out, (x,), _backward, "sigmoid")


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)

    def _backward(g):
        return (g * mask,)

    return _record(x.data * mask, (x,), _backward, "dropout")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, "add", a.shape, b.shape)

    def _backward(g):
        return g, g

    return _record(a.data + b.data, (a, b), _backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of equally shaped tensors."""
    _require(a.shape == b.shape, "mul", a.shape, b.shape)

    def _backward(g):
        return g * b.data, g * a.data

    return _record(a.data * b.data, (a, b), _backward, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    def _backward(g):
        return (g * factor,)

    return _record((x.data * factor).astype(x.data.dtype), (x,), _backward, "scale")


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row inner product of two (N, D) tensors -> (N,)."""
    _require(a.data.ndim == 2 and a.shape == b.shape, "row_dot", a.shape, b.shape)

    def _backward(g):
        return g[:, None] * b.data, g[:, None] * a.data

    return _record((a.data * b.data).sum(axis=1), (a, b), _backward, "row_dot")


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of an (N, D) tensor by s[i]."""
    _require(x.data.ndim == 2 and s.shape == (x.shape[0],), "scale_rows", x.shape, s.shape)

    def _backward(g):
        return g * s.data[:, None], (g * x.data).sum(axis=1)

    return _record(x.data * s.data[:, None], (x, s), _backward, "scale_rows")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    for t in tensors[1:]:
        ref = list(tensors[0].shape)
        other = list(t.shape)
        ref[axis] = other[axis] = -1
        _require(ref == other, "concat", tensors[0].shape, t.shape)
    bounds = np.cumsum([0] + sizes)

    def _backward(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))]

    return _record(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), _backward, "concat")


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    original = x.shape

    def _backward(g):
        return (g.reshape(original),)

    return _record(x.data.reshape(shape), (x,), _backward, "reshape")


def transpose(x: Tensor, axes: Tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def _backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return _record(np.ascontiguousarray(x.data.transpose(axes)), (x,), _backward, "transpose")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over (T, V) of an (N, C, T, V) tensor -> (N, C)."""
    _require(x.data.ndim == 4, "global_avg_pool", x.shape, "N x C x T x V")
    n, c, t, v = x.shape

    def _backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (t * v), x.shape).copy(),)

    return _record(x.data.mean(axis=(2, 3)), (x,), _backward, "global_avg_pool")


def sum_all(x: Tensor) -> Tensor:
    def _backward(g):
        return (np.full_like(x.data, g.reshape(())),)

    return _record(np.asarray(x.data.sum()), (x,), _backward, "sum")


def select(x: Tensor, columns: np.ndarray) -> Tensor:
    """Pick x[i, columns[i]] from an (N, K) tensor -> (N,)."""
    columns = np.asarray(columns, dtype=np.int64)
    _require(x.data.ndim == 2 and columns.shape == (x.shape[0],), "select", x.shape, columns.shape)
    rows = np.arange(x.shape[0])

    def _backward(g):
        dx = np.zeros_like(x.data)
        dx[rows, columns] = g
        return (dx,)

    return _record(x.data[rows, columns], (x,), _backward, "select")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, class_weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean negative log-likelihood over the batch (weighted mean with class weights)."""
    labels = np.asarray(labels, dtype=np.int64)
    _require(logits.data.ndim == 2 and labels.shape == (logits.shape[0],), "softmax_cross_entropy",
             logits.shape, labels.shape)
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k})")
    rows = np.arange(labels.size)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    nll = log_z - shifted[rows, labels]
    weights = np.ones(labels.size) if class_weights is None else np.asarray(class_weights)[labels]
    total = weights.sum()
    loss = np.asarray((weights * nll).sum() / total, dtype=logits.data.dtype)

    def _backward(g):
        probs = np.exp(shifted - log_z[:, None])
        probs[rows, labels] -= 1.0
        return ((g * probs * (weights / total)[:, None]).astype(logits.data.dtype),)

    return _record(loss, (logits,), _backward, "softmax_cross_entropy")


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

class ParamStore:
    """Named learnable tensors plus batch-norm buffers."""

    def __init__(self):
        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, BatchNormState] = {}

    def add(self, name: str, data: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self.params:
            raise ContractError(f"duplicate parameter name {name}")
        tensor = Tensor(data, requires_grad=trainable, name=name)
        self.params[name] = tensor
        return tensor

    def add_batch_norm(self, name: str, channels: int) -> BatchNormState:
        if name in self.buffers:
            raise ContractError(f"duplicate buffer name {name}")
        self.add(f"{name}.gamma", np.ones(channels))
        self.add(f"{name}.beta", np.zeros(channels))
        state = BatchNormState(channels)
        self.buffers[name] = state
        return state

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> List[str]:
        return list(self.params)

    def trainable(self) -> Dict[str, Tensor]:
        return {k: t for k, t in self.params.items() if t.requires_grad}

    def is_trainable(self, name: str) -> bool:
        return self.params[name].requires_grad

    def set_trainable(self, prefix: str, flag: bool) -> int:
        """Toggle every parameter whose name starts with ``prefix``; values are untouched."""
        count = 0
        for name, tensor in self.params.items():
            if name.startswith(prefix):
                tensor.requires_grad = flag
                if not flag:
                    tensor.grad = None
                count += 1
        return count

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = np.zeros_like(tensor.data) if tensor.requires_grad else None

    def cast(self, dtype) -> None:
        dtype = np.dtype(dtype)
        for tensor in self.params.values():
            tensor.data = tensor.data.astype(dtype)
            tensor.grad = None
        for state in self.buffers.values():
            state.running_mean = state.running_mean.astype(dtype)
            state.running_var = state.running_var.astype(dtype)

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Parameters and buffers as plain arrays, keyed by checkpoint name."""
        arrays = {name: t.data for name, t in self.params.items()}
        for name, state in self.buffers.items():
            arrays[f"{name}.running_mean"] = state.running_mean
            arrays[f"{name}.running_var"] = state.running_var
        return arrays

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.state_arrays().items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        expected = set(self.state_arrays())
        if set(arrays) != expected:
            missing = sorted(expected - set(arrays))
            extra = sorted(set(arrays) - expected)
            raise ContractError(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, tensor in self.params.items():
            _require(arrays[name].shape == tensor.shape, name, arrays[name].shape, tensor.shape)
            tensor.data = np.asarray(arrays[name], dtype=tensor.data.dtype).copy()
        for name, state in self.buffers.items():
            state.running_mean = np.asarray(arrays[f"{name}.running_mean"], dtype=state.running_mean.dtype).copy()
            state.running_var = np.asarray(arrays[f"{name}.running_var"], dtype=state.running_var.dtype).copy()


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

def finite_diff_gradients(fn: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-3) -> Tuple[np.ndarray, np.ndarray]:
    """(analytic, central-difference) gradients of the scalar ``fn(x)`` with respect to ``x``.

    ``fn`` must be deterministic; ``x.data`` is perturbed in place and restored.
    """
    x.requires_grad = True
    x.grad = None
    backward(fn(x))
    analytic = np.zeros(x.shape) if x.grad is None else np.ascontiguousarray(x.grad, dtype=np.float64)
    x.grad = None

    numeric = np.zeros(x.shape)
    x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = float(fn(x).data)
        flat[i] = original - h
        minus = float(fn(x).data)
        flat[i] = original
        numeric.flat[i] = (plus - minus) / (2 * h)
    return analytic, numeric


def finite_diff_check(fn: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-3) -> float:
    """Max relative error between the analytic gradient and central differences."""
    analytic, numeric = finite_diff_gradients(fn, x, h)
    if not analytic.size:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FINITE_DIFF_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))
