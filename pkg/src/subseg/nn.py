"""Minimal reverse-mode autodiff core on float64 numpy arrays.

Provides exactly the primitives the segmental models need: a taped Tensor,
elementwise/matmul/log-space ops, an LSTM cell stack, dropout, and Adam with
global-norm clipping and decoupled weight decay. Every op checks shapes and
rejects non-finite outputs; every gradient is checked with op provenance.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Disable taping inside the block (inference mode)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise NumericError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op})"

    # operator sugar; scalars and arrays are wrapped as constant tensors
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    if _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError as e:
        raise NumericError(f"shape mismatch in '{op}': {a.shape} vs {b.shape}") from e


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")
    return _make(
        a.data + b.data,
        "add",
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")
    return _make(
        a.data * b.data,
        "mul",
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, "scale", (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise NumericError(f"shape mismatch in 'matmul': {a.shape} @ {b.shape}")
    return _make(
        a.data @ b.data,
        "matmul",
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return add(matmul(x, w), b)


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))  # stable logistic
    return _make(s, "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make(t, "tanh", (x,), lambda g: (g * (1.0 - t * t),))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, "softplus", (x,), lambda g: (g * sig,))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _make(e, "exp", (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _make(out, "log", (x,), lambda g: (g / x.data,))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, x.data.shape).copy(),)

    return _make(out, "sum", (x,), bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def bwd(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(out, "log_softmax", (x,), bwd)


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    out = (m + np.log(np.exp(x.data - m).sum(axis=axis, keepdims=True))).squeeze(axis)
    sm = np.exp(x.data - np.expand_dims(out, axis))

    def bwd(g):
        return (np.expand_dims(g, axis) * sm,)

    return _make(out, "logsumexp", (x,), bwd)


def logaddexp(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "logaddexp")
    out = np.logaddexp(a.data, b.data)
    wa = np.exp(a.data - out)
    wb = np.exp(b.data - out)
    return _make(
        out,
        "logaddexp",
        (a, b),
        lambda g: (_unbroadcast(g * wa, a.data.shape), _unbroadcast(g * wb, b.data.shape)),
    )


def stack(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(data, "stack", tuple(tensors), bwd)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for i in range(len(tensors)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return _make(data, "concat", tuple(tensors), bwd)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(x.data.shape),))


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = x.data[..., start:stop]

    def bwd(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return _make(out, "slice_cols", (x,), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    out = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return _make(out, "embedding", (table,), bwd)


def take(x: Tensor, idx) -> Tensor:
    """1-D gather along the leading axis; scatter-add on the way back."""
    idx = np.asarray(idx)
    out = x.data[idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(out, "take", (x,), bwd)


def gather2d(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    out = x.data[rows, cols]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, cols), g)
        return (gx,)

    return _make(out, "gather2d", (x,), bwd)


def cumsum(x: Tensor, axis: int = -1) -> Tensor:
    out = np.cumsum(x.data, axis=axis)

    def bwd(g):
        return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)

    return _make(out, "cumsum", (x,), bwd)


def dropout(
    x: Tensor, rate: float, rng: np.random.Generator | None, training: bool
) -> Tensor:
    """Inverted dropout; identity when rate == 0 or not training."""
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise NumericError(f"dropout rate {rate} outside [0, 1)")
    if rng is None:
        raise NumericError("training-mode dropout needs an rng")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(mask))


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires-grad tensor reachable from `loss`.

    Parameters not reachable from the loss keep grad None (read as zero by
    collect_grads). Non-finite gradients raise with the producing op's name.
    """
    if loss.data.size != 1:
        raise NumericError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("backward on a non-finite loss")
    if not loss.requires_grad:
        return
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient from op '{node.op}'")
            if parent.grad is None:
                parent.grad = g.copy() if g.base is not None else g
            else:
                parent.grad = parent.grad + g


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None


def collect_grads(params: list[Tensor]) -> list[np.ndarray]:
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def uniform_param(rng: np.random.Generator, shape, scale: float = 0.1) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


# ---------------------------------------------------------------------------
# LSTM


class LstmParams:
    """Stacked LSTM cell parameters; gate order [input, forget, cell, output].

    Weights init uniform(-0.1, 0.1), biases zero except forget bias 1.0.
    """

    def __init__(self, input_dim: int, hidden_dim: int, num_layers: int, rng: np.random.Generator):
        if min(input_dim, hidden_dim, num_layers) < 1:
            raise NumericError("LSTM dims and layer count must be >= 1")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.layers = []
        for layer in range(num_layers):
            d_in = input_dim if layer == 0 else hidden_dim
            w_x = uniform_param(rng, (d_in, 4 * hidden_dim))
            w_h = uniform_param(rng, (hidden_dim, 4 * hidden_dim))
            b = zeros_param(4 * hidden_dim)
            b.data[hidden_dim : 2 * hidden_dim] = 1.0
            self.layers.append((w_x, w_h, b))

    def named(self, prefix: str) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w_x, w_h, b) in enumerate(self.layers):
            out += [(f"{prefix}.l{i}.w_x", w_x), (f"{prefix}.l{i}.w_h", w_h), (f"{prefix}.l{i}.b", b)]
        return out


LstmState = list[tuple[Tensor, Tensor]]  # per layer (h, c)


def lstm_init_state(p: LstmParams, batch: int) -> LstmState:
    return [
        (Tensor(np.zeros((batch, p.hidden_dim))), Tensor(np.zeros((batch, p.hidden_dim))))
        for _ in range(p.num_layers)
    ]


def detach_state(state: LstmState) -> LstmState:
    return [(h.detach(), c.detach()) for h, c in state]


def lstm_step(
    p: LstmParams,
    x_t: Tensor,
    state: LstmState,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> tuple[Tensor, LstmState]:
    """One time step through all layers; returns the top layer's hidden
    state and the new per-layer state. Dropout is applied between layers
    only, never to the recurrent h/c path."""
    if x_t.data.ndim != 2 or x_t.data.shape[1] != p.input_dim:
        raise NumericError(
            f"lstm_step input shape {x_t.shape}, expected (batch, {p.input_dim})"
        )
    if len(state) != p.num_layers:
        raise NumericError("lstm_step state has wrong layer count")
    hd = p.hidden_dim
    inp = x_t
    new_state: LstmState = []
    for layer, (w_x, w_h, b) in enumerate(p.layers):
        if layer > 0:
            inp = dropout(inp, dropout_rate, rng, training)
        h_prev, c_prev = state[layer]
        gates = add(add(matmul(inp, w_x), matmul(h_prev, w_h)), b)
        i_g = sigmoid(slice_cols(gates, 0, hd))
        f_g = sigmoid(slice_cols(gates, hd, 2 * hd))
        g_g = tanh(slice_cols(gates, 2 * hd, 3 * hd))
        o_g = sigmoid(slice_cols(gates, 3 * hd, 4 * hd))
        c_new = add(mul(f_g, c_prev), mul(i_g, g_g))
        h_new = mul(o_g, tanh(c_new))
        new_state.append((h_new, c_new))
        inp = h_new
    return inp, new_state


# ---------------------------------------------------------------------------
# Adam with global-norm clipping and decoupled weight decay


@dataclass
class OptState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(
    params: list[Tensor],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> OptState:
    return OptState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def global_norm(grads: list[np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads)))


def adam_step(params: list[Tensor], grads: list[np.ndarray], opt: OptState, clip: float) -> None:
    """In-place update: global-norm clip, then decoupled weight decay
    (p *= 1 - lr*wd), then the bias-corrected Adam step."""
    if len(params) != len(grads) or len(params) != len(opt.m):
        raise NumericError("adam_step: params/grads/state length mismatch")
    for p, g in zip(params, grads):
        if p.data.shape != g.shape:
            raise NumericError(f"adam_step: grad shape {g.shape} != param {p.data.shape}")
    norm = global_norm(grads)
    if clip > 0.0 and norm > clip:
        grads = [g * (clip / norm) for g in grads]
    opt.step += 1
    bc1 = 1.0 - opt.beta1**opt.step
    bc2 = 1.0 - opt.beta2**opt.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if opt.weight_decay:
            p.data *= 1.0 - opt.lr * opt.weight_decay
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * (g * g)
        p.data -= opt.lr * (opt.m[i] / bc1) / (np.sqrt(opt.v[i] / bc2) + opt.eps)
        if not np.all(np.isfinite(p.data)):
            raise NumericError("non-finite parameter after adam_step")
