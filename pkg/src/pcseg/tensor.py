"""Minimal dense-tensor kernel with reverse-mode gradients.

Every value is a float64 numpy array wrapped in a `Tensor`. Each
operation computes its forward value eagerly and records an analytic
backward closure; `Tensor.backward()` replays the closures in reverse
topological order. The op set is small and fixed -- exactly what the
correlation model needs -- and every differentiable op is validated
against central finite differences (see `finite_difference_check`).

Non-differentiable arguments (masks, index arrays, group lists) are
plain numpy arrays, never Tensors.
"""

from __future__ import annotations

import numpy as np

from .geometry import EmptyMaskError

_LN_EPS = 1e-12
_COS_EPS = 1e-8


class Tensor:
    """A float64 array plus the backward closure that produced it."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def backward(self, grad=None):
        """Accumulate gradients of this tensor into every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit grad needs a scalar")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # Operator sugar; the module-level functions do the work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return scale(self, other) if np.isscalar(other) else mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """A named leaf tensor whose gradient an optimizer consumes."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` back down to `shape` (the inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; batched contractions go through `einsum`."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return Tensor(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Binary einsum with gradients obtained by swapping subscripts.

    Valid for plain contractions and reductions (no repeated labels
    inside one operand), which covers every use in this package.
    """
    lhs, out_sub = subscripts.split("->")
    a_sub, b_sub = lhs.split(",")
    data = np.einsum(subscripts, a.data, b.data)

    def backward(g):
        ga = np.einsum(f"{out_sub},{b_sub}->{a_sub}", g, b.data)
        gb = np.einsum(f"{a_sub},{out_sub}->{b_sub}", a.data, g)
        return ga, gb

    return Tensor(data, (a, b), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along `axis`; the backward splits the gradient back up."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def swap_axes(t: Tensor, a: int, b: int) -> Tensor:
    return Tensor(t.data.swapaxes(a, b), (t,), lambda g: (g.swapaxes(a, b),))


def transpose_first_two(t: Tensor) -> Tensor:
    """Swap the first two axes (a plain transpose for 2-D tensors)."""
    if t.ndim < 2:
        raise ValueError(f"need at least 2 dimensions, got shape {t.shape}")
    return swap_axes(t, 0, 1)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product of two stacks with identical leading axes."""
    if a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"bmm shape mismatch: {a.shape} @ {b.shape}")
    return Tensor(
        np.matmul(a.data, b.data),
        (a, b),
        lambda g: (np.matmul(g, b.data.swapaxes(-1, -2)), np.matmul(a.data.swapaxes(-1, -2), g)),
    )


def sum_axis(t: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.data.shape).copy(),)

    return Tensor(t.data.sum(axis=axis, keepdims=keepdims), (t,), backward)


def reshape(t: Tensor, shape) -> Tensor:
    old = t.data.shape
    return Tensor(t.data.reshape(shape), (t,), lambda g: (g.reshape(old),))


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries starting at `start` along `axis`."""
    idx = [slice(None)] * t.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        z = np.zeros_like(t.data)
        z[idx] = g
        return (z,)

    return Tensor(t.data[idx], (t,), backward)


def take_rows(t: Tensor, indices) -> Tensor:
    """Gather rows (duplicates allowed); the backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)

    def backward(g):
        z = np.zeros_like(t.data)
        np.add.at(z, idx, g)
        return (z,)

    return Tensor(t.data[idx], (t,), backward)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------

def elu(t: Tensor) -> Tensor:
    neg = t.data <= 0
    data = t.data.copy()
    data[neg] = np.expm1(t.data[neg])

    def backward(g):
        d = np.ones_like(data)
        d[neg] = data[neg] + 1.0  # exp(x), recovered from the forward value
        return (g * d,)

    return Tensor(data, (t,), backward)


def elu_plus_one(t: Tensor) -> Tensor:
    """phi(x) = elu(x) + 1: strictly positive, equals exp(x) for x <= 0."""
    neg = t.data <= 0
    data = t.data + 1.0
    data[neg] = np.exp(t.data[neg])

    def backward(g):
        d = np.ones_like(data)
        d[neg] = data[neg]  # exp(x)
        return (g * d,)

    return Tensor(data, (t,), backward)


def clamp_min(t: Tensor, floor: float) -> Tensor:
    keep = t.data >= floor
    return Tensor(np.maximum(t.data, floor), (t,), lambda g: (g * keep,))


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gain.shape != (t.shape[-1],) or bias.shape != (t.shape[-1],):
        raise ValueError(f"gain/bias must have shape ({t.shape[-1]},)")
    mu = t.data.mean(axis=-1, keepdims=True)
    xc = t.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    y = xc * inv
    lead = tuple(range(t.ndim - 1))

    def backward(g):
        h = g * gain.data
        gt = inv * (h - h.mean(axis=-1, keepdims=True) - y * (h * y).mean(axis=-1, keepdims=True))
        return gt, (g * y).sum(axis=lead), g.sum(axis=lead)

    return Tensor(y * gain.data + bias.data, (t, gain, bias), backward)


# ---------------------------------------------------------------------------
# affine layers
# ---------------------------------------------------------------------------

def affine(t: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b applied to the last axis, any number of leading axes."""
    if t.ndim == 2:
        return add(matmul(t, w), b)
    lead = t.shape[:-1]
    flat = reshape(t, (-1, t.shape[-1]))
    return reshape(add(matmul(flat, w), b), lead + (w.shape[1],))


def mlp_forward(t: Tensor, params) -> Tensor:
    """Two affine layers with an ELU in between, applied to the last axis.

    `params` is anything with w1, b1, w2, b2 attributes.
    """
    return affine(elu(affine(t, params.w1, params.b1)), params.w2, params.b2)


# ---------------------------------------------------------------------------
# similarity, pooling, loss
# ---------------------------------------------------------------------------

def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarity between rows of a (N x D) and b (M x D).

    Row norms are floored at 1e-8, so an all-zero row compares as 0 to
    everything instead of producing NaNs.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"cosine_rows needs (N,D) and (M,D), got {a.shape} and {b.shape}")
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    ca = np.maximum(na, _COS_EPS)
    cb = np.maximum(nb, _COS_EPS)
    out = (a.data @ b.data.T) / ca[:, None] / cb[None, :]

    def backward(g):
        gs = g / ca[:, None] / cb[None, :]
        # The norm term is active only above the floor, where ca == ||a_i||.
        wa = np.where(na > _COS_EPS, (g * out).sum(axis=1) / (ca * ca), 0.0)
        wb = np.where(nb > _COS_EPS, (g * out).sum(axis=0) / (cb * cb), 0.0)
        ga = gs @ b.data - wa[:, None] * a.data
        gb = gs.T @ a.data - wb[:, None] * b.data
        return ga, gb

    return Tensor(out, (a, b), backward)


def max_pool_rows(t: Tensor) -> Tensor:
    """Row-wise max of an N x M matrix, returned as a length-N vector."""
    if t.ndim != 2:
        raise ValueError(f"max_pool_rows needs a 2-D tensor, got shape {t.shape}")
    arg = t.data.argmax(axis=1)
    rows = np.arange(t.shape[0])

    def backward(g):
        z = np.zeros_like(t.data)
        z[rows, arg] = g
        return (z,)

    return Tensor(t.data[rows, arg], (t,), backward)


def masked_mean_rows(t: Tensor, mask) -> Tensor:
    """Mean of the masked rows of an N x D matrix, shape (1, D)."""
    mask = np.asarray(mask, dtype=bool)
    if t.ndim != 2 or mask.shape != (t.shape[0],):
        raise ValueError(f"mask shape {mask.shape} does not match tensor {t.shape}")
    count = int(mask.sum())
    if count == 0:
        raise EmptyMaskError("masked_mean_rows needs at least one masked row")

    def backward(g):
        z = np.zeros_like(t.data)
        z[mask] = g / count
        return (z,)

    return Tensor(t.data[mask].mean(axis=0, keepdims=True), (t,), backward)


def group_mean_rows(t: Tensor, groups) -> Tensor:
    """Mean feature of each row group: (len(groups)) x D."""
    if t.ndim != 2:
        raise ValueError(f"group_mean_rows needs a 2-D tensor, got shape {t.shape}")
    groups = [np.asarray(g, dtype=np.int64) for g in groups]
    if any(g.size == 0 for g in groups):
        raise ValueError("groups must be nonempty")
    data = np.stack([t.data[g].mean(axis=0) for g in groups])

    def backward(g):
        z = np.zeros_like(t.data)
        for i, members in enumerate(groups):
            z[members] += g[i] / members.size
        return (z,)

    return Tensor(data, (t,), backward)


def softmax_rows(t: Tensor) -> Tensor:
    """Softmax over the last axis (max-shifted for stability)."""
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor(y, (t,), backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy of N x C logits against N integer labels."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ValueError(f"cross_entropy needs (N,C) logits and (N,) targets, got {logits.shape} and {targets.shape}")
    if targets.min() < 0 or targets.max() >= logits.shape[1]:
        raise ValueError("targets out of range for the logit columns")
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[np.arange(n), targets]

    def backward(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), targets] -= 1.0
        return (g * p / n,)

    return Tensor(np.float64(nll.mean()), (logits,), backward)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class AdamW:
    """AdamW with decoupled weight decay (decay applies even at zero gradient)."""

    def __init__(self, params, lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        b1, b2 = self.betas
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1 ** self.step_count)
            vhat = v / (1 - b2 ** self.step_count)
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def adamw_step(params, lr: float, weight_decay: float, betas, step_count: int) -> None:
    """One AdamW update with externally tracked moments stored on the params.

    Convenience for single-step tests; training uses the `AdamW` class,
    which keeps its moments across steps.
    """
    opt = AdamW(params, lr=lr, weight_decay=weight_decay, betas=betas)
    opt.step_count = step_count - 1
    opt.step()


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def finite_difference_check(op, inputs, eps: float = 1e-5, rng=None, max_coords=None) -> float:
    """Compare analytic gradients of `op(*inputs)` against central differences.

    The output is reduced to a scalar with a fixed random projection, the
    analytic gradient of that scalar is computed by backward(), and each
    input coordinate is perturbed by +/-eps. Returns the largest absolute
    gradient discrepancy divided by max(1, largest gradient magnitude).

    `max_coords` caps the number of coordinates checked per input (all by
    default), sampling them with `rng`.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    inputs = list(inputs)
    out = op(*inputs)
    proj = rng.standard_normal(out.data.shape)

    def scalarize():
        return float((op(*inputs).data * proj).sum())

    for t in inputs:
        t.grad = None
    out.backward(proj.copy())

    worst_abs = 0.0
    scale_ref = 1.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + eps
            up = scalarize()
            flat[c] = keep - eps
            down = scalarize()
            flat[c] = keep
            fd = (up - down) / (2 * eps)
            a = analytic.reshape(-1)[c]
            worst_abs = max(worst_abs, abs(a - fd))
            scale_ref = max(scale_ref, abs(a), abs(fd))
    return worst_abs / scale_ref


# ---------------------------------------------------------------------------
# parameter serialization
# ---------------------------------------------------------------------------

def format_records(named_arrays) -> str:
    """Serialize (name, array) pairs as text records.

    Record layout: the name on one line, then `rank d0 d1 ...`, then all
    values space-separated with 17 significant digits (lossless for
    float64 round-trips).
    """
    lines = []
    for name, arr in named_arrays:
        arr = np.asarray(arr, dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(name)
        lines.append(f"{arr.ndim} {dims}".rstrip())
        lines.append(" ".join(f"{v:.17g}" for v in arr.reshape(-1)))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_records(text: str) -> dict[str, np.ndarray]:
    """Inverse of `format_records`."""
    lines = [ln for ln in text.splitlines()]
    out: dict[str, np.ndarray] = {}
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        name = lines[i].strip()
        header = lines[i + 1].split()
        rank = int(header[0])
        shape = tuple(int(d) for d in header[1 : 1 + rank])
        raw = lines[i + 2].split()
        values = np.array(raw, dtype=np.float64) if raw else np.empty(0)
        out[name] = values.reshape(shape)
        i += 3
    return out
