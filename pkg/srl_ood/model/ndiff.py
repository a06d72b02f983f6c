"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Tensors have rank at most 3. Every primitive checks shapes exactly; there is no
general broadcasting. Gradients accumulate additively into leaf tensors, so
callers zero them between optimizer steps (``Graph.zero_grad``).
"""

import contextlib
import logging
import threading
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

logger = logging.getLogger("srl-ood.ndiff")

MAX_RANK = 3
GELU_C = float(np.sqrt(2.0 / np.pi))
GELU_K = 0.044715

_state = threading.local()


class NdiffError(Exception):
    """Exception raised for invalid tensor operations."""
    pass


@contextlib.contextmanager
def no_grad():
    """Build no backward graph inside the block (inference only).

    The flag is per thread; other threads keep recording.
    """
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


class Tensor:
    """Dense row-major float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_ctx")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        if array.ndim > MAX_RANK:
            raise NdiffError(f"rank {array.ndim} exceeds the supported rank {MAX_RANK}")
        self.data = np.asarray(array, order="C")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._ctx: Optional["Function"] = None

    @classmethod
    def _result(cls, data: np.ndarray, ctx: Optional["Function"]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64, order="C")
        out.requires_grad = ctx is not None
        out.grad = None
        out.name = None
        out._ctx = ctx
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise NdiffError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"


def as_tensor(value) -> Tensor:
    """Wrap constants; tensors pass through untouched."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _check_same_shape(op: str, a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise NdiffError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


class Function:
    """A recorded primitive: forward on arrays, backward to parent gradients."""

    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *parents, **options) -> Tensor:
        parents = tuple(as_tensor(p) for p in parents)
        fn = cls(*parents)
        out = fn.forward(*[p.data for p in parents], **options)
        track = grad_enabled() and any(p.requires_grad for p in parents)
        return Tensor._result(out, fn if track else None)

    def forward(self, *arrays, **options) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


class MatMul(Function):
    def forward(self, a, b):
        shapes = (a.ndim, b.ndim)
        if shapes not in ((2, 2), (2, 1), (3, 3)):
            raise NdiffError(f"matmul: unsupported ranks {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
            raise NdiffError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")
        if a.ndim == 3 and a.shape[0] != b.shape[0]:
            raise NdiffError(f"matmul: batch dimensions differ {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        a, b = self.a, self.b
        if b.ndim == 1:
            return np.outer(grad, b), a.T @ grad
        return grad @ np.swapaxes(b, -1, -2), np.swapaxes(a, -1, -2) @ grad


class Add(Function):
    def forward(self, a, b):
        _check_same_shape("add", a, b)
        return a + b

    def backward(self, grad):
        return grad, grad


class AddRows(Function):
    def forward(self, x, b):
        if b.ndim != 1 or x.shape[-1] != b.shape[0]:
            raise NdiffError(f"add_rows: bias {b.shape} does not match rows of {x.shape}")
        return x + b

    def backward(self, grad):
        return grad, grad.reshape(-1, grad.shape[-1]).sum(axis=0)


class Mul(Function):
    def forward(self, a, b):
        _check_same_shape("mul", a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return grad * self.b, grad * self.a


class Scale(Function):
    def forward(self, x, factor: float = 1.0):
        self.factor = float(factor)
        return x * self.factor

    def backward(self, grad):
        return (grad * self.factor,)


class Shift(Function):
    def forward(self, x, offset: float = 0.0):
        return x + float(offset)

    def backward(self, grad):
        return (grad,)


class Relu(Function):
    def forward(self, x):
        self.active = x > 0
        return np.where(self.active, x, 0.0)

    def backward(self, grad):
        return (grad * self.active,)


class SumAll(Function):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum())

    def backward(self, grad):
        return (np.full(self.shape, float(grad)),)


class Transpose(Function):
    def forward(self, x):
        if x.ndim < 2:
            raise NdiffError(f"transpose: needs rank >= 2, got {x.shape}")
        return np.swapaxes(x, -1, -2)

    def backward(self, grad):
        return (np.swapaxes(grad, -1, -2),)


class SoftmaxRows(Function):
    def forward(self, x):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        self.y = e / e.sum(axis=-1, keepdims=True)
        return self.y

    def backward(self, grad):
        y = self.y
        return (y * (grad - (grad * y).sum(axis=-1, keepdims=True)),)


class LayerNorm(Function):
    def forward(self, x, gamma, beta, eps: float = 1e-5):
        if gamma.ndim != 1 or gamma.shape != beta.shape or x.shape[-1] != gamma.shape[0]:
            raise NdiffError(f"layer_norm: gain/bias {gamma.shape}/{beta.shape} vs input {x.shape}")
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.xhat = (x - mu) * self.inv_std
        self.gamma = gamma
        return self.xhat * gamma + beta

    def backward(self, grad):
        xhat = self.xhat
        g_xhat = grad * self.gamma
        gx = self.inv_std * (
            g_xhat
            - g_xhat.mean(axis=-1, keepdims=True)
            - xhat * (g_xhat * xhat).mean(axis=-1, keepdims=True)
        )
        flat = grad.reshape(-1, grad.shape[-1])
        g_gamma = (flat * xhat.reshape(flat.shape)).sum(axis=0)
        return gx, g_gamma, flat.sum(axis=0)


class Gelu(Function):
    """tanh approximation of GELU."""

    def forward(self, x):
        self.x = x
        self.t = np.tanh(GELU_C * (x + GELU_K * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad):
        x, t = self.x, self.t
        du = GELU_C * (1.0 + 3.0 * GELU_K * x ** 2)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * du),)


class Concat(Function):
    def forward(self, *xs):
        if not xs:
            raise NdiffError("concat: nothing to concatenate")
        lead = xs[0].shape[:-1]
        for x in xs:
            if x.ndim == 0 or x.shape[:-1] != lead:
                raise NdiffError(f"concat: incompatible shapes {[x.shape for x in xs]}")
        self.widths = [x.shape[-1] for x in xs]
        return np.concatenate(xs, axis=-1)

    def backward(self, grad):
        cuts = np.cumsum(self.widths)[:-1]
        return tuple(np.split(grad, cuts, axis=-1))


class Stack(Function):
    def forward(self, *xs):
        if not xs:
            raise NdiffError("stack: nothing to stack")
        for x in xs:
            _check_same_shape("stack", xs[0], x)
        if xs[0].ndim + 1 > MAX_RANK:
            raise NdiffError(f"stack: result rank exceeds {MAX_RANK}")
        return np.stack(xs, axis=0)

    def backward(self, grad):
        return tuple(grad[i] for i in range(grad.shape[0]))


class MeanOverIndices(Function):
    def forward(self, x, index: Sequence[int] = ()):
        idx = np.asarray(list(index), dtype=np.int64)
        if idx.size == 0:
            raise NdiffError("empty-index-set")
        if x.ndim != 2:
            raise NdiffError(f"mean_over_indices: expects a matrix, got {x.shape}")
        if idx.min() < 0 or idx.max() >= x.shape[0]:
            raise NdiffError(f"mean_over_indices: index out of range for {x.shape[0]} rows: {idx.tolist()}")
        self.idx, self.shape = idx, x.shape
        return x[idx].sum(axis=0) / idx.size

    def backward(self, grad):
        gx = np.zeros(self.shape)
        np.add.at(gx, self.idx, grad / self.idx.size)
        return (gx,)


class PairwiseSqDist(Function):
    """Squared L2 distance between every pair of rows."""

    def forward(self, x):
        if x.ndim != 2:
            raise NdiffError(f"pairwise_sq_dist: expects a matrix, got {x.shape}")
        self.diff = x[:, None, :] - x[None, :, :]
        return (self.diff ** 2).sum(axis=-1)

    def backward(self, grad):
        sym = grad + grad.T
        return (2.0 * (sym[:, :, None] * self.diff).sum(axis=1),)


class LogSumExp(Function):
    def forward(self, x):
        if x.ndim != 1 or x.size == 0:
            raise NdiffError(f"logsumexp: expects a non-empty vector, got {x.shape}")
        top = x.max()
        e = np.exp(x - top)
        total = e.sum()
        self.p = e / total
        return np.asarray(top + np.log(total))

    def backward(self, grad):
        return (float(grad) * self.p,)


class CrossEntropy(Function):
    def forward(self, logits, target: int = 0):
        if logits.ndim != 1:
            raise NdiffError(f"cross_entropy: expects a logit vector, got {logits.shape}")
        if not 0 <= target < logits.shape[0]:
            raise NdiffError(f"cross_entropy: target {target} outside {logits.shape[0]} classes")
        top = logits.max()
        e = np.exp(logits - top)
        total = e.sum()
        self.p = e / total
        self.target = target
        return np.asarray(top + np.log(total) - logits[target])

    def backward(self, grad):
        g = self.p.copy()
        g[self.target] -= 1.0
        return (float(grad) * g,)


class Embed(Function):
    def forward(self, table, ids: Sequence[int] = ()):
        ids = np.asarray(list(ids), dtype=np.int64)
        if table.ndim != 2:
            raise NdiffError(f"embed: table must be a matrix, got {table.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise NdiffError(f"embed: id outside table of {table.shape[0]} rows")
        self.ids, self.shape = ids, table.shape
        return table[ids]

    def backward(self, grad):
        g = np.zeros(self.shape)
        np.add.at(g, self.ids, grad)
        return (g,)


class ReplaceRows(Function):
    def forward(self, x, vec, positions: Iterable[int] = ()):
        pos = np.unique(np.asarray(list(positions), dtype=np.int64))
        if x.ndim != 2 or vec.shape != (x.shape[1],):
            raise NdiffError(f"replace_rows: vector {vec.shape} does not fit rows of {x.shape}")
        if pos.size and (pos.min() < 0 or pos.max() >= x.shape[0]):
            raise NdiffError(f"replace_rows: position outside {x.shape[0]} rows")
        self.pos = pos
        out = x.copy()
        out[pos] = vec
        return out

    def backward(self, grad):
        gx = grad.copy()
        gx[self.pos] = 0.0
        return gx, grad[self.pos].sum(axis=0)


class SplitHeads(Function):
    def forward(self, x, heads: int = 1):
        if x.ndim != 2 or x.shape[1] % heads:
            raise NdiffError(f"split_heads: {heads} heads do not divide {x.shape}")
        rows, width = x.shape
        return x.reshape(rows, heads, width // heads).transpose(1, 0, 2)

    def backward(self, grad):
        heads, rows, dh = grad.shape
        return (grad.transpose(1, 0, 2).reshape(rows, heads * dh),)


class MergeHeads(Function):
    def forward(self, x):
        if x.ndim != 3:
            raise NdiffError(f"merge_heads: expects rank 3, got {x.shape}")
        heads, rows, dh = x.shape
        return x.transpose(1, 0, 2).reshape(rows, heads * dh)

    def backward(self, grad):
        rows, width = grad.shape
        heads = self.parents[0].shape[0]
        return (grad.reshape(rows, heads, width // heads).transpose(1, 0, 2),)


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def add_rows(x, bias) -> Tensor:
    return AddRows.apply(x, bias)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def scale(x, factor: float) -> Tensor:
    return Scale.apply(x, factor=factor)


def shift(x, offset: float) -> Tensor:
    return Shift.apply(x, offset=offset)


def relu(x) -> Tensor:
    return Relu.apply(x)


def sum_all(x) -> Tensor:
    return SumAll.apply(x)


def transpose(x) -> Tensor:
    return Transpose.apply(x)


def softmax_rows(x) -> Tensor:
    return SoftmaxRows.apply(x)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def gelu(x) -> Tensor:
    return Gelu.apply(x)


def concat(xs: Sequence) -> Tensor:
    return Concat.apply(*xs)


def stack(xs: Sequence) -> Tensor:
    return Stack.apply(*xs)


def mean_over_indices(x, idx: Sequence[int]) -> Tensor:
    """Mean of the rows of ``x`` selected by ``idx``."""
    return MeanOverIndices.apply(x, index=idx)


def pairwise_sq_dist(x) -> Tensor:
    return PairwiseSqDist.apply(x)


def logsumexp(x) -> Tensor:
    return LogSumExp.apply(x)


def cross_entropy(logits, target: int) -> Tensor:
    return CrossEntropy.apply(logits, target=int(target))


def embed(table, ids: Sequence[int]) -> Tensor:
    return Embed.apply(table, ids=ids)


def replace_rows(x, vec, positions: Iterable[int]) -> Tensor:
    return ReplaceRows.apply(x, vec, positions=positions)


def split_heads(x, heads: int) -> Tensor:
    return SplitHeads.apply(x, heads=heads)


def merge_heads(x) -> Tensor:
    return MergeHeads.apply(x)


def mean(xs: Sequence) -> Tensor:
    """Average of equally shaped tensors."""
    if not xs:
        raise NdiffError("mean: nothing to average")
    total = as_tensor(xs[0])
    for x in xs[1:]:
        total = add(total, x)
    return scale(total, 1.0 / len(xs))


class Graph:
    """Registry of named trainable parameters."""

    def __init__(self):
        self.params: Dict[str, Tensor] = {}

    def register(self, name: str, data) -> Tensor:
        if name in self.params:
            raise NdiffError(f"parameter {name} registered twice")
        tensor = Tensor(data, requires_grad=True, name=name)
        self.params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> List[str]:
        return list(self.params)

    def zero_grad(self):
        for tensor in self.params.values():
            tensor.zero_grad()

    def arrays(self) -> Dict[str, np.ndarray]:
        """Copies of every parameter array, keyed by name."""
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        missing = set(self.params) ^ set(arrays)
        if missing:
            raise NdiffError(f"parameter sets differ: {sorted(missing)}")
        for name, tensor in self.params.items():
            data = np.asarray(arrays[name], dtype=np.float64)
            if data.shape != tensor.shape:
                raise NdiffError(f"{name}: shape {data.shape} does not match {tensor.shape}")
            tensor.data[...] = data


def topological_order(root: Tensor) -> List[Tensor]:
    """Nodes reachable from ``root``, parents before children."""
    order: List[Tensor] = []
    seen = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        if node._ctx is not None:
            for parent in node._ctx.parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack_.append((parent, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into every reachable leaf that requires grad."""
    if loss.ndim != 0:
        raise NdiffError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending = {id(loss): np.ones(())}
    for node in reversed(topological_order(loss)):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node._ctx is None:
            node.grad = grad.copy() if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(node._ctx.parents, node._ctx.backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = pending[key] + parent_grad if key in pending else parent_grad


def grad_of(loss: Tensor, graph: Graph) -> Dict[str, np.ndarray]:
    """Backpropagate ``loss`` and return the gradient of every registered parameter.

    Parameters the loss does not reach get zero gradients.
    """
    backward(loss)
    return {
        name: t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        for name, t in graph.params.items()
    }


def finite_diff_check(
    f: Callable[[], Tensor],
    graph: Graph,
    step: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar loss from the current parameter values of ``graph``.
    The error per coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    With ``max_coords`` only that many coordinates per parameter are checked.
    """
    if step <= 0:
        raise NdiffError(f"step must be positive, got {step}")
    graph.zero_grad()
    loss = f()
    if not np.isfinite(loss.item()):
        raise NdiffError(f"non-finite function value {loss.item()}")
    analytic = grad_of(loss, graph)
    rng = np.random.default_rng(seed)

    worst = 0.0
    for name, tensor in graph.params.items():
        flat = tensor.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        expected = analytic[name].reshape(-1)
        for i in coords:
            original = flat[i]
            flat[i] = original + step
            plus = f().item()
            flat[i] = original - step
            minus = f().item()
            flat[i] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NdiffError(f"non-finite function value while probing {name}[{i}]")
            numeric = (plus - minus) / (2.0 * step)
            err = abs(expected[i] - numeric) / max(1.0, abs(expected[i]))
            worst = max(worst, err)
    graph.zero_grad()
    logger.debug("finite difference check: worst relative error %.3e", worst)
    return worst
