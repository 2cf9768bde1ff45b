"""Reverse-mode differentiation over a closed set of array ops, plus Adam.

A :class:`Graph` is declared once (inputs, parameters, ops) and then evaluated
any number of times with different input bindings. Node shapes are inferred
from the bound input shapes before any kernel runs, so one graph serves
batches of any spatial size.

The forward kernels (``conv2d_forward`` etc.) are plain functions and are also
used directly by the inference code in :mod:`lintx.model`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

OPS = frozenset({
    "input", "parameter", "conv2d", "relu", "maxpool2", "upsample2_nearest",
    "linear", "matmul", "add", "scale", "reshape", "subtract_channel_mean",
    "channel_mean", "covariance", "gram", "frobenius_sq_diff", "weighted_sum",
})


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


# ---------------------------------------------------------------- kernels

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-1 'same' convolution. x: (B, Ci, H, W), w: (Co, Ci, k, k), b: (Co,)."""
    bsz, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    taps = _taps(w)
    out = np.zeros((bsz, co, h * wd))
    for i in range(k):
        for j in range(k):
            xs = xp[:, :, i:i + h, j:j + wd].reshape(bsz, ci, h * wd)
            out += np.matmul(taps[i, j], xs)
    out += b[None, :, None]
    return out.reshape(bsz, co, h, wd)


def _taps(w: np.ndarray) -> np.ndarray:
    # (k, k, Co, Ci): each tap matrix contiguous, which keeps matmul on the BLAS path
    return np.ascontiguousarray(w.transpose(2, 3, 0, 1))


def conv2d_backward(g, x, w, need_x=True, need_w=True):
    bsz, ci, h, wd = x.shape
    co, _, k, _ = w.shape
    pad = k // 2
    g2 = g.reshape(bsz, co, h * wd)
    dx = dw = db = None
    if need_w:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        dw = np.empty_like(w)
        gt = g2.transpose(1, 0, 2).reshape(co, bsz * h * wd)
        for i in range(k):
            for j in range(k):
                xs = xp[:, :, i:i + h, j:j + wd].transpose(1, 0, 2, 3).reshape(ci, bsz * h * wd)
                dw[:, :, i, j] = gt @ xs.T
        db = g2.sum(axis=(0, 2))
    if need_x:
        taps = _taps(w)
        dxp = np.zeros((bsz, ci, h + 2 * pad, wd + 2 * pad))
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + h, j:j + wd] += np.matmul(taps[i, j].T, g2).reshape(bsz, ci, h, wd)
        dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0.0)


def _pool_windows(x):
    bsz, c, h, w = x.shape
    return (x.reshape(bsz, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(bsz, c, h // 2, w // 2, 4))


def maxpool2_forward(x):
    """2x2/stride-2 max pool; returns the pooled map and the winning window slot.

    Window slots are numbered row-major, and ties go to the lowest slot.
    """
    win = _pool_windows(x)
    arg = np.argmax(win, axis=-1)
    return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0], arg


def maxpool2_backward(g, arg, shape):
    bsz, c, h, w = shape
    onehot = (arg[..., None] == np.arange(4)) * g[..., None]
    return (onehot.reshape(bsz, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(shape))


def upsample2_forward(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(g):
    bsz, c, h, w = g.shape
    return g.reshape(bsz, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def covariance_forward(x):
    xc = x - x.mean(axis=-1, keepdims=True)
    return np.matmul(xc, np.swapaxes(xc, -1, -2)) / x.shape[-1]


def gram_forward(x):
    return np.matmul(x, np.swapaxes(x, -1, -2)) / x.shape[-1]


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- graph

@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple["Node", ...] = ()
    attrs: dict = field(default_factory=dict)
    name: str | None = None
    trainable: bool = False
    value: np.ndarray | None = None
    grad: np.ndarray | None = None
    cache: object = None
    shape: tuple | None = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node {self.op}{label} shape={self.shape}>"


def _bshape(a, b, op):
    try:
        return tuple(np.broadcast_shapes(a, b))
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast {a} with {b}") from None


def _infer(node: Node, shapes: list[tuple]) -> tuple:
    op = node.op
    if op == "conv2d":
        x, w, b = shapes
        if len(x) != 4 or len(w) != 4 or w[2] != w[3] or w[2] % 2 == 0:
            raise ShapeError(f"conv2d: bad operand shapes {x}, {w}")
        if x[1] != w[1] or b != (w[0],):
            raise ShapeError(f"conv2d: channels {x} vs kernel {w} / bias {b}")
        return (x[0], w[0], x[2], x[3])
    if op in ("relu", "subtract_channel_mean", "scale"):
        return shapes[0]
    if op == "maxpool2":
        x = shapes[0]
        if len(x) != 4 or x[2] % 2 or x[3] % 2:
            raise ShapeError(f"maxpool2: spatial dims of {x} must be even")
        return (x[0], x[1], x[2] // 2, x[3] // 2)
    if op == "upsample2_nearest":
        x = shapes[0]
        if len(x) != 4:
            raise ShapeError(f"upsample2_nearest: rank-4 input expected, got {x}")
        return (x[0], x[1], 2 * x[2], 2 * x[3])
    if op == "linear":
        x, w, b = shapes
        if len(x) != 2 or len(w) != 2 or x[1] != w[1] or b != (w[0],):
            raise ShapeError(f"linear: {x} x {w}^T + {b}")
        return (x[0], w[0])
    if op == "matmul":
        a, b = shapes
        if len(a) < 2 or len(b) < 2 or a[-1] != b[-2]:
            raise ShapeError(f"matmul: {a} x {b}")
        return _bshape(a[:-2], b[:-2], op) + (a[-2], b[-1])
    if op == "add":
        return _bshape(shapes[0], shapes[1], op)
    if op == "reshape":
        x = shapes[0]
        tail = node.attrs["tail"]
        total = int(np.prod(x[1:]))
        known = int(np.prod([t for t in tail if t != -1]))
        if -1 in tail:
            if known == 0 or total % known:
                raise ShapeError(f"reshape: {x} into (B, {tail})")
            tail = tuple(total // known if t == -1 else t for t in tail)
        if int(np.prod(tail)) != total:
            raise ShapeError(f"reshape: {x} into (B, {tail})")
        return (x[0],) + tuple(tail)
    if op in ("covariance", "gram"):
        x = shapes[0]
        if len(x) < 2 or x[-1] < 1:
            raise ShapeError(f"{op}: need (..., C, N) input, got {x}")
        return x[:-1] + (x[-2],)
    if op == "channel_mean":
        return shapes[0][:-1] + (1,)
    if op == "frobenius_sq_diff":
        if shapes[0] != shapes[1]:
            raise ShapeError(f"frobenius_sq_diff: {shapes[0]} vs {shapes[1]}")
        return ()
    if op == "weighted_sum":
        if any(s != shapes[0] for s in shapes):
            raise ShapeError(f"weighted_sum: mixed shapes {shapes}")
        return shapes[0]
    raise GraphError(f"unknown op {op}")


def _forward(node: Node, vals: list[np.ndarray]):
    """Return (value, cache)."""
    op = node.op
    if op == "conv2d":
        return conv2d_forward(*vals), None
    if op == "relu":
        return relu_forward(vals[0]), None
    if op == "maxpool2":
        return maxpool2_forward(vals[0])
    if op == "upsample2_nearest":
        return upsample2_forward(vals[0]), None
    if op == "linear":
        x, w, b = vals
        return x @ w.T + b, None
    if op == "matmul":
        return np.matmul(vals[0], vals[1]), None
    if op == "add":
        return vals[0] + vals[1], None
    if op == "scale":
        return node.attrs["factor"] * vals[0], None
    if op == "reshape":
        return vals[0].reshape(node.shape), None
    if op == "subtract_channel_mean":
        x = vals[0]
        return x - x.mean(axis=-1, keepdims=True), None
    if op == "channel_mean":
        return vals[0].mean(axis=-1, keepdims=True), None
    if op == "covariance":
        return covariance_forward(vals[0]), None
    if op == "gram":
        return gram_forward(vals[0]), None
    if op == "frobenius_sq_diff":
        d = vals[0] - vals[1]
        return np.asarray(np.sum(d * d)), d
    if op == "weighted_sum":
        out = np.zeros(node.shape)
        for wt, v in zip(node.attrs["weights"], vals):
            out = out + wt * v
        return out, None
    raise GraphError(f"unknown op {op}")


def _backward(node: Node, g: np.ndarray, vals: list[np.ndarray], need: list[bool]) -> list:
    op = node.op
    if op == "conv2d":
        x, w, _ = vals
        dx, dw, db = conv2d_backward(g, x, w, need_x=need[0], need_w=need[1] or need[2])
        return [dx, dw, db]
    if op == "relu":
        return [g * (vals[0] > 0)]
    if op == "maxpool2":
        return [maxpool2_backward(g, node.cache, vals[0].shape)]
    if op == "upsample2_nearest":
        return [upsample2_backward(g)]
    if op == "linear":
        x, w, _ = vals
        return [g @ w if need[0] else None, g.T @ x if need[1] else None, g.sum(axis=0)]
    if op == "matmul":
        a, b = vals
        da = _unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape) if need[0] else None
        db = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape) if need[1] else None
        return [da, db]
    if op == "add":
        return [_unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)]
    if op == "scale":
        return [node.attrs["factor"] * g]
    if op == "reshape":
        return [g.reshape(vals[0].shape)]
    if op == "subtract_channel_mean":
        return [g - g.mean(axis=-1, keepdims=True)]
    if op == "channel_mean":
        x = vals[0]
        return [np.broadcast_to(g / x.shape[-1], x.shape).copy()]
    if op in ("covariance", "gram"):
        x = vals[0]
        n = x.shape[-1]
        xc = x - x.mean(axis=-1, keepdims=True) if op == "covariance" else x
        dx = np.matmul(g + np.swapaxes(g, -1, -2), xc) / n
        if op == "covariance":
            dx = dx - dx.mean(axis=-1, keepdims=True)
        return [dx]
    if op == "frobenius_sq_diff":
        d = node.cache
        return [2.0 * g * d, -2.0 * g * d]
    if op == "weighted_sum":
        return [wt * g for wt in node.attrs["weights"]]
    raise GraphError(f"no backward rule for {op}")


class Graph:
    """Declarative computation graph; nodes are kept in creation (topological) order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.inputs: dict[str, Node] = {}
        self.params: dict[str, Node] = {}
        self._forward_done = False

    def _add(self, op, inputs=(), **attrs) -> Node:
        assert op in OPS, op
        for n in inputs:
            if not isinstance(n, Node):
                raise TypeError(f"{op}: inputs must be graph nodes, got {type(n).__name__}")
        node = Node(op, tuple(inputs), attrs)
        self.nodes.append(node)
        return node

    # declarations
    def input(self, name: str) -> Node:
        if name in self.inputs or name in self.params:
            raise GraphError(f"duplicate name {name!r}")
        node = self._add("input")
        node.name = name
        self.inputs[name] = node
        return node

    def parameter(self, name: str, value: np.ndarray, trainable: bool = True) -> Node:
        if name in self.inputs or name in self.params:
            raise GraphError(f"duplicate name {name!r}")
        node = self._add("parameter")
        node.name = name
        node.trainable = trainable
        node.value = np.array(value, dtype=np.float64, order="C")
        node.shape = node.value.shape
        self.params[name] = node
        return node

    def conv2d(self, x, w, b):
        return self._add("conv2d", (x, w, b))

    def relu(self, x):
        return self._add("relu", (x,))

    def maxpool2(self, x):
        return self._add("maxpool2", (x,))

    def upsample2_nearest(self, x):
        return self._add("upsample2_nearest", (x,))

    def linear(self, x, w, b):
        return self._add("linear", (x, w, b))

    def matmul(self, a, b):
        return self._add("matmul", (a, b))

    def add(self, a, b):
        return self._add("add", (a, b))

    def scale(self, x, factor: float):
        return self._add("scale", (x,), factor=float(factor))

    def reshape(self, x, tail: Sequence[int]):
        """Reshape everything but the leading (batch) axis; one ``-1`` allowed."""
        return self._add("reshape", (x,), tail=tuple(tail))

    def subtract_channel_mean(self, x):
        return self._add("subtract_channel_mean", (x,))

    def channel_mean(self, x):
        return self._add("channel_mean", (x,))

    def covariance(self, x):
        return self._add("covariance", (x,))

    def gram(self, x):
        return self._add("gram", (x,))

    def frobenius_sq_diff(self, a, b):
        return self._add("frobenius_sq_diff", (a, b))

    def weighted_sum(self, xs: Sequence[Node], weights: Sequence[float]):
        if len(xs) != len(weights) or not xs:
            raise GraphError("weighted_sum needs one weight per term")
        return self._add("weighted_sum", tuple(xs), weights=tuple(float(w) for w in weights))

    # evaluation
    def _ancestors(self, out: Node) -> set[int]:
        seen = set()
        stack = [out]
        while stack:
            n = stack.pop()
            if id(n) in seen:
                continue
            seen.add(id(n))
            stack.extend(n.inputs)
        return seen

    def infer_shapes(self, shapes: dict[str, tuple], output: Node | None = None) -> tuple:
        """Propagate input shapes through the graph; raises :class:`ShapeError`."""
        output = output or self.nodes[-1]
        live = self._ancestors(output)
        for node in self.nodes:
            if id(node) not in live:
                continue
            if node.op == "input":
                if node.name not in shapes:
                    raise GraphError(f"input {node.name!r} is not bound")
                node.shape = tuple(shapes[node.name])
            elif node.op != "parameter":
                node.shape = _infer(node, [n.shape for n in node.inputs])
        return output.shape

    def forward(self, inputs: dict[str, np.ndarray], output: Node | None = None) -> np.ndarray:
        output = output or self.nodes[-1]
        bound = {k: np.asarray(v, dtype=np.float64) for k, v in inputs.items()}
        self.infer_shapes({k: v.shape for k, v in bound.items()}, output)
        live = self._ancestors(output)
        for node in self.nodes:
            node.grad = None
            if id(node) not in live:
                continue
            if node.op == "input":
                node.value = bound[node.name]
            elif node.op != "parameter":
                node.value, node.cache = _forward(node, [n.value for n in node.inputs])
        self._forward_done = True
        self._output = output
        return output.value

    def relu_margin(self) -> float:
        """Smallest |input| over relu nodes evaluated by the last forward pass.

        Finite differences are only meaningful when this exceeds the step size.
        """
        vals = [np.abs(n.inputs[0].value).min() for n in self.nodes
                if n.op == "relu" and n.value is not None and n.inputs[0].value.size]
        return float(min(vals)) if vals else float("inf")

    def backward(self, loss: Node | None = None) -> dict[str, np.ndarray]:
        """Gradients of a scalar ``loss`` w.r.t. every trainable parameter it depends on."""
        loss = loss or self._output
        if not self._forward_done or loss.value is None:
            raise GraphError("backward called before forward")
        if loss.shape != ():
            raise GraphError(f"loss must be a scalar, got shape {loss.shape}")
        live = self._ancestors(loss)
        needs: dict[int, bool] = {}
        for node in self.nodes:
            if id(node) in live:
                needs[id(node)] = node.trainable or any(needs.get(id(i), False) for i in node.inputs)
        loss.grad = np.ones(())
        for node in reversed(self.nodes):
            if id(node) not in live or node.grad is None or not node.inputs:
                continue
            need = [needs[id(i)] for i in node.inputs]
            if not any(need):
                continue
            grads = _backward(node, node.grad, [i.value for i in node.inputs], need)
            for inp, g, nd in zip(node.inputs, grads, need):
                if not nd or g is None:
                    continue
                inp.grad = g if inp.grad is None else inp.grad + g
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.value))
            for name, p in self.params.items()
            if p.trainable and id(p) in live
        }

    def trainable(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.params.items() if p.trainable}


def fd_pairs(
    graph: Graph,
    loss: Node,
    param: str,
    inputs: dict[str, np.ndarray],
    h: float = 1e-5,
    samples: int = 32,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop and central-difference derivatives on sampled coordinates of ``param``.

    Checks every coordinate when the parameter has at most ``samples`` entries,
    otherwise a seeded random subset of ``samples`` coordinates.
    """
    node = graph.params[param]
    graph.forward(inputs, loss)
    analytic = graph.backward(loss)[param]
    value = node.value
    if value.size <= samples:
        coords = np.arange(value.size)
    else:
        coords = np.random.default_rng(seed).choice(value.size, size=samples, replace=False)
    a_out, n_out = np.empty(len(coords)), np.empty(len(coords))
    for k, flat_idx in enumerate(coords):
        idx = np.unravel_index(flat_idx, value.shape)
        orig = value[idx]
        value[idx] = orig + h
        up = float(graph.forward(inputs, loss))
        value[idx] = orig - h
        down = float(graph.forward(inputs, loss))
        value[idx] = orig
        n_out[k] = (up - down) / (2 * h)
        a_out[k] = analytic[idx]
    graph.forward(inputs, loss)
    return a_out, n_out


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)


def grad_check(
    graph: Graph,
    loss: Node,
    param: str,
    inputs: dict[str, np.ndarray],
    h: float = 1e-5,
    samples: int = 32,
    seed: int = 0,
) -> float:
    """Max relative error between backprop and central differences on ``param``."""
    a, n = fd_pairs(graph, loss, param, inputs, h, samples, seed)
    return float(relative_errors(a, n).max(initial=0.0))


@dataclass
class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise ValueError(f"gradient for {k!r} has shape {g.shape}, parameter {params[k].shape}")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            params[k] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
