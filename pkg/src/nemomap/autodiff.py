"""Define-by-run reverse-mode differentiation over dense float64 matrices.

Every value on a :class:`Tape` is a 2-D ``float64`` array. Primitives record
their output together with a vector-Jacobian product; :meth:`Tape.backward`
walks the records in reverse. Subgradient conventions: ``relu'(0) = 0`` and
``clamp`` passes gradient only strictly inside ``(lo, hi)``.

A tape built with ``record=False`` only evaluates, which is what the
inference path of the field uses.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


class Node:
    __slots__ = ("id", "value", "op", "parents", "vjp", "name")

    def __init__(self, id, value, op, parents=(), vjp=None, name=None):
        self.id = id
        self.value = value
        self.op = op
        self.parents = parents
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<Node #{self.id} {self.op}{label} shape={self.value.shape}>"


def _as2d(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Node, b: Node, op: str):
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


class Tape:
    """Append-only record of primitive applications."""

    def __init__(self, record: bool = True, check_finite: bool = True):
        self.record = record
        self.check_finite = check_finite
        self.nodes: list[Node] = []
        self.leaves: list[Node] = []
        # (node id, branch mask) for every non-smooth primitive; used by grad_check
        self.kinks: list[tuple[int, np.ndarray]] = []

    # -- bookkeeping -------------------------------------------------------
    def _push(self, value, op, parents=(), vjp=None, name=None) -> Node:
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite output at node #{len(self.nodes)} ({op}{' ' + name if name else ''})")
        node = Node(len(self.nodes), value, op, parents if self.record else (), vjp if self.record else None, name)
        self.nodes.append(node)
        return node

    def _kink(self, node: Node, mask: np.ndarray):
        if self.record:
            self.kinks.append((node.id, mask))

    def kink_signature(self) -> bytes:
        """Bytes identifying which branch every non-smooth primitive took."""
        return b"".join(np.packbits(m.astype(np.uint8).ravel()).tobytes() + b"|" for _, m in self.kinks)

    def leaf(self, value, name=None) -> Node:
        node = self._push(_as2d(value).copy(), "leaf", name=name)
        self.leaves.append(node)
        return node

    def const(self, value, name=None) -> Node:
        return self._push(_as2d(value), "const", name=name)

    # -- linear algebra ----------------------------------------------------
    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        av, bv = a.value, b.value
        return self._push(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))

    def add(self, a: Node, b: Node) -> Node:
        _check_broadcast(a, b, "add")
        sa, sb = a.shape, b.shape
        return self._push(a.value + b.value, "add", (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a: Node, b: Node) -> Node:
        _check_broadcast(a, b, "sub")
        sa, sb = a.shape, b.shape
        return self._push(a.value - b.value, "sub", (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def mul(self, a: Node, b: Node) -> Node:
        _check_broadcast(a, b, "mul")
        av, bv, sa, sb = a.value, b.value, a.shape, b.shape
        return self._push(av * bv, "mul", (a, b), lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))

    def div(self, a: Node, b: Node) -> Node:
        _check_broadcast(a, b, "div")
        av, bv, sa, sb = a.value, b.value, a.shape, b.shape
        out = av / bv

        def vjp(g):
            return _unbroadcast(g / bv, sa), _unbroadcast(-g * out / bv, sb)

        return self._push(out, "div", (a, b), vjp)

    def scale(self, a: Node, c: float) -> Node:
        c = float(c)
        return self._push(a.value * c, "scale", (a,), lambda g: (g * c,))

    def add_const(self, a: Node, c) -> Node:
        return self._push(a.value + c, "add_const", (a,), lambda g: (g,))

    def square(self, a: Node) -> Node:
        av = a.value
        return self._push(av * av, "square", (a,), lambda g: (2.0 * g * av,))

    # -- elementwise nonlinearities ----------------------------------------
    def relu(self, a: Node) -> Node:
        mask = a.value > 0.0
        node = self._push(np.where(mask, a.value, 0.0), "relu", (a,), lambda g: (g * mask,))
        self._kink(node, mask)
        return node

    def sin(self, a: Node) -> Node:
        av = a.value
        return self._push(np.sin(av), "sin", (a,), lambda g: (g * np.cos(av),))

    def tanh(self, a: Node) -> Node:
        out = np.tanh(a.value)
        return self._push(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))

    def exp(self, a: Node) -> Node:
        with np.errstate(over="ignore"):
            out = np.exp(a.value)
        return self._push(out, "exp", (a,), lambda g: (g * out,))

    def log(self, a: Node) -> Node:
        av = a.value
        if np.any(av <= 0.0):
            raise NumericError(f"log of non-positive value at node #{len(self.nodes)}")
        return self._push(np.log(av), "log", (a,), lambda g: (g / av,))

    def clamp(self, a: Node, lo: float, hi: float) -> Node:
        av = a.value
        inside = (av > lo) & (av < hi)
        node = self._push(np.clip(av, lo, hi), "clamp", (a,), lambda g: (g * inside,))
        self._kink(node, np.concatenate([av > lo, av < hi]))
        return node

    def mod(self, a: Node, period: float) -> Node:
        """``a mod period`` into [0, period); derivative 1 almost everywhere."""
        wraps = np.floor(a.value / period)
        out = a.value - wraps * period
        node = self._push(out, "mod", (a,), lambda g: (g,))
        self._kink(node, wraps)
        return node

    # -- row-wise reductions -----------------------------------------------
    def softmax_row(self, a: Node) -> Node:
        z = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=1, keepdims=True)

        def vjp(g):
            return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

        return self._push(s, "softmax_row", (a,), vjp)

    def logsumexp_row(self, a: Node) -> Node:
        av = a.value
        m = av.max(axis=1, keepdims=True)
        e = np.exp(av - m)
        se = e.sum(axis=1, keepdims=True)
        out = np.log(se) + m
        soft = e / se
        return self._push(out, "logsumexp_row", (a,), lambda g: (g * soft,))

    def sum_all(self, a: Node) -> Node:
        shape = a.shape
        return self._push(np.array([[a.value.sum()]]), "sum_all", (a,), lambda g: (np.full(shape, g[0, 0]),))

    def mean_all(self, a: Node) -> Node:
        shape = a.shape
        n = a.value.size
        return self._push(np.array([[a.value.mean()]]), "mean_all", (a,), lambda g: (np.full(shape, g[0, 0] / n),))

    # -- structural --------------------------------------------------------
    def concat(self, nodes: list[Node]) -> Node:
        """Concatenate along columns."""
        rows = {n.shape[0] for n in nodes}
        if len(rows) != 1:
            raise ShapeError(f"concat: row counts differ {sorted(rows)}")
        widths = [n.shape[1] for n in nodes]
        splits = np.cumsum(widths)[:-1]
        return self._push(
            np.concatenate([n.value for n in nodes], axis=1),
            "concat",
            tuple(nodes),
            lambda g: tuple(np.split(g, splits, axis=1)),
        )

    def slice_cols(self, a: Node, start: int, stop: int) -> Node:
        shape = a.shape

        def vjp(g):
            full = np.zeros(shape)
            full[:, start:stop] = g
            return (full,)

        return self._push(a.value[:, start:stop], "slice_cols", (a,), vjp)

    def gather_rows(self, table: Node, idx) -> Node:
        idx = np.asarray(idx, dtype=np.intp)
        shape = table.shape

        def vjp(g):
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            return (full,)

        return self._push(table.value[idx], "gather_rows", (table,), vjp)

    def gather_bilinear(self, grid: Node, uv, height: int, width: int) -> Node:
        """Bilinear lookup in a (height*width, C) row-major grid.

        ``uv`` is an (N, 2) array of continuous (column, row) cell coordinates:
        integer values sit exactly on cell centres. Coordinates outside the
        grid are clamped to the edge cells. Differentiable w.r.t. ``grid``.
        """
        if grid.shape[0] != height * width:
            raise ShapeError(f"gather_bilinear: grid has {grid.shape[0]} rows, expected {height}*{width}")
        uv = np.asarray(uv, dtype=np.float64)
        cx = np.clip(uv[:, 0], 0.0, width - 1.0)
        cy = np.clip(uv[:, 1], 0.0, height - 1.0)
        x0 = np.minimum(np.floor(cx).astype(np.intp), max(width - 2, 0))
        y0 = np.minimum(np.floor(cy).astype(np.intp), max(height - 2, 0))
        x1 = np.minimum(x0 + 1, width - 1)
        y1 = np.minimum(y0 + 1, height - 1)
        fx = (cx - x0)[:, None]
        fy = (cy - y0)[:, None]
        idx = (y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1)
        wts = ((1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy)
        gv = grid.value
        out = wts[0] * gv[idx[0]] + wts[1] * gv[idx[1]] + wts[2] * gv[idx[2]] + wts[3] * gv[idx[3]]
        shape = grid.shape

        def vjp(g):
            full = np.zeros(shape)
            for i, w in zip(idx, wts):
                np.add.at(full, i, g * w)
            return (full,)

        return self._push(out, "gather_bilinear", (grid,), vjp)

    # -- reverse pass ------------------------------------------------------
    def backward(self, loss: Node) -> dict[int, np.ndarray]:
        """Gradients of scalar ``loss`` w.r.t. every leaf, keyed by leaf id.

        Leaves that do not influence ``loss`` receive zeros.
        """
        if not self.record:
            raise RuntimeError("backward on a non-recording tape")
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a scalar (1, 1) loss, got {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.id: np.ones((1, 1))}
        for node in reversed(self.nodes[: loss.id + 1]):
            g = grads.pop(node.id, None) if node.op != "leaf" else grads.get(node.id)
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if parent.op == "const":
                    continue
                if parent.id in grads:
                    grads[parent.id] = grads[parent.id] + pg
                else:
                    grads[parent.id] = pg
        return {leaf.id: grads.get(leaf.id, np.zeros(leaf.shape)) for leaf in self.leaves}


@dataclass
class GradCheckResult:
    max_rel_error: float
    errors: np.ndarray
    excluded: list = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return bool(self.max_rel_error <= tol)


def relative_error(a, b, floor: float = 1e-3):
    """|a - b| / max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    f: Callable[[Tape, Node], Node],
    x0,
    step: float = 1e-6,
    coords=None,
    floor: float = 1e-3,
) -> GradCheckResult:
    """Compare reverse-mode gradient of ``f`` at ``x0`` with central differences.

    ``f(tape, x)`` builds a scalar loss from the leaf ``x``. Coordinates whose
    perturbation flips the branch of any relu/clamp/mod node are reported in
    ``excluded`` and left out of ``max_rel_error``.
    """
    x0 = _as2d(x0)
    tape = Tape()
    x = tape.leaf(x0)
    loss = f(tape, x)
    base_sig = tape.kink_signature()
    grad = tape.backward(loss)[x.id].ravel()

    def evaluate(xv):
        t = Tape()
        out = f(t, t.leaf(xv))
        return float(out.value[0, 0]), t.kink_signature()

    flat = x0.ravel()
    if coords is None:
        coords = range(flat.size)
    errors = np.full(flat.size, np.nan)
    excluded = []
    for i in coords:
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        fp, sp = evaluate(xp.reshape(x0.shape))
        fm, sm = evaluate(xm.reshape(x0.shape))
        if sp != base_sig or sm != base_sig:
            excluded.append(i)
            continue
        errors[i] = relative_error(grad[i], (fp - fm) / (2.0 * step), floor)
    checked = errors[~np.isnan(errors)]
    return GradCheckResult(float(checked.max()) if checked.size else 0.0, errors, excluded)
