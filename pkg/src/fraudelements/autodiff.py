"""Minimal reverse-mode automatic differentiation over numpy arrays.

A forward pass builds a DAG of :class:`Var` nodes; ``backward`` walks it in
reverse topological order and accumulates gradients into the leaves. Only the
operations needed by the clause classifier are provided. The recurrent cell is
a single fused node with a hand-derived backward, which keeps the tape short
enough to train at interactive speed.

All values are float64 ndarrays. Gradient shapes always match value shapes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Var:
    """One node of the computation graph."""

    __slots__ = ("value", "parents", "backward_fn", "grad", "requires")

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple["Var", ...] = (),
        backward_fn: Callable[[np.ndarray], tuple] | None = None,
        requires: bool = False,
    ):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad: np.ndarray | None = None
        self.requires = requires

    def __repr__(self) -> str:  # pragma: no cover
        return f"Var(shape={np.shape(self.value)}, requires={self.requires})"


def leaf(value, requires: bool = False) -> Var:
    """Wrap an array as a graph leaf; ``requires=True`` marks a parameter."""
    return Var(np.asarray(value, dtype=np.float64), (), None, requires)


def _needs(*vars_: Var) -> bool:
    return any(v.requires for v in vars_)


def backward(root: Var) -> None:
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf that requires it.

    ``root`` must be a scalar (shape ``()``); its seed gradient is 1.
    """
    order: list[Var] = []
    visited: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires and id(p) not in visited:
                stack.append((p, False))

    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if g is None or not parent.requires:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


# ---------------------------------------------------------------------------
# elementary operations
# ---------------------------------------------------------------------------

def matmul(a: Var, b: Var) -> Var:
    out = Var(a.value @ b.value, (a, b), None, _needs(a, b))

    def bk(g):
        return (g @ b.value.T if a.requires else None,
                a.value.T @ g if b.requires else None)

    out.backward_fn = bk
    return out


def matmul_nt(a: Var, b: Var) -> Var:
    """``a @ b.T`` so weight matrices can be stored as (out, in)."""
    out = Var(a.value @ b.value.T, (a, b), None, _needs(a, b))

    def bk(g):
        return (g @ b.value if a.requires else None,
                g.T @ a.value if b.requires else None)

    out.backward_fn = bk
    return out


def add(a: Var, b: Var) -> Var:
    out = Var(a.value + b.value, (a, b), None, _needs(a, b))
    out.backward_fn = lambda g: (g, g)
    return out


def add_bias(x: Var, b: Var) -> Var:
    """Add a 1-d bias to every row of a 2-d matrix."""
    out = Var(x.value + b.value, (x, b), None, _needs(x, b))
    out.backward_fn = lambda g: (g, g.sum(axis=0))
    return out


def add_n(vars_: Sequence[Var]) -> Var:
    vs = tuple(vars_)
    total = vs[0].value
    for v in vs[1:]:
        total = total + v.value
    out = Var(total, vs, None, _needs(*vs))
    out.backward_fn = lambda g: tuple(g for _ in vs)
    return out


def mul(a: Var, b: Var) -> Var:
    out = Var(a.value * b.value, (a, b), None, _needs(a, b))

    def bk(g):
        return (g * b.value if a.requires else None,
                g * a.value if b.requires else None)

    out.backward_fn = bk
    return out


def scale(a: Var, k: float) -> Var:
    out = Var(a.value * k, (a,), None, a.requires)
    out.backward_fn = lambda g: (g * k,)
    return out


def tanh(a: Var) -> Var:
    val = np.tanh(a.value)
    out = Var(val, (a,), None, a.requires)
    out.backward_fn = lambda g: (g * (1.0 - val * val),)
    return out


def sigmoid(a: Var) -> Var:
    val = 1.0 / (1.0 + np.exp(-a.value))
    out = Var(val, (a,), None, a.requires)
    out.backward_fn = lambda g: (g * val * (1.0 - val),)
    return out


def concat(vars_: Sequence[Var], axis: int = 1) -> Var:
    vs = tuple(vars_)
    sizes = [v.value.shape[axis] for v in vs]
    out = Var(np.concatenate([v.value for v in vs], axis=axis), vs, None, _needs(*vs))
    offsets = np.cumsum([0] + sizes)

    def bk(g):
        pieces = []
        for i, v in enumerate(vs):
            if not v.requires:
                pieces.append(None)
            elif axis == 0:
                pieces.append(g[offsets[i]:offsets[i + 1]])
            else:
                pieces.append(g[:, offsets[i]:offsets[i + 1]])
        return tuple(pieces)

    out.backward_fn = bk
    return out


def take_row(x: Var, i: int) -> Var:
    out = Var(x.value[i:i + 1], (x,), None, x.requires)

    def bk(g):
        gx = np.zeros_like(x.value)
        gx[i:i + 1] = g
        return (gx,)

    out.backward_fn = bk
    return out


def take_rows_slice(x: Var, a: int, b: int) -> Var:
    """Contiguous row slice ``x[a:b]``; backward zero-fills outside it."""
    out = Var(x.value[a:b], (x,), None, x.requires)

    def bk(g):
        gx = np.zeros_like(x.value)
        gx[a:b] = g
        return (gx,)

    out.backward_fn = bk
    return out


def gather_rows(x: Var, idx: np.ndarray) -> Var:
    """Row gather with padding: ``idx`` entries of -1 produce zero rows.

    Backward scatter-adds, so repeated indices accumulate.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.min() >= 0:
        value = x.value[idx]
        valid = None
    else:
        valid = idx >= 0
        value = np.zeros((idx.size, x.value.shape[1]))
        value[valid] = x.value[idx[valid]]
    out = Var(value, (x,), None, x.requires)

    def bk(g):
        gx = np.zeros_like(x.value)
        if valid is None:
            np.add.at(gx, idx, g)
        else:
            np.add.at(gx, idx[valid], g[valid])
        return (gx,)

    out.backward_fn = bk
    return out


def embedding_rows(table: Var, ids: np.ndarray) -> Var:
    """Gather rows ``ids`` from an embedding matrix; backward scatter-adds."""
    out = Var(table.value[ids], (table,), None, table.requires)

    def bk(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, ids, g)
        return (gt,)

    out.backward_fn = bk
    return out


def mean_rows(x: Var) -> Var:
    """Mean over axis 0, keeping a leading unit dimension."""
    n = x.value.shape[0]
    out = Var(x.value.mean(axis=0, keepdims=True), (x,), None, x.requires)
    out.backward_fn = lambda g: (np.repeat(g / n, n, axis=0),)
    return out


def tile_rows(x: Var, n: int) -> Var:
    """Repeat a single-row matrix ``n`` times along axis 0."""
    out = Var(np.repeat(x.value, n, axis=0), (x,), None, x.requires)
    out.backward_fn = lambda g: (g.sum(axis=0, keepdims=True),)
    return out


def softmax_rows(logits: Var) -> Var:
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out = Var(p, (logits,), None, logits.requires)

    def bk(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    out.backward_fn = bk
    return out


def cross_entropy_with_logits(logits: Var, labels: np.ndarray) -> Var:
    """Mean negative log-likelihood over rows; labels are integer class ids."""
    n = logits.value.shape[0]
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(n), labels]
    out = Var(np.asarray((lse - picked).mean()), (logits,), None, logits.requires)

    def bk(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    out.backward_fn = bk
    return out


def weighted_cross_entropy_with_logits(
    logits: Var, labels: np.ndarray, weights: np.ndarray
) -> Var:
    """Weighted sum of per-row negative log-likelihoods.

    With weights 1/(batch * rows-in-group) this reproduces a mean over
    groups of within-group means.
    """
    n = logits.value.shape[0]
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    picked = z[np.arange(n), labels]
    out = Var(np.asarray(((lse - picked) * weights).sum()),
              (logits,), None, logits.requires)

    def bk(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), labels] -= 1.0
        return (p * (weights * g)[:, None],)

    out.backward_fn = bk
    return out


def gru_scan(
    xw: Var,
    u: Var,
    n_rows: int,
    masks: np.ndarray | None = None,
    reverse: bool = False,
) -> Var:
    """Full recurrent scan as one node, with backward-through-time fused.

    ``xw`` holds the pre-projected inputs for all steps, step-major:
    ``(T * n_rows, 3H)`` with step t in rows ``t*n_rows:(t+1)*n_rows``. The
    initial state is zero. ``masks`` (T, n_rows, 1) freezes masked rows, so
    right-padded batches are safe in either direction. Returns all states
    stacked step-major as ``(T * n_rows, H)``.
    """
    hd = u.value.shape[1]
    total = xw.value.shape[0]
    steps = total // n_rows
    xv = xw.value.reshape(steps, n_rows, 3 * hd)
    u_zr = u.value[:2 * hd]
    u_h = u.value[2 * hd:]

    order = list(range(steps - 1, -1, -1) if reverse else range(steps))
    prev_step = [None] * steps
    last = None
    for t in order:
        prev_step[t] = last
        last = t

    zs = np.empty((steps, n_rows, hd))
    rs = np.empty_like(zs)
    rhs = np.empty_like(zs)
    hhs = np.empty_like(zs)
    states = np.empty_like(zs)
    h = np.zeros((n_rows, hd))
    for t in order:
        x = xv[t]
        zr = x[:, :2 * hd] + h @ u_zr.T
        z = 1.0 / (1.0 + np.exp(-zr[:, :hd]))
        r = 1.0 / (1.0 + np.exp(-zr[:, hd:]))
        rh = r * h
        hh = np.tanh(x[:, 2 * hd:] + rh @ u_h.T)
        h_cand = (1.0 - z) * h + z * hh
        if masks is None:
            h = h_cand
        else:
            m = masks[t]
            h = m * h_cand + (1.0 - m) * h
        zs[t], rs[t], rhs[t], hhs[t], states[t] = z, r, rh, hh, h

    out = Var(states.reshape(total, hd), (xw, u), None, _needs(xw, u))

    def bk(g):
        gv = g.reshape(steps, n_rows, hd)
        dxw = np.empty((steps, n_rows, 3 * hd))
        du = np.zeros_like(u.value) if u.requires else None
        dh = np.zeros((n_rows, hd))
        h0 = np.zeros((n_rows, hd))
        for t in reversed(order):
            h_prev = states[prev_step[t]] if prev_step[t] is not None else h0
            z, r, rh, hh = zs[t], rs[t], rhs[t], hhs[t]
            gt = gv[t] + dh
            if masks is None:
                gc = gt
                dh = gc * (1.0 - z)
            else:
                gc = gt * masks[t]
                dh = gt - gc + gc * (1.0 - z)
            dz = gc * (hh - h_prev)
            dhh_pre = (gc * z) * (1.0 - hh * hh)
            drh = dhh_pre @ u_h
            dh += drh * r
            dzr = np.concatenate(
                [dz * z * (1.0 - z), (drh * h_prev) * r * (1.0 - r)], axis=1)
            dh += dzr @ u_zr
            dxw[t, :, :2 * hd] = dzr
            dxw[t, :, 2 * hd:] = dhh_pre
            if du is not None:
                du[:2 * hd] += dzr.T @ h_prev
                du[2 * hd:] += dhh_pre.T @ rh
        return (dxw.reshape(total, 3 * hd), du)

    out.backward_fn = bk
    return out


def mean_pool_steps(
    x: Var, n_rows: int, counts: np.ndarray, masks: np.ndarray | None = None,
) -> Var:
    """Per-row mean over the step axis of a step-major matrix.

    ``x`` is ``(T * n_rows, K)``; the result averages each row's valid steps
    (``masks`` of shape (T, n_rows, 1) marking validity, ``counts`` the number
    of valid steps per row).
    """
    k = x.value.shape[1]
    steps = x.value.shape[0] // n_rows
    xv = x.value.reshape(steps, n_rows, k)
    masked = xv if masks is None else xv * masks
    out_val = masked.sum(axis=0) / counts[:, None]
    out = Var(out_val, (x,), None, x.requires)

    def bk(g):
        gx = np.broadcast_to(g / counts[:, None], (steps, n_rows, k))
        if masks is not None:
            gx = gx * masks
        return (np.ascontiguousarray(gx).reshape(steps * n_rows, k),)

    out.backward_fn = bk
    return out
