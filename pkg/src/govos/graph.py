"""Optical-flow chains and the matrix-free spacetime adjacency operator.

Nodes are pixels, numbered ``i = t*h*w + y*w + x``. Every node has one
forward and one backward successor (or none, when the rounded flow target
leaves the frame). Two nodes share an edge when a chain links them within
``r`` frames; the edge weight is a Gaussian of their temporal distance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from .media_io import FlowSet

NONE = -1


def node_id(t, y, x, h: int, w: int):
    return (t * h + y) * w + x


def node_coords(i, h: int, w: int):
    """Inverse of :func:`node_id`; returns (t, y, x)."""
    t, rem = np.divmod(i, h * w)
    y, x = np.divmod(rem, w)
    return t, y, x


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


@dataclass
class ChainTable:
    """Successor links; ``NONE`` (-1) marks a terminated chain."""

    fwd_next: np.ndarray
    bwd_next: np.ndarray
    m: int
    h: int
    w: int

    @property
    def n(self) -> int:
        return self.m * self.h * self.w

    def successors(self, direction: str) -> np.ndarray:
        if direction == "fwd":
            return self.fwd_next
        if direction == "bwd":
            return self.bwd_next
        raise ValueError(f"direction must be 'fwd' or 'bwd', got {direction!r}")


def _step_targets(fields: np.ndarray, offset: int, m: int, h: int, w: int) -> np.ndarray:
    """Successor ids for frames whose outgoing field is ``fields[k]``.

    ``offset`` is +1 for forward fields (frame k -> k+1) and -1 for
    backward fields (frame k+1 -> k).
    """
    k = fields.shape[0]
    yy, xx = np.mgrid[0:h, 0:w]
    tx = xx[None] + round_half_away(fields[..., 0]).astype(np.int64)
    ty = yy[None] + round_half_away(fields[..., 1]).astype(np.int64)
    inside = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
    src_t = np.arange(k) if offset > 0 else np.arange(1, k + 1)
    dst_t = src_t + offset
    ids = node_id(dst_t[:, None, None], ty, tx, h, w)
    return np.where(inside, ids, NONE).reshape(-1)


def build_chains(flows: FlowSet) -> ChainTable:
    """Follow each pixel's flow one frame in each direction."""
    m, h, w = flows.m, flows.h, flows.w
    hw = h * w
    fwd = np.full(m * hw, NONE, dtype=np.int64)
    bwd = np.full(m * hw, NONE, dtype=np.int64)
    fwd[: (m - 1) * hw] = _step_targets(flows.forward, +1, m, h, w)
    bwd[hw:] = _step_targets(flows.backward, -1, m, h, w)
    return ChainTable(fwd, bwd, m, h, w)


def chain_walk(chains: ChainTable, start: int, direction: str, steps: int) -> list:
    """Nodes visited after ``start`` following one direction, up to ``steps``."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    nxt = chains.successors(direction)
    out = []
    cur = int(start)
    for _ in range(steps):
        cur = int(nxt[cur])
        if cur == NONE:
            break
        out.append(cur)
    return out


def kernel(dt, sigma_k: float):
    """Gaussian temporal weight exp(-dt^2 / (2 sigma_k^2))."""
    if sigma_k <= 0:
        raise ValueError("sigma_k must be positive")
    dt = np.asarray(dt, dtype=np.float64)
    out = np.exp(-dt * dt / (2.0 * sigma_k * sigma_k))
    return float(out) if out.ndim == 0 else out


@dataclass
class EdgeList:
    """Deduplicated undirected edges with ``i < j``, sorted by (i, j)."""

    i: np.ndarray
    j: np.ndarray
    weight: np.ndarray
    n: int
    r: int
    sigma_k: float
    _csr: Optional[sparse.csr_matrix] = None

    def __len__(self) -> int:
        return int(self.i.size)

    def as_csr(self) -> sparse.csr_matrix:
        """Symmetric sparse adjacency, built lazily for the fast propagation path."""
        if self._csr is None:
            rows = np.concatenate([self.i, self.j])
            cols = np.concatenate([self.j, self.i])
            vals = np.concatenate([self.weight, self.weight])
            self._csr = sparse.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        return self._csr


def build_edges(chains: ChainTable, r: int = 5, sigma_k: float = 2.0) -> EdgeList:
    """Link every node to the first ``r`` nodes along both of its chains."""
    if r < 1:
        raise ValueError("radius r must be >= 1")
    if sigma_k <= 0:
        raise ValueError("sigma_k must be positive")
    n = chains.n
    hw = chains.h * chains.w
    src_all, dst_all = [], []
    for nxt in (chains.fwd_next, chains.bwd_next):
        src = np.arange(n, dtype=np.int64)
        cur = src
        for _ in range(r):
            cur = nxt[cur]
            alive = cur != NONE
            src, cur = src[alive], cur[alive]
            if src.size == 0:
                break
            src_all.append(src)
            dst_all.append(cur)
    if src_all:
        a = np.concatenate(src_all)
        b = np.concatenate(dst_all)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        keys = np.unique(lo * n + hi)
        i, j = np.divmod(keys, n)
    else:
        i = j = np.empty(0, dtype=np.int64)
    dt = j // hw - i // hw
    return EdgeList(i, j, kernel(dt, sigma_k) if dt.size else np.empty(0), n, r, sigma_k)


def propagate(edges: EdgeList, x: np.ndarray, deterministic: bool = True) -> np.ndarray:
    """Matrix-free ``M @ x``: every edge votes its weight both ways.

    The deterministic path accumulates with ``bincount`` in edge order; the
    fast path uses a cached CSR matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (edges.n,):
        raise ValueError(f"x must have shape ({edges.n},), got {x.shape}")
    if not deterministic:
        return edges.as_csr() @ x
    out = np.bincount(edges.i, weights=edges.weight * x[edges.j], minlength=edges.n).astype(np.float64)
    out += np.bincount(edges.j, weights=edges.weight * x[edges.i], minlength=edges.n)
    return out
