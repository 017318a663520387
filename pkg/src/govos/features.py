"""Node descriptors collected along outgoing flow chains."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import NONE, ChainTable
from .media_io import FlowSet, VideoTensor


@dataclass
class FeatureMatrix:
    data: np.ndarray
    layout: list = field(default_factory=list)
    standardized: bool = False

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def _chain_positions(nxt: np.ndarray, steps: int) -> np.ndarray:
    """(steps, n) array of node ids visited from each node, ``NONE``-padded.

    Row 0 is the node itself.
    """
    n = nxt.size
    out = np.full((steps, n), NONE, dtype=np.int64)
    if steps == 0:
        return out
    cur = np.arange(n, dtype=np.int64)
    out[0] = cur
    for k in range(1, steps):
        alive = cur != NONE
        cur = np.where(alive, nxt[np.where(alive, cur, 0)], NONE)
        out[k] = cur
    return out


def _gather(values: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """values[pos] with zero where pos is NONE; values is (n, c)."""
    alive = pos != NONE
    out = values[np.where(alive, pos, 0)]
    out[~alive] = 0.0
    return out


def motion_chain_features(chains: ChainTable, flows: FlowSet, L: int = 5) -> np.ndarray:
    """Flow displacements read at the first L nodes of each chain (width 4L).

    Forward chains read forward fields, backward chains read backward
    fields. A node in the last frame has no forward field, so its forward
    reads are zero; likewise backward reads in frame 0.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    h, w = chains.h, chains.w
    hw = h * w
    zeros = np.zeros((hw, 2))
    fwd_disp = np.concatenate([flows.forward.reshape(-1, 2), zeros])
    bwd_disp = np.concatenate([zeros, flows.backward.reshape(-1, 2)])
    parts = []
    for nxt, disp in ((chains.fwd_next, fwd_disp), (chains.bwd_next, bwd_disp)):
        pos = _chain_positions(nxt, L)
        parts.extend(_gather(disp, pos[k]) for k in range(L))
    return np.concatenate(parts, axis=1)


def _node_values_along_chains(values: np.ndarray, chains: ChainTable, L: int) -> np.ndarray:
    """Node value, then L forward-chain values, then L backward-chain values."""
    parts = [values]
    for nxt in (chains.fwd_next, chains.bwd_next):
        pos = _chain_positions(nxt, L + 1)
        parts.extend(_gather(values, pos[k]) for k in range(1, L + 1))
    return np.concatenate(parts, axis=1)


def color_features(video: VideoTensor, chains: ChainTable, L: int = 0, mode: str = "node_only") -> np.ndarray:
    colors = video.data.reshape(-1, video.channels)
    if mode == "node_only":
        return colors.copy()
    if mode == "along_chain":
        if L < 0:
            raise ValueError("L must be >= 0")
        return _node_values_along_chains(colors, chains, L)
    raise ValueError(f"unknown colour mode {mode!r}")


def probability_chain_features(maps: np.ndarray, chains: ChainTable, L: int = 5) -> np.ndarray:
    """External foreground probabilities sampled along both chains (width 2L+1)."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.shape != (chains.m, chains.h, chains.w):
        raise ValueError(f"probability maps {maps.shape} do not match video {(chains.m, chains.h, chains.w)}")
    return _node_values_along_chains(maps.reshape(-1, 1), chains, L)


def standardize_columns(data: np.ndarray) -> np.ndarray:
    """Zero-mean, unit population variance per column; constant columns become 0."""
    mean = data.mean(axis=0)
    centred = data - mean
    std = np.sqrt((centred ** 2).mean(axis=0))
    scale = np.max(np.abs(data), axis=0)
    const = std <= 1e-12 * np.maximum(scale, 1.0)
    out = np.divide(centred, std, out=np.zeros_like(centred), where=~const)
    return out


def assemble(channels, standardize: bool = True, bias: bool = False) -> FeatureMatrix:
    """Concatenate ``(name, array)`` channels into one feature matrix.

    With ``bias`` a trailing constant-1 column is appended after
    standardization, so it stays 1.
    """
    channels = [(name, np.asarray(arr, dtype=np.float64).reshape(len(arr), -1)) for name, arr in channels]
    if not channels:
        raise ValueError("no feature channels")
    n = channels[0][1].shape[0]
    for name, arr in channels:
        if arr.shape[0] != n:
            raise ValueError(f"channel {name!r} has {arr.shape[0]} rows, expected {n}")
    data = np.concatenate([arr for _, arr in channels], axis=1)
    if not np.all(np.isfinite(data)):
        raise ValueError("non-finite feature values")
    if standardize:
        data = standardize_columns(data)
    layout = [(name, arr.shape[1]) for name, arr in channels]
    if bias:
        data = np.concatenate([data, np.ones((n, 1))], axis=1)
        layout.append(("bias", 1))
    return FeatureMatrix(data, layout, standardize)


def frame_blocks(F, h: int, w: int, m: int) -> list:
    """Per-frame row blocks F_t (views, not copies)."""
    data = F.data if isinstance(F, FeatureMatrix) else np.asarray(F)
    hw = h * w
    if data.shape[0] != m * hw:
        raise ValueError(f"feature matrix has {data.shape[0]} rows, expected m*h*w = {m * hw}")
    return [data[t * hw:(t + 1) * hw] for t in range(m)]
