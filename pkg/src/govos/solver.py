"""Segmentation loop: ridge regression on node features, projection onto the
features, propagation over the spacetime graph.

Each step maps a label vector ``x`` to ``M P x`` rescaled so its maximum is
1, where ``P = F (F^T F + beta I)^-1 F^T`` is the ridge hat matrix and ``M``
the chain adjacency. Repeating the step is power iteration on
``M P``; its leading eigenvector is the segmentation.
"""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg

from . import features as feat
from .graph import EdgeList, build_chains, build_edges, propagate
from .media_io import FlowSet, VideoTensor

log = logging.getLogger(__name__)


class DegenerateError(ValueError):
    """The graph or mask carries no signal (empty graph, zero or constant mask)."""


@dataclass
class SolverConfig:
    radius: int = 5
    sigma_k: float = 2.0
    beta: float = 1.0
    iterations: int = 7
    tol: float = 1e-6
    init: str = "gaussian"
    init_sigma: Optional[float] = None  # default 0.25 * min(h, w)
    seed: int = 0
    regression: str = "per_frame"
    chain_steps: int = 5
    channels: tuple = ("motion", "color")
    color_mode: str = "node_only"
    standardize: bool = True
    bias: bool = False
    threshold: float = 0.3  # calibrated on held-out synthetic seeds
    deterministic: bool = True

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.validate()

    def validate(self) -> None:
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.sigma_k <= 0:
            raise ValueError("sigma_k must be > 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.init not in ("gaussian", "uniform", "random", "external"):
            raise ValueError(f"unknown init scheme {self.init!r}")
        if self.regression not in ("per_frame", "global"):
            raise ValueError(f"unknown regression mode {self.regression!r}")
        if self.chain_steps < 1:
            raise ValueError("chain_steps must be >= 1")
        unknown = set(self.channels) - {"motion", "color", "prob"}
        if unknown or not self.channels:
            raise ValueError(f"bad feature channels {self.channels!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class SoftMask:
    x: np.ndarray
    m: int
    h: int
    w: int
    iteration: int = 0

    def frames(self) -> np.ndarray:
        return self.x.reshape(self.m, self.h, self.w)


@dataclass
class RegressionModel:
    mode: str
    beta: float
    weights: np.ndarray  # (d,) for global, (m, d) for per_frame


@dataclass
class Diagnostics:
    direction_change: list = field(default_factory=list)
    rayleigh: list = field(default_factory=list)
    min_value: list = field(default_factory=list)
    iterates: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    converged: bool = False


# --------------------------------------------------------------------------
# initialization


def init_mask(scheme: str, m: int, h: int, w: int, sigma: Optional[float] = None,
              seed: int = 0, maps: Optional[np.ndarray] = None) -> SoftMask:
    """Initial labels: centred Gaussian, all-ones, seeded uniform noise, or given maps."""
    if scheme == "gaussian":
        sigma = 0.25 * min(h, w) if sigma is None else sigma
        if sigma <= 0:
            raise ValueError("gaussian init needs sigma > 0")
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        g = np.exp(-((yy - (h - 1) / 2.0) ** 2 + (xx - (w - 1) / 2.0) ** 2) / (2.0 * sigma ** 2))
        x = np.broadcast_to(g, (m, h, w)).reshape(-1).copy()
    elif scheme == "uniform":
        x = np.ones(m * h * w)
    elif scheme == "random":
        # numpy PCG64 via default_rng, i.i.d. U[0, 1)
        x = np.random.default_rng(seed).random(m * h * w)
    elif scheme == "external":
        if maps is None:
            raise ValueError("external init needs maps")
        maps = np.asarray(maps, dtype=np.float64)
        if maps.shape != (m, h, w):
            raise ValueError(f"init maps have shape {maps.shape}, expected {(m, h, w)}")
        x = maps.reshape(-1).copy()
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return SoftMask(x, m, h, w, 0)


# --------------------------------------------------------------------------
# regression / projection


def ridge_solve(F: np.ndarray, x: np.ndarray, beta: float) -> np.ndarray:
    """Solve (F^T F + beta I) w = F^T x."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    F = np.asarray(F, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(x))):
        raise ValueError("non-finite input to ridge_solve")
    gram = F.T @ F + beta * np.eye(F.shape[1])
    return linalg.solve(gram, F.T @ x, assume_a="pos")


class RidgeProjector:
    """Applies x -> F w(x) with the ridge factorizations computed once.

    In ``per_frame`` mode each frame block F_t gets its own model w_t.
    """

    def __init__(self, F, beta: float = 1.0, mode: str = "per_frame", frame_size: Optional[int] = None):
        data = F.data if isinstance(F, feat.FeatureMatrix) else np.asarray(F, dtype=np.float64)
        if beta <= 0:
            raise ValueError("beta must be > 0")
        if mode not in ("per_frame", "global"):
            raise ValueError(f"unknown regression mode {mode!r}")
        self.beta = beta
        self.mode = mode
        self.n, self.d = data.shape
        if mode == "global":
            self.blocks = [data]
        else:
            if frame_size is None or frame_size <= 0 or self.n % frame_size:
                raise ValueError("per-frame regression needs a frame size dividing n")
            self.blocks = [data[s:s + frame_size] for s in range(0, self.n, frame_size)]
        eye = beta * np.eye(self.d)
        self._factors = [linalg.cho_factor(B.T @ B + eye) for B in self.blocks]

    def fit(self, x: np.ndarray) -> RegressionModel:
        weights, start = [], 0
        for B, fac in zip(self.blocks, self._factors):
            stop = start + B.shape[0]
            weights.append(linalg.cho_solve(fac, B.T @ x[start:stop]))
            start = stop
        w = weights[0] if self.mode == "global" else np.stack(weights)
        return RegressionModel(self.mode, self.beta, w)

    def predict(self, model: RegressionModel) -> np.ndarray:
        ws = [model.weights] if self.mode == "global" else list(model.weights)
        return np.concatenate([B @ w for B, w in zip(self.blocks, ws)])

    def project(self, x: np.ndarray) -> tuple[np.ndarray, RegressionModel]:
        model = self.fit(x)
        return self.predict(model), model


def max_normalize(p: np.ndarray) -> np.ndarray:
    """Divide by max(p); falls back to max|p| so the direction never flips."""
    top = p.max(initial=-np.inf)
    if not top > 0:
        top = np.abs(p).max(initial=0.0)
    if not top > 0 or not np.isfinite(top):
        raise DegenerateError("propagation annihilated the mask (empty graph or zero labels)")
    return p / top


def govos_step(edges: EdgeList, projector: RidgeProjector, x: np.ndarray,
               deterministic: bool = True) -> tuple[np.ndarray, RegressionModel, np.ndarray]:
    """One regression/projection/propagation cycle.

    Returns the max-normalized ``M F w`` (the next label vector), the ridge
    model fitted to ``x`` and the raw, unnormalized ``M P x``.
    """
    projected, model = projector.project(x)
    raw = propagate(edges, projected, deterministic=deterministic)
    return max_normalize(raw), model, raw


def direction_change(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return float(1.0 - abs(a @ b) / (na * nb))


def iterate(edges: EdgeList, projector: RidgeProjector, x0: np.ndarray, iterations: int,
            tol: float = 0.0, deterministic: bool = True,
            keep_iterates: bool = False) -> tuple[np.ndarray, Diagnostics, RegressionModel]:
    """Repeat :func:`govos_step` until ``iterations`` or a direction change below ``tol``."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    x = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial mask must be finite")
    diag = Diagnostics()
    model = None
    for it in range(iterations):
        x_next, model, raw = govos_step(edges, projector, x, deterministic)
        xx = x @ x
        diag.rayleigh.append(float(x @ raw / xx) if xx > 0 else 0.0)
        change = direction_change(x_next, x)
        diag.direction_change.append(change)
        diag.min_value.append(float(x_next.min()))
        if keep_iterates:
            diag.iterates.append(x_next.copy())
        x = x_next
        if change < tol:
            diag.converged = True
            break
    return x, diag, model


# --------------------------------------------------------------------------
# end to end


@dataclass
class Problem:
    edges: EdgeList
    features: feat.FeatureMatrix
    m: int
    h: int
    w: int

    def projector(self, beta: float, mode: str) -> RidgeProjector:
        return RidgeProjector(self.features, beta, mode, self.h * self.w)


def build_features(video: VideoTensor, flows: FlowSet, chains, config: SolverConfig,
                   prob_maps: Optional[np.ndarray] = None) -> feat.FeatureMatrix:
    channels = []
    for name in config.channels:
        if name == "motion":
            channels.append(("motion", feat.motion_chain_features(chains, flows, config.chain_steps)))
        elif name == "color":
            L = config.chain_steps if config.color_mode == "along_chain" else 0
            channels.append(("color", feat.color_features(video, chains, L, config.color_mode)))
        elif name == "prob":
            if prob_maps is None:
                raise ValueError("the 'prob' channel needs probability maps")
            channels.append(("prob", feat.probability_chain_features(prob_maps, chains, config.chain_steps)))
    if prob_maps is not None and "prob" not in config.channels:
        channels.append(("prob", feat.probability_chain_features(prob_maps, chains, config.chain_steps)))
    return feat.assemble(channels, standardize=config.standardize, bias=config.bias)


def build_problem(video: VideoTensor, flows: FlowSet, config: SolverConfig,
                  prob_maps: Optional[np.ndarray] = None, timings: Optional[dict] = None) -> Problem:
    flows.check_matches(video)
    t0 = time.perf_counter()
    chains = build_chains(flows)
    edges = build_edges(chains, config.radius, config.sigma_k)
    t1 = time.perf_counter()
    F = build_features(video, flows, chains, config, prob_maps)
    t2 = time.perf_counter()
    if timings is not None:
        timings["graph"] = t1 - t0
        timings["features"] = t2 - t1
    log.debug("graph: %d nodes, %d edges; features d=%d", edges.n, len(edges), F.d)
    return Problem(edges, F, video.m, video.h, video.w)


def run(video: VideoTensor, flows: FlowSet, config: Optional[SolverConfig] = None,
        prob_maps: Optional[np.ndarray] = None, init_maps: Optional[np.ndarray] = None,
        keep_iterates: bool = False) -> tuple[SoftMask, Diagnostics]:
    """Segment the dominant object; the returned mask is not yet range-normalized."""
    config = config or SolverConfig()
    timings: dict = {}
    problem = build_problem(video, flows, config, prob_maps, timings)
    x0 = init_mask(config.init, video.m, video.h, video.w, config.init_sigma, config.seed, init_maps)
    t0 = time.perf_counter()
    projector = problem.projector(config.beta, config.regression)
    x, diag, _ = iterate(problem.edges, projector, x0.x, config.iterations, config.tol,
                         config.deterministic, keep_iterates)
    timings["solve"] = time.perf_counter() - t0
    diag.timings = timings
    return SoftMask(x, video.m, video.h, video.w, len(diag.direction_change)), diag


def finalize_mask(x) -> np.ndarray:
    """Fix the sign so the labels sum to >= 0, then min-max scale to [0, 1]."""
    arr = np.asarray(x.x if isinstance(x, SoftMask) else x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("mask must be finite")
    if arr.sum() < 0:
        arr = -arr
    lo, hi = arr.min(), arr.max()
    if hi - lo <= 0:
        raise DegenerateError("constant mask has zero range")
    out = (arr - lo) / (hi - lo)
    if isinstance(x, SoftMask):
        return out.reshape(x.m, x.h, x.w)
    return out


def binarize(mask: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return np.asarray(mask) >= threshold
