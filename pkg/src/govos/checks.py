"""Executable convergence checks comparing the matrix-free solver with the dense oracle."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import oracle
from .features import frame_blocks
from .media_io import FlowSet, VideoTensor
from .solver import Problem, RidgeProjector, SolverConfig, build_problem, init_mask, iterate


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} value={self.value:.3e}  limit={self.limit:.1e}  {self.detail}"


def feature_matrix_for(problem: Problem, mode: str) -> np.ndarray:
    """Dense F (global) or block-diagonal F_f (per-frame)."""
    if mode == "global":
        return problem.features.data
    return oracle.dense_block_F_f(frame_blocks(problem.features, problem.h, problem.w, problem.m))


def dense_operator(problem: Problem, beta: float, mode: str, cap: int = oracle.DEFAULT_CAP):
    M = oracle.dense_M(problem.edges, cap=cap)
    P = oracle.dense_P(feature_matrix_for(problem, mode), beta)
    return M, oracle.dense_A_alg(M, P)


def relative_gap(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| / max |b|."""
    return float(np.abs(a - b).max() / np.abs(b).max())


def converge_theory(M, F, alpha, beta, x0, max_iters=50_000, chunk=500, target=1e-9):
    A = oracle.dense_A_theory(M, F, alpha, beta)
    x = np.asarray(x0, dtype=np.float64)
    res = np.inf
    for _ in range(0, max_iters, chunk):
        x = oracle.theoretical_iteration(M, F, alpha, beta, x, chunk)
        lam = x @ A @ x
        res = np.linalg.norm(A @ x - lam * x) / np.linalg.norm(x)
        if res <= target:
            break
    return x, A, res


def run_checks(video: VideoTensor, flows: FlowSet, config: Optional[SolverConfig] = None,
               seed: int = 0, init_maps: Optional[np.ndarray] = None,
               cap: int = oracle.DEFAULT_CAP) -> list:
    config = config or SolverConfig()
    if video.n > cap:
        raise oracle.SizeCapError(f"n = {video.n} exceeds the dense oracle cap of {cap}")
    m, h, w = video.m, video.h, video.w
    problem = build_problem(video, flows, config)
    M, A = dense_operator(problem, config.beta, config.regression, cap)
    projector = problem.projector(config.beta, config.regression)
    x0 = init_mask("gaussian", m, h, w, config.init_sigma).x
    results = []

    # every solver step is one power-iteration step on A_alg
    _, diag, _ = iterate(problem.edges, projector, x0, 20, keep_iterates=True)
    prev, worst = x0, 1.0
    for it in diag.iterates:
        worst = min(worst, oracle.cosine(it, A @ prev))
        prev = it
    results.append(CheckResult("step_equals_dense_A_alg", 1 - worst <= 1e-8, 1 - worst, 1e-8))

    # convergence onto the dense dominant eigenvector
    x50, _, _ = iterate(problem.edges, projector, x0, 50)
    lam, v = oracle.dominant_eig(A, 500)
    gap = 1 - oracle.cosine(x50, v)
    results.append(CheckResult("converges_to_dominant_eig", gap <= 1e-6, gap, 1e-6, f"lambda={lam:.6f}"))

    # sampled global optimality and the Rayleigh identity
    margin = oracle.sampled_dominance(A, v, 1000, seed)
    results.append(CheckResult("sampled_dominance", margin >= -1e-9, margin, -1e-9, "margin"))
    vn = v / np.linalg.norm(v)
    rayleigh = abs(vn @ A @ vn - lam)
    results.append(CheckResult("rayleigh_identity", rayleigh <= 1e-10 * max(1.0, abs(lam)), rayleigh, 1e-10))

    # per-frame regression equals global regression on the block matrix
    if config.regression == "per_frame":
        block = RidgeProjector(feature_matrix_for(problem, "per_frame"), config.beta, "global")
        _, d_pf, _ = iterate(problem.edges, projector, x0, 10, keep_iterates=True)
        _, d_bl, _ = iterate(problem.edges, block, x0, 10, keep_iterates=True)
        worst = max(relative_gap(a, b) for a, b in zip(d_pf.iterates, d_bl.iterates))
        results.append(CheckResult("per_frame_equals_block_F", worst <= 1e-8, worst, 1e-8))

    # theoretical path: fixed point of the coupled x/w updates is an eigenvector of A(alpha)
    F = problem.features.data
    worst = 0.0
    for alpha, beta in itertools.product((0.5, 1.0, 2.0), repeat=2):
        _, _, res = converge_theory(M, F, alpha, beta, x0)
        worst = max(worst, res)
    results.append(CheckResult("theory_fixed_point", worst <= 1e-8, worst, 1e-8))

    # initialization invariance
    rng = np.random.default_rng(seed)
    if init_maps is None:
        init_maps = rng.random((m, h, w))
    starts = {
        "gaussian": x0,
        "uniform": init_mask("uniform", m, h, w).x,
        "random": init_mask("random", m, h, w, seed=seed).x,
        "external": init_mask("external", m, h, w, maps=init_maps).x,
    }
    finals = {k: iterate(problem.edges, projector, s, 200, tol=1e-15)[0] for k, s in starts.items()}
    worst = min(oracle.cosine(a, b) for a, b in itertools.combinations(finals.values(), 2))
    results.append(CheckResult("init_invariance", 1 - worst <= 1e-4, 1 - worst, 1e-4))
    return results
