"""Dense reference matrices for checking the matrix-free solver on small videos.

Everything here is O(n^2) memory or worse and guarded by a node cap.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy import linalg

from .graph import EdgeList

DEFAULT_CAP = 20_000


class SizeCapError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    """Power iteration stalled, e.g. a complex or tied dominant eigenpair."""


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise SizeCapError(f"n = {n} exceeds the dense oracle cap of {cap}")


def dense_M(edges: EdgeList, n: Optional[int] = None, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Materialize the symmetric adjacency matrix from an edge list."""
    n = edges.n if n is None else n
    _check_cap(n, cap)
    M = np.zeros((n, n))
    M[edges.i, edges.j] = edges.weight
    M[edges.j, edges.i] = edges.weight
    return M


def dense_P(F: np.ndarray, beta: float) -> np.ndarray:
    """Ridge hat matrix F (F^T F + beta I)^-1 F^T."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    F = np.asarray(F, dtype=np.float64)
    _check_cap(F.shape[0], DEFAULT_CAP)
    G = F.T @ F + beta * np.eye(F.shape[1])
    P = F @ np.linalg.solve(G, F.T)
    return 0.5 * (P + P.T)


def dense_A_alg(M: np.ndarray, P: np.ndarray) -> np.ndarray:
    if M.shape != P.shape or M.shape[0] != M.shape[1]:
        raise ValueError(f"size mismatch: M {M.shape}, P {P.shape}")
    return M @ P


def dense_A_theory(M: np.ndarray, F: np.ndarray, alpha: float, beta: float) -> np.ndarray:
    """M + 4 alpha^2 F (alpha F^T F + beta I)^-1 F^T."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be > 0")
    F = np.asarray(F, dtype=np.float64)
    R = alpha * (F.T @ F) + beta * np.eye(F.shape[1])
    B = F @ np.linalg.solve(R, F.T)
    A = M + 4.0 * alpha ** 2 * 0.5 * (B + B.T)
    return A


def theoretical_iteration(M: np.ndarray, F: np.ndarray, alpha: float, beta: float,
                          x0: np.ndarray, iters: int) -> np.ndarray:
    """Coupled x/w updates: x <- (M x + 2 alpha F w) / norm, w = 2 alpha R^-1 F^T x."""
    F = np.asarray(F, dtype=np.float64)
    R = alpha * (F.T @ F) + beta * np.eye(F.shape[1])
    fac = linalg.cho_factor(R)
    x = np.asarray(x0, dtype=np.float64)
    x = x / np.linalg.norm(x)
    w = 2.0 * alpha * linalg.cho_solve(fac, F.T @ x)
    for _ in range(iters):
        y = M @ x + 2.0 * alpha * (F @ w)
        norm = np.linalg.norm(y)
        if norm == 0:
            raise ValueError("zero-norm update")
        x = y / norm
        w = 2.0 * alpha * linalg.cho_solve(fac, F.T @ x)
    return x


def dominant_eig(A: np.ndarray, iters: int = 500, tol: float = 0.0,
                 x0: Optional[np.ndarray] = None, patience: int = 50) -> tuple[float, np.ndarray]:
    """Dense L2-normalized power iteration.

    Stops when the direction change ``1 - |cos|`` drops below ``tol``. Raises
    :class:`NonConvergenceError` if the change stops shrinking for
    ``patience`` iterations while still above ``max(tol, 1e-12)``.
    """
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if not np.any(A):
        raise ValueError("dominant_eig of a zero matrix")
    x = np.ones(n) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    x /= np.linalg.norm(x)
    best, since_best = np.inf, 0
    floor = max(tol, 1e-12)
    for _ in range(iters):
        y = A @ x
        norm = np.linalg.norm(y)
        if norm == 0:
            raise NonConvergenceError("iterate annihilated by A")
        y /= norm
        change = 1.0 - abs(float(x @ y))
        x = y
        if change < tol:
            break
        if change < best * (1 - 1e-3):
            best, since_best = change, 0
        else:
            since_best += 1
            if since_best >= patience and change > floor and change > 1e-9:
                raise NonConvergenceError(
                    f"direction change stalled at {change:.3e} (oscillating dominant pair?)"
                )
    if x.sum() < 0:
        x = -x
    lam = float(x @ (A @ x) / (x @ x))
    return lam, x


def dense_block_F_f(blocks) -> np.ndarray:
    """Block-diagonal n x (d m) feature matrix with F_t on the diagonal."""
    blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
    if len({b.shape[1] for b in blocks}) != 1:
        raise ValueError("all frame blocks need the same width d")
    return linalg.block_diag(*blocks)


def objective_S(M, F, x, w, alpha: float, beta: float) -> float:
    """x^T M x - alpha |F w - x|^2 - beta |w|^2."""
    r = F @ w - x
    return float(x @ (M @ x) - alpha * (r @ r) - beta * (w @ w))


def sampled_dominance(A: np.ndarray, v: np.ndarray, probes: int = 1000,
                      seed: int = 0) -> float:
    """Margin v^T A v - max over random unit probes of u^T A u (v unit-normalized)."""
    v = v / np.linalg.norm(v)
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((probes, A.shape[0]))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    vals = np.einsum("ij,ij->i", U @ A.T, U)
    return float(v @ A @ v - vals.max())


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))
