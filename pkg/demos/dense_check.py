"""
Looking at the operator densely
===============================

On a clip small enough to materialize, build the adjacency M, the ridge hat
matrix P and their product, then compare with the matrix-free solver.
"""

import numpy as np

from govos import media_io as mio, oracle
from govos.checks import dense_operator, run_checks
from govos.solver import SolverConfig, build_problem, init_mask, iterate

spec = mio.SynthSpec(m=5, h=8, w=8, size=3, velocity=(1.0, 0.0), background_velocity=(0.0, -1.0))
video, flows, _ = mio.synth_sequence(spec)
problem = build_problem(video, flows, SolverConfig())
M, A = dense_operator(problem, beta=1.0, mode="per_frame")
print(f"n = {M.shape[0]}, edges = {len(problem.edges)}, feature width = {problem.features.d}")

# spectrum: real, with a clear gap, so power iteration converges quickly
ev = np.linalg.eigvals(A)
ev = ev[np.argsort(-np.abs(ev))]
print("leading eigenvalues:", np.round(ev[:4].real, 4), " max |imag| =", f"{np.abs(ev.imag).max():.1e}")
print(f"ratio lambda2/lambda1 = {abs(ev[1] / ev[0]):.3f}")

# M P is not symmetric, so the sampled-dominance check is about x^T A x only
print(f"asymmetry |A - A^T| = {np.abs(A - A.T).max():.3f}")

lam, v = oracle.dominant_eig(A, 500)
x0 = init_mask("uniform", video.m, video.h, video.w).x
x, diag, _ = iterate(problem.edges, problem.projector(1.0, "per_frame"), x0, 50)
print(f"solver after 50 steps vs dense eigenvector: 1 - cos = {1 - oracle.cosine(x, v):.1e}")

for result in run_checks(video, flows):
    print(result.line())
