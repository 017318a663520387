import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from govos import oracle
from govos.checks import dense_operator
from govos.graph import EdgeList, build_chains, build_edges, propagate
from govos.solver import (DegenerateError, RidgeProjector, SolverConfig, SoftMask, binarize,
                          build_problem, finalize_mask, govos_step, init_mask, iterate,
                          max_normalize, ridge_solve, run)

from conftest import small_instance


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("bad", [dict(radius=0), dict(sigma_k=0), dict(beta=0), dict(iterations=0),
                                 dict(threshold=0.0), dict(threshold=1.0), dict(init="ring"),
                                 dict(regression="pooled"), dict(channels=("depth",))])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        SolverConfig(**bad)


def test_config_defaults():
    c = SolverConfig()
    assert (c.radius, c.sigma_k, c.beta, c.iterations, c.tol) == (5, 2.0, 1.0, 7, 1e-6)
    assert c.regression == "per_frame" and c.init == "gaussian" and c.deterministic


# ---------------------------------------------------------------- init

def test_init_uniform():
    np.testing.assert_array_equal(init_mask("uniform", 2, 3, 4).x, np.ones(24))


def test_init_gaussian_formula():
    x = init_mask("gaussian", 1 + 1, 3, 3, sigma=1.0).frames()[0]
    assert x[1, 1] == 1.0
    assert x[0, 1] == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert x[0, 0] == pytest.approx(np.exp(-1.0), abs=1e-15)


def test_init_random_seeded():
    a, b = init_mask("random", 2, 4, 4, seed=7).x, init_mask("random", 2, 4, 4, seed=7).x
    assert a.tobytes() == b.tobytes()
    assert np.all((a >= 0) & (a < 1))
    assert not np.array_equal(a, init_mask("random", 2, 4, 4, seed=8).x)


def test_init_external_shape_check():
    with pytest.raises(ValueError):
        init_mask("external", 2, 4, 4, maps=np.zeros((2, 4, 5)))
    x = init_mask("external", 2, 4, 4, maps=np.full((2, 4, 4), 0.3)).x
    np.testing.assert_array_equal(x, 0.3)


# ---------------------------------------------------------------- ridge

def test_ridge_one_dim_closed_form():
    F = np.array([[1.0], [2.0]])
    assert ridge_solve(F, np.array([1.0, 2.0]), 1.0)[0] == pytest.approx(5 / 6, abs=1e-15)
    assert ridge_solve(F, np.array([1.0, 2.0]), 3.0)[0] == pytest.approx(5 / 8, abs=1e-15)


def test_ridge_zero_target():
    F = np.random.default_rng(0).standard_normal((10, 3))
    np.testing.assert_array_equal(ridge_solve(F, np.zeros(10), 1.0), 0.0)


def test_ridge_orthonormal_tiny_beta():
    Q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((12, 4)))
    x = np.random.default_rng(2).standard_normal(12)
    np.testing.assert_allclose(ridge_solve(Q, x, 1e-12), Q.T @ x, atol=1e-10)


def test_ridge_residual_and_errors():
    rng = np.random.default_rng(3)
    F, x = rng.standard_normal((30, 5)), rng.standard_normal(30)
    w = ridge_solve(F, x, 0.7)
    res = np.linalg.norm((F.T @ F + 0.7 * np.eye(5)) @ w - F.T @ x)
    assert res <= 1e-8 * np.linalg.norm(F.T @ x)
    x[0] = np.nan
    with pytest.raises(ValueError):
        ridge_solve(F, x, 1.0)


def test_projector_matches_ridge_solve():
    rng = np.random.default_rng(4)
    F, x = rng.standard_normal((24, 3)), rng.standard_normal(24)
    glob = RidgeProjector(F, 0.5, "global")
    np.testing.assert_allclose(glob.project(x)[0], F @ ridge_solve(F, x, 0.5), rtol=1e-12)
    pf = RidgeProjector(F, 0.5, "per_frame", frame_size=8)
    out, model = pf.project(x)
    assert model.weights.shape == (3, 3)
    for t in range(3):
        sl = slice(8 * t, 8 * t + 8)
        np.testing.assert_allclose(out[sl], F[sl] @ ridge_solve(F[sl], x[sl], 0.5), rtol=1e-12)


# ---------------------------------------------------------------- step

def test_max_normalize():
    np.testing.assert_array_equal(max_normalize(np.array([1.0, 4.0, -2.0])), [0.25, 1.0, -0.5])
    # all-negative input keeps its direction
    np.testing.assert_array_equal(max_normalize(np.array([-1.0, -4.0])), [-0.25, -1.0])
    with pytest.raises(DegenerateError):
        max_normalize(np.zeros(3))


def test_step_identity_features():
    video, flows, _ = small_instance(m=3, side=4, size=1)
    edges = build_edges(build_chains(flows))
    n, beta = edges.n, 1e-12
    x = init_mask("gaussian", 3, 4, 4).x
    x_next, model, _ = govos_step(edges, RidgeProjector(np.eye(n), beta, "global"), x)
    p = max_normalize(propagate(edges, x))
    np.testing.assert_allclose(x_next, p / (1 + beta), atol=1e-10)


def test_step_empty_graph_is_degenerate():
    edges = EdgeList(np.empty(0, int), np.empty(0, int), np.empty(0), 4, 1, 1.0)
    with pytest.raises(DegenerateError):
        govos_step(edges, RidgeProjector(np.eye(4), 1.0, "global"), np.ones(4))


def test_step_matches_dense_A_alg(instance):
    video, flows, gt, config, problem = instance
    _, A = dense_operator(problem, config.beta, config.regression)
    x = init_mask("gaussian", video.m, video.h, video.w).x
    x_next, _, _ = govos_step(problem.edges, problem.projector(config.beta, config.regression), x)
    assert oracle.cosine(x_next, A @ x) >= 1 - 1e-8


def test_max_entry_is_one_after_step(instance):
    video, _, _, config, problem = instance
    x, diag, _ = iterate(problem.edges, problem.projector(1.0, "per_frame"),
                         init_mask("uniform", video.m, video.h, video.w).x, 5)
    assert x.max() == 1.0
    assert len(diag.min_value) == 5


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-3, 1e3))
def test_scale_invariance(c):
    video, flows, _ = small_instance(seed=1)
    problem = build_problem(video, flows, SolverConfig())
    proj = problem.projector(1.0, "per_frame")
    x0 = init_mask("gaussian", video.m, video.h, video.w).x
    _, a, _ = iterate(problem.edges, proj, x0, 4, keep_iterates=True)
    _, b, _ = iterate(problem.edges, proj, c * x0, 4, keep_iterates=True)
    for u, v in zip(a.iterates, b.iterates):
        assert np.abs(u - v).max() <= 1e-12


# ---------------------------------------------------------------- run

def test_run_iterations():
    video, flows, _ = small_instance()
    with pytest.raises(ValueError):
        run(video, flows, SolverConfig(iterations=0))
    one, diag = run(video, flows, SolverConfig(iterations=1, tol=0.0))
    problem = build_problem(video, flows, SolverConfig())
    x0 = init_mask("gaussian", video.m, video.h, video.w).x
    step, _, _ = govos_step(problem.edges, problem.projector(1.0, "per_frame"), x0)
    assert one.iteration == 1 and len(diag.direction_change) == 1
    np.testing.assert_array_equal(one.x, step)


def test_run_bit_identical():
    video, flows, _ = small_instance(seed=5)
    cfg = SolverConfig(init="random", seed=3)
    a, _ = run(video, flows, cfg)
    b, _ = run(video, flows, cfg)
    assert a.x.tobytes() == b.x.tobytes()


def test_run_fast_mode_agrees():
    video, flows, _ = small_instance(seed=5)
    a, _ = run(video, flows, SolverConfig(deterministic=True))
    b, _ = run(video, flows, SolverConfig(deterministic=False))
    np.testing.assert_allclose(a.x, b.x, rtol=0, atol=1e-12)


def test_run_records_diagnostics():
    video, flows, _ = small_instance()
    _, diag = run(video, flows, SolverConfig(iterations=40, tol=1e-9))
    assert diag.converged
    assert diag.direction_change[-1] < 1e-9
    assert set(diag.timings) == {"graph", "features", "solve"}
    assert all(v >= 0 for v in diag.timings.values())


def test_run_rayleigh_tracks_dominant_eigenvalue(instance):
    video, flows, _, config, problem = instance
    _, A = dense_operator(problem, config.beta, config.regression)
    lam, _ = oracle.dominant_eig(A, 500)
    _, diag = run(video, flows, SolverConfig(iterations=60, tol=0.0))
    assert diag.rayleigh[-1] == pytest.approx(lam, rel=1e-8)


def _mean_j(soft, gt, tau=0.3):
    return np.mean([np.logical_and(b, g).sum() / np.logical_or(b, g).sum()
                    for b, g in zip(binarize(finalize_mask(soft), tau), gt.masks)])


def test_run_with_probability_channel_helps():
    video, flows, gt = small_instance(m=6, side=16, size=5)
    plain, _ = run(video, flows, SolverConfig())
    guided, _ = run(video, flows, SolverConfig(), prob_maps=gt.masks.astype(float))
    assert _mean_j(guided, gt) > _mean_j(plain, gt)


def test_run_global_mode():
    video, flows, _ = small_instance()
    soft, _ = run(video, flows, SolverConfig(regression="global"))
    assert np.all(np.isfinite(soft.x))


@pytest.mark.xfail(strict=True, reason="lambda2/lambda1 is about 0.64 on this instance; 7 steps "
                                       "reach roughly 2e-4, not 1e-6 (50 steps do)")
def test_run_seven_iterations_reach_eigenvector(instance):
    video, flows, _, config, problem = instance
    _, A = dense_operator(problem, config.beta, config.regression)
    _, v = oracle.dominant_eig(A, 500)
    soft, _ = run(video, flows, SolverConfig())
    assert oracle.cosine(soft.x, v) >= 1 - 1e-6


# ---------------------------------------------------------------- finalize / binarize

def test_finalize_examples():
    np.testing.assert_allclose(finalize_mask(np.array([-1.0, 0.0, 3.0])), [0, 0.25, 1.0])
    x = np.array([0.2, -0.7, 1.5, 0.1])
    np.testing.assert_array_equal(finalize_mask(x), finalize_mask(-x))
    with pytest.raises(DegenerateError):
        finalize_mask(np.full(4, 2.0))


def test_finalize_soft_mask_shape():
    sm = SoftMask(np.arange(8.0), 2, 2, 2)
    out = finalize_mask(sm)
    assert out.shape == (2, 2, 2) and out.min() == 0 and out.max() == 1


def test_binarize_examples():
    assert binarize(np.array([0.5]), 0.5)[0]
    assert not binarize(np.zeros(5), 0.5).any()
    mask = np.array([0.1, 1.0, 0.999, 0.3])
    np.testing.assert_array_equal(binarize(mask, 1 - 1e-9), [False, True, False, False])
    with pytest.raises(ValueError):
        binarize(mask, 1.0)
