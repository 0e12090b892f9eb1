import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riemts.errors import ConfigurationError, RankDeficiencyError, SingularKernelError
from riemts.features import (FeatureSequence, WindowConfig, build_forward_backward, center_series,
                             concatenate, estimate_observability, extract_grassmann_sequence,
                             extract_spd_sequence, fix_signs, kpc_from_matrix, kpc_matrix,
                             kpc_schur, partial_correlation, window_labels)
from riemts.kernels import GaussianKernel, LinearKernel, diagonal_load, kernel_matrix
from riemts.manifolds import SPD, Grassmann, check_grassmann, check_spd, grassmann_distance

from conftest import observability, random_spd, simulate, state_space


# --------------------------------------------------------------------------
# centering and stacking


def test_center_constant_rows():
    assert np.array_equal(center_series(np.full((2, 5), 3.0)), np.zeros((2, 5)))


def test_center_example_and_idempotent(rng):
    assert np.allclose(center_series([[1.0, 2.0, 3.0]]), [[-1.0, 0.0, 1.0]])
    y = center_series(rng.standard_normal((3, 50)))
    assert np.allclose(center_series(y), y, atol=1e-12)
    assert np.all(np.abs(y.sum(axis=1)) <= 1e-10 * 50 * np.abs(y).max())


def test_forward_first_column_scalar_ramp():
    cfg = WindowConfig(tau_w=10, m=2, p=1, rho=1, tau_f=3, tau_b=2)
    y = np.arange(1.0, 11.0)[None, :]
    yf, yb = build_forward_backward(y, cfg)
    # 0-based tau = tau_b = 2 holds the value 3
    assert np.array_equal(yf[:, 0], [3.0, 4.0])
    assert np.array_equal(yb[:, 0], [2.0, 1.0])
    assert yf.shape == (2, 3) and yb.shape == (2, 3)


def test_forward_backward_index_audit():
    n, m, tau_b, tau_f = 3, 3, 4, 5
    cfg = WindowConfig(tau_w=tau_f + tau_b + m - 1, m=m, p=1, rho=1, tau_f=tau_f, tau_b=tau_b)
    # entry (node v, time t) encodes both indices
    y = np.array([[100 * v + t for t in range(cfg.tau_w)] for v in range(n)], dtype=float)
    yf, yb = build_forward_backward(y, cfg)
    for j in range(tau_f):
        for k in range(m):
            for v in range(n):
                assert yf[k * n + v, j] == 100 * v + (tau_b + j + k)
        for k in range(tau_b):
            for v in range(n):
                assert yb[k * n + v, j] == 100 * v + (tau_b + j - 1 - k)


def test_window_too_short_cites_inequality():
    cfg = WindowConfig(tau_w=10, m=3, p=1, rho=1, tau_f=5, tau_b=5)
    with pytest.raises(ConfigurationError, match="tau_f \\+ tau_b \\+ m - 1"):
        cfg.validate()


def test_auto_forward_horizon():
    cfg = WindowConfig(tau_w=50, m=3, tau_f=None, tau_b=20)
    assert cfg.forward == 28
    assert WindowConfig.from_dict(cfg.to_dict()) == cfg


def test_order_beyond_rank_bound_rejected():
    with pytest.raises(ConfigurationError, match="attainable rank"):
        WindowConfig(tau_w=50, m=1, p=2, rho=2, tau_f=20, tau_b=20).validate(n_nodes=2)


# --------------------------------------------------------------------------
# observability subspaces


def test_observability_recovery_noiseless(rng):
    a, c = state_space(rng)
    errors = []
    for tau_f in (100, 200, 400):
        cfg = WindowConfig(tau_w=tau_f + 20 + 3 - 1, m=3, p=1, rho=3, tau_f=tau_f, tau_b=20)
        y = simulate(a, c, rng.standard_normal(3), cfg.tau_w)
        u = estimate_observability(y, cfg)
        q, _ = np.linalg.qr(observability(a, c, 3))
        errors.append(grassmann_distance(u, q))
    assert errors[1] <= 1e-3
    assert errors[1] <= errors[0] + 1e-12 and errors[2] <= errors[1] + 1e-12


def test_observability_basis_change_invariance(rng):
    cmat_seed = rng.integers(1 << 30)
    x0 = rng.standard_normal(3)
    cfg = WindowConfig(tau_w=80, m=3, p=1, rho=3, tau_f=20, tau_b=20)
    a, c = state_space(np.random.default_rng(cmat_seed))
    p = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    a2, c2 = state_space(np.random.default_rng(cmat_seed), transform=p)
    y1 = simulate(a, c, x0, cfg.tau_w)
    y2 = simulate(a2, c2, p @ x0, cfg.tau_w)
    assert np.allclose(y1, y2, atol=1e-9)
    d = grassmann_distance(estimate_observability(y1, cfg), estimate_observability(y2, cfg))
    assert d <= 1e-6


def test_observability_output_shape_and_orthonormal(rng):
    cfg = WindowConfig(tau_w=50, m=3, p=1, rho=3, tau_f=20, tau_b=20)
    u = estimate_observability(rng.standard_normal((10, 50)), cfg)
    assert u.shape == (30, 3)
    check_grassmann(u)


def test_observability_sign_convention(rng):
    cfg = WindowConfig(tau_w=50, m=3, p=1, rho=3, tau_f=20, tau_b=20)
    u = estimate_observability(rng.standard_normal((4, 50)), cfg)
    top = u[np.argmax(np.abs(u), axis=0), np.arange(3)]
    assert np.all(top > 0)
    assert np.array_equal(fix_signs(-u), u)


def test_rank_deficiency_carries_spectrum():
    cfg = WindowConfig(tau_w=50, m=3, p=1, rho=3, tau_f=20, tau_b=20)
    y = np.tile(np.sin(0.3 * np.arange(50)), (4, 1))  # rank-2 dynamics
    with pytest.raises(RankDeficiencyError) as info:
        estimate_observability(y, cfg, window=7)
    assert info.value.required == 3
    assert info.value.spectrum.size > 0
    assert "7" in str(info.value)


def test_near_equal_singular_values_warn():
    cfg = WindowConfig(tau_w=6, m=1, p=1, rho=1, tau_f=3, tau_b=3)
    # orthogonal forward/backward blocks give a flat spectrum
    y = np.array([[1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
                  [0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
                  [0.0, 0.0, 1.0, 0.0, 0.0, 1.0]])
    with pytest.warns(RuntimeWarning, match="ill-conditioned"):
        estimate_observability(y, cfg)


def test_grassmann_sequence_single_window(rng):
    cfg = WindowConfig(tau_w=50, m=3, p=1, rho=3, tau_f=20, tau_b=20)
    seq = extract_grassmann_sequence(rng.standard_normal((10, 50)), cfg)
    assert len(seq) == 1
    assert seq.manifold == Grassmann(30, 3)


def test_grassmann_sequence_length_and_starts(rng):
    cfg = WindowConfig(tau_w=50, m=3, p=1, rho=3, tau_f=20, tau_b=20)
    y = rng.standard_normal((10, 70))
    seq = extract_grassmann_sequence(y, cfg)
    assert len(seq) == 70 - 50 + 1
    assert np.array_equal(seq.window_starts, np.arange(21))
    for k in (0, 9, 20):
        assert np.array_equal(seq.points[k], estimate_observability(y[:, k:k + 50], cfg))


def test_grassmann_sequence_separates_states(rng):
    cfg = WindowConfig(tau_w=40, m=3, p=1, rho=3, tau_f=None, tau_b=10)
    a1, c1 = state_space(rng, omega=0.3)
    a2, c2 = state_space(rng, omega=1.1)
    y = np.hstack([simulate(a1, c1, rng.standard_normal(3), 100),
                   simulate(a2, c2, rng.standard_normal(3), 100)])
    y += 1e-3 * rng.standard_normal(y.shape)
    seq = extract_grassmann_sequence(y, cfg)
    d = Grassmann(12, 3).pairwise_distances(seq.points)
    within = max(d[0, 1], d[-1, -2])
    across = d[0, -1]
    assert within < 0.1 * across


# --------------------------------------------------------------------------
# kernel partial correlations


def test_kpc_identity():
    g = kpc_matrix(np.eye(4))
    assert np.array_equal(g, np.eye(4))
    assert np.array_equal(kpc_from_matrix(g), np.zeros((4, 4)))


def test_kpc_singular_kernel_needs_loading():
    with pytest.raises(SingularKernelError, match="loading"):
        kpc_matrix(np.ones((3, 3)))
    g = kpc_matrix(diagonal_load(np.ones((3, 3))))
    check_spd(g)


def test_kpc_three_nodes_schur_and_residual_routes(rng):
    rows = rng.standard_normal((3, 12))
    k = kernel_matrix(LinearKernel(), rows)
    kpc = kpc_from_matrix(kpc_matrix(k))
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        assert abs(kpc[i, j] - kpc_schur(k, i, j)) <= 1e-10
        assert abs(kpc[i, j] - partial_correlation(rows, i, j)) <= 1e-8


def test_kpc_matrix_properties(rng):
    k = random_spd(rng, 6)
    g = kpc_matrix(k)
    assert np.array_equal(np.diag(g), np.ones(6))
    assert np.array_equal(g, g.T)
    check_spd(g)
    kinv = np.linalg.inv(k)
    assert g[1, 4] == pytest.approx(kinv[1, 4] / np.sqrt(kinv[1, 1] * kinv[4, 4]), rel=1e-10)


def test_kpc_schur_symmetric(rng):
    k = random_spd(rng, 5)
    for i in range(5):
        for j in range(i + 1, 5):
            assert kpc_schur(k, i, j) == kpc_schur(k, j, i)
            assert -1.0 <= kpc_schur(k, i, j) <= 1.0


def test_kpc_schur_zero_residual_gives_zero():
    # node 0 lies in the span of node 2
    rows = np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 2.0], [2.0, 4.0, 6.0]])
    k = rows @ rows.T
    assert kpc_schur(k, 0, 1) == 0.0


def test_kpc_duplicate_rows_near_one(rng):
    rows = rng.standard_normal((4, 20))
    rows[1] = rows[0]
    k = diagonal_load(kernel_matrix(LinearKernel(), rows))
    assert k.loaded
    assert kpc_schur(k, 0, 1) == pytest.approx(1.0, abs=1e-4)
    assert kpc_from_matrix(kpc_matrix(k))[0, 1] == pytest.approx(1.0, abs=1e-4)


def test_kpc_conditional_independence_gaussian_graphical_model():
    rng = np.random.default_rng(8)
    prec = np.eye(5) + np.diag(np.full(4, 0.4), 1) + np.diag(np.full(4, 0.4), -1)
    cov = np.linalg.inv(prec)
    vals = []
    for tau in (200, 5000, 100000):
        x = rng.multivariate_normal(np.zeros(5), cov, size=tau).T
        k = kernel_matrix(LinearKernel(), x)
        vals.append(abs(kpc_schur(k, 0, 3)))
    assert vals[-1] < 0.01
    # a true edge stays clearly nonzero
    assert abs(kpc_schur(k, 0, 1)) > 0.2


def test_ls_residual_is_orthogonal_to_conditioning_rows(rng):
    rows = rng.standard_normal((5, 15))
    rest = np.delete(rows, [1, 3], axis=0)
    proj = np.linalg.pinv(rest, rcond=1e-10) @ rest
    r = rows[1] - rows[1] @ proj
    assert np.max(np.abs(rest @ r)) <= 1e-8


@given(st.integers(0, 2**32 - 1))
def test_schur_and_inverse_routes_agree(seed):
    rng = np.random.default_rng(seed)
    k = random_spd(rng, 5, spread=0.1)
    kpc = kpc_from_matrix(kpc_matrix(k))
    for i in range(5):
        for j in range(i + 1, 5):
            assert abs(kpc[i, j] - kpc_schur(k, i, j)) <= 1e-10


# --------------------------------------------------------------------------
# SPD feature sequences


def test_cov_variant_is_centered_gram(rng):
    y = rng.standard_normal((4, 60))
    seq = extract_spd_sequence(y, LinearKernel(), "Cov", 20)
    yc = y - y.mean(axis=1, keepdims=True)
    for k in (0, 17, 40):
        w = yc[:, k:k + 20]
        assert np.allclose(seq.points[k], w @ w.T, rtol=1e-12, atol=1e-12)


def test_corr_variant_uses_raw_rows(rng):
    y = rng.standard_normal((4, 30)) + 5.0
    seq = extract_spd_sequence(y, LinearKernel(), "Corr", 10)
    assert np.allclose(seq.points[3], y[:, 3:13] @ y[:, 3:13].T)


def test_kpc_variant_unit_diagonal(rng):
    seq = extract_spd_sequence(rng.standard_normal((5, 60)), GaussianKernel(1.0), "kPC", 20)
    assert np.allclose(np.diagonal(seq.points, axis1=1, axis2=2), 1.0, atol=1e-14)
    for p in seq.points:
        check_spd(p)


def test_icov_inverts_cov(rng):
    y = rng.standard_normal((4, 40))
    cov = extract_spd_sequence(y, LinearKernel(), "Cov", 12)
    icov = extract_spd_sequence(y, LinearKernel(), "ICov", 12)
    for a, b in zip(cov.points, icov.points):
        assert np.allclose(np.linalg.inv(b), a, rtol=1e-8, atol=1e-8)


def test_rank_deficient_windows_get_loaded(rng):
    # more nodes than samples per window
    seq = extract_spd_sequence(rng.standard_normal((8, 20)), LinearKernel(), "kPC", 5)
    assert seq.meta["loaded_windows"] == len(seq)
    for p in seq.points:
        check_spd(p)


def test_unknown_variant_rejected(rng):
    with pytest.raises(ConfigurationError, match="variant"):
        extract_spd_sequence(rng.standard_normal((3, 10)), LinearKernel(), "PLV", 5)


def test_window_labels_majority_and_ties():
    labels = np.array([0, 0, 0, 1, 1, 1])
    assert list(window_labels(labels, 4)) == [0, 0, 1]
    # window [0, 0, 1, 1] is a tie and goes to the earlier state
    assert window_labels(np.array([0, 0, 1, 1]), 4)[0] == 0
    assert list(window_labels(labels, 2, step=2)) == [0, 0, 1]


def test_feature_sequence_roundtrip(tmp_path, rng):
    seq = extract_spd_sequence(rng.standard_normal((3, 30)), LinearKernel(), "kPC", 10,
                               labels=np.repeat([0, 1], 15))
    seq.save(tmp_path / "f")
    back = FeatureSequence.load(tmp_path / "f")
    assert back.manifold == SPD(3)
    assert np.array_equal(back.points, seq.points)
    assert np.array_equal(back.window_starts, seq.window_starts)
    assert np.array_equal(back.labels, seq.labels)


def test_grassmann_sequence_roundtrip(tmp_path, rng):
    cfg = WindowConfig(tau_w=20, m=2, p=1, rho=2, tau_f=8, tau_b=6)
    seq = extract_grassmann_sequence(rng.standard_normal((3, 25)), cfg)
    seq.save(tmp_path / "g")
    back = FeatureSequence.load(tmp_path / "g")
    assert back.manifold == Grassmann(6, 2)
    assert np.array_equal(back.points, seq.points)


def test_concatenate_keeps_order_and_rejects_mixed(rng):
    a = extract_spd_sequence(rng.standard_normal((3, 20)), LinearKernel(), "Cov", 10, np.zeros(20))
    b = extract_spd_sequence(rng.standard_normal((3, 20)), LinearKernel(), "Cov", 10, np.ones(20))
    c = concatenate([a, b])
    assert len(c) == len(a) + len(b)
    assert np.array_equal(c.labels, np.r_[a.labels, b.labels])
    g = extract_grassmann_sequence(rng.standard_normal((3, 25)),
                                   WindowConfig(tau_w=20, m=2, p=1, rho=2, tau_f=8, tau_b=6))
    with pytest.raises(ValueError):
        concatenate([a, g])


def test_sequence_rejects_wrong_shape():
    with pytest.raises(ValueError, match="do not live"):
        FeatureSequence(np.zeros((2, 3, 3)), SPD(4), [0, 1])


def test_extraction_is_deterministic(rng):
    y = rng.standard_normal((4, 80))
    cfg = WindowConfig(tau_w=50, m=3, p=1, rho=3, tau_f=20, tau_b=20)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = extract_grassmann_sequence(y, cfg)
    b = extract_grassmann_sequence(y.copy(), cfg)
    assert np.array_equal(a.points, b.points)
