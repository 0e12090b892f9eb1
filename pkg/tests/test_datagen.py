import numpy as np
import pytest

from riemts.datagen import (StateSchedule, WilsonCowanParams, add_noise_snr, ar_phase_series,
                            block_state_components, community_network, default_schedule,
                            delays_from_distances, double_gamma_hrf, gen_block_state_series,
                            gen_wilson_cowan, load_adjacency, measured_snr_db, sigmoid,
                            validate_adjacency, wilson_cowan_segments)
from riemts.errors import ConfigurationError


# --------------------------------------------------------------------------
# block-state generator


def test_ar_constant_when_coefficient_is_one():
    y = ar_phase_series(50, 3, 0.0, 0.0, np.random.default_rng(0))
    assert np.array_equal(y, np.repeat(y[:, :1], 50, axis=1))


def test_ar_white_when_coefficient_is_zero():
    y = ar_phase_series(20000, 2, np.pi / 2, 0.0, np.random.default_rng(1))
    lag1 = np.mean(y[:, 1:] * y[:, :-1])
    assert abs(lag1) < 0.03
    assert np.var(y) == pytest.approx(1.0, abs=0.05)


def test_ar_has_unit_variance_over_realizations():
    rng = np.random.default_rng(2)
    y = ar_phase_series(100, 4000, 0.3, 0.01, rng)
    assert np.allclose(y.var(axis=0), 1.0, atol=0.1)


def test_nodes_in_same_group_share_task_signal():
    sched = default_schedule(duration=40)
    comp = block_state_components(sched, seed=3)
    for k, (d, groups) in enumerate(sched.states):
        seg = comp["task"][:, 40 * k:40 * (k + 1)]
        for u in range(10):
            for v in range(10):
                same = np.array_equal(seg[u], seg[v])
                assert same == (groups[u] == groups[v])


def test_label_boundaries():
    sched = StateSchedule(((3, (0, 1)), (5, (0, 0)), (2, (1, 0))), 2)
    y, labels = gen_block_state_series(sched, seed=0)
    assert y.shape == (2, 10)
    assert list(labels) == [0] * 3 + [1] * 5 + [2] * 2


def test_block_structure_in_correlations():
    sched = StateSchedule(((4000, (0, 0, 0, 1, 1, 1)),), 6)
    y, _ = gen_block_state_series(sched, seed=5, hrf="none")
    c = np.corrcoef(y)
    within = np.mean([c[0, 1], c[0, 2], c[1, 2], c[3, 4], c[3, 5], c[4, 5]])
    cross = np.mean(np.abs(c[:3, 3:]))
    assert within > 2 * cross
    assert within > 0.5


def test_hrf_unit_sum_and_peak():
    h = double_gamma_hrf()
    assert h.sum() == pytest.approx(1.0)
    assert 2 <= np.argmax(h) <= 3  # 4-6 s at TR = 2 s


def test_hrf_none_is_raw_mix():
    sched = default_schedule(duration=20)
    y, _ = gen_block_state_series(sched, seed=1, hrf="none")
    c = block_state_components(sched, seed=1)
    assert np.allclose(y, 0.6 * c["task"] + 0.2 * c["unique"] + 0.2 * c["ar"])


def test_block_generator_deterministic():
    sched = default_schedule(duration=30)
    a, _ = gen_block_state_series(sched, seed=9)
    b, _ = gen_block_state_series(sched, seed=9)
    c, _ = gen_block_state_series(sched, seed=10)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_schedule_validation():
    with pytest.raises(ConfigurationError):
        StateSchedule(((10, (0, 1, 2, 3)),), 4)
    with pytest.raises(ConfigurationError):
        StateSchedule(((10, (0, 1)),), 3)
    with pytest.raises(ConfigurationError):
        StateSchedule(((0, (0, 1)),), 2)
    s = default_schedule()
    assert StateSchedule.from_dict(s.to_dict()) == s
    assert s.length == 2000 and s.n_states == 4


# --------------------------------------------------------------------------
# noise


@pytest.mark.parametrize("snr", [-5.0, 0.0, 10.0, 30.0])
def test_noise_hits_target_snr(snr, rng):
    clean = rng.standard_normal((5, 300)) * 3
    noisy = add_noise_snr(clean, snr, seed=1)
    assert measured_snr_db(clean, noisy) == pytest.approx(snr, abs=1e-9)


def test_infinite_snr_is_identity(rng):
    clean = rng.standard_normal((3, 10))
    assert np.array_equal(add_noise_snr(clean, np.inf), clean)


def test_zero_signal_rejected():
    with pytest.raises(ValueError):
        add_noise_snr(np.zeros((2, 5)), 10.0)


# --------------------------------------------------------------------------
# Wilson-Cowan


def test_sigmoid_zero_at_origin():
    assert sigmoid(0.0, 1.3, 4.0) == 0.0
    assert sigmoid(0.0, 2.0, 3.7) == 0.0
    assert sigmoid(100.0, 1.3, 4.0) == pytest.approx(1 - 1 / (1 + np.exp(1.3 * 4)))


def test_delays_from_distances():
    assert delays_from_distances(8.0) == 1
    assert list(delays_from_distances([0.0, 3.9, 4.1, 80.0])) == [0, 0, 1, 10]
    with pytest.raises(ValueError):
        delays_from_distances([-1.0])


def test_adjacency_validation():
    with pytest.raises(ValueError, match="symmetric"):
        validate_adjacency([[0, 1], [0, 0]])
    with pytest.raises(ValueError, match="negative"):
        validate_adjacency([[0, -1], [-1, 0]])
    with pytest.raises(ValueError, match="square"):
        validate_adjacency(np.zeros((2, 3)))


def test_load_adjacency(tmp_path):
    b = np.array([[0, 0.5], [0.5, 0]])
    np.savetxt(tmp_path / "b.csv", b, delimiter=",")
    np.savetxt(tmp_path / "d.csv", [[0, 16.0], [16.0, 0]], delimiter=",")
    got, d = load_adjacency(str(tmp_path / "b.csv"), distances=str(tmp_path / "d.csv"))
    assert np.array_equal(got, b)
    assert d.tolist() == [[0, 2], [2, 0]]
    _, d0 = load_adjacency(str(tmp_path / "b.csv"))
    assert not d0.any()
    with pytest.raises(ValueError, match="integers"):
        load_adjacency(str(tmp_path / "b.csv"), delays=np.array([[0, 0.5], [0.5, 0]]))


def test_community_network_scaled_and_modular():
    b, dist = community_network(20, 4, np.random.default_rng(0), scale=2.0)
    assert b.sum(axis=1).max() == pytest.approx(2.0)
    assert np.array_equal(b, b.T) and np.all(np.diag(b) == 0)
    comm = np.repeat(np.arange(4), 5)
    same = comm[:, None] == comm[None, :]
    assert (b[same] > 0).mean() > 3 * (b[~same] > 0).mean()
    assert np.allclose(dist, dist.T) and np.all(np.diag(dist) == 0)


def test_zero_coupling_fixed_point_stays():
    p = WilsonCowanParams(b=np.zeros((3, 3)), mu=np.zeros(3), sigma2=0.0, x0=0.0, y0=0.0)
    y, x = gen_wilson_cowan(p, 200, return_inhibitory=True)
    assert not y.any() and not x.any()


def test_default_rates_stay_in_envelope():
    b, dist = community_network(10, 2, np.random.default_rng(1))
    p = WilsonCowanParams(b=b, d=delays_from_distances(dist))
    y, x = gen_wilson_cowan(p, 5000, seed=2, return_inhibitory=True)
    assert y.min() >= -0.2 and y.max() <= 1.1
    assert x.min() >= -0.2 and x.max() <= 1.1


def test_initial_sample_is_initial_state():
    p = WilsonCowanParams(b=np.zeros((2, 2)), y0=0.3)
    assert np.array_equal(gen_wilson_cowan(p, 5)[:, 0], [0.3, 0.3])


def test_heun_is_second_order():
    b, _ = community_network(6, 2, np.random.default_rng(0))
    horizon = 40.0

    def final_state(dt_ms):
        p = WilsonCowanParams(b=b, mu=np.full(6, 1.25), sigma2=0.0, dt=dt_ms * 1e-3, y0=0.3)
        return gen_wilson_cowan(p, int(round(horizon / dt_ms)) + 1)[:, -1]

    ref = final_state(1 / 256)
    errs = [np.abs(final_state(dt) - ref).max() for dt in (0.25, 0.125, 0.0625)]
    for coarse, fine in zip(errs, errs[1:]):
        assert 3.3 <= coarse / fine <= 4.7


def test_long_delay_freezes_coupling_at_history():
    b = np.array([[0.0, 1.0], [1.0, 0.0]])
    mu = np.array([1.25, 0.0])
    d = np.full((2, 2), 1000)
    delayed = gen_wilson_cowan(WilsonCowanParams(b=b, d=d, mu=mu, sigma2=0.0), 300)
    # the delayed input is the initial value 0.1 throughout, scaled by gamma_5 = 1.1
    shifted = gen_wilson_cowan(WilsonCowanParams(b=np.zeros((2, 2)), mu=mu + 1.1 * 0.1,
                                                 sigma2=0.0), 300)
    assert np.allclose(delayed, shifted, rtol=0, atol=1e-12)
    instant = gen_wilson_cowan(WilsonCowanParams(b=b, mu=mu, sigma2=0.0), 300)
    assert not np.allclose(instant, delayed)


def test_wilson_cowan_deterministic():
    b, _ = community_network(5, 1, np.random.default_rng(3))
    p = WilsonCowanParams(b=b)
    assert np.array_equal(gen_wilson_cowan(p, 100, seed=4), gen_wilson_cowan(p, 100, seed=4))


def test_bad_parameters_rejected():
    with pytest.raises(ValueError):
        WilsonCowanParams(b=np.zeros((2, 2)), d=np.array([[0, -1], [-1, 0]]))
    with pytest.raises(ValueError):
        WilsonCowanParams(b=np.zeros((2, 2)), sigma2=-1.0)
    with pytest.raises(ConfigurationError):
        gen_wilson_cowan(WilsonCowanParams(b=np.zeros((2, 2))), 0)


def test_segments_join_head_and_tail():
    y = np.arange(20.0)[None, :]
    assert wilson_cowan_segments(y, 3, 2).tolist() == [[0, 1, 2, 18, 19]]
    with pytest.raises(ConfigurationError):
        wilson_cowan_segments(y, 15, 10)
