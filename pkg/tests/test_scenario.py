import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jtsched.scenario import (ChannelSet, NetworkConfig, draw_scenario, generate_channels,
                              generate_geometry, pathloss)


@pytest.mark.parametrize("d, shadow, expected", [
    (1.0, 0.0, 3.5481338923357534e-04),
    (100.0, 0.0, 8.912509381337459e-12),
    (10.0, 8.0, 3.5481338923357534e-07),
])
def test_pathloss_hand_values(d, shadow, expected):
    assert pathloss(d, shadow) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("d", [0.0, -5.0])
def test_pathloss_rejects_nonpositive_distance(d):
    with pytest.raises(ValueError):
        pathloss(d)


def test_pathloss_is_elementwise():
    d = np.array([1.0, 100.0])
    np.testing.assert_allclose(pathloss(d), [pathloss(1.0), pathloss(100.0)], rtol=1e-14)


@pytest.mark.parametrize("kw", [
    dict(num_bs=0), dict(antennas_per_bs=0), dict(num_users=0), dict(coop_radius=400.0),
    dict(rate_fraction=0.0), dict(rate_fraction=1.5), dict(noise_variance=-1.0),
    dict(power_budgets=(1.0, 1.0)), dict(power_budgets=(1.0, 0.0, 1.0)), dict(snr_reference="x"),
    dict(seed=-1),
])
def test_config_rejects_invalid(kw):
    with pytest.raises(ValueError):
        NetworkConfig(**kw)


def test_transmit_snr_convention_links_budget_and_noise():
    cfg = NetworkConfig(snr_db=10.0, noise_variance=2e-3, snr_reference="transmit")
    np.testing.assert_allclose(cfg.budgets, 2e-3 * 10.0, rtol=1e-14)


def test_edge_snr_convention_sets_unit_edge_snr():
    cfg = NetworkConfig(snr_db=0.0)
    # receive SNR at the cell edge without shadowing equals the nominal SNR
    edge_snr = cfg.budgets * pathloss(cfg.cell_radius) / cfg.sigma2
    np.testing.assert_allclose(edge_snr, 1.0, rtol=1e-12)


def test_zero_coop_radius_puts_users_at_center():
    cfg = NetworkConfig(num_bs=1, num_users=5, coop_radius=0.0)
    geo = generate_geometry(cfg, rng_seed=3)
    np.testing.assert_array_equal(geo.user_positions, 0.0)
    np.testing.assert_allclose(geo.distances, cfg.cell_radius, rtol=1e-14)


def test_geometry_is_deterministic():
    cfg = NetworkConfig(num_users=7)
    a = generate_geometry(cfg, rng_seed=11)
    b = generate_geometry(cfg, rng_seed=11)
    np.testing.assert_array_equal(a.user_positions, b.user_positions)
    np.testing.assert_array_equal(a.distances, b.distances)


def test_mean_distance_from_center_matches_uniform_disk():
    cfg = NetworkConfig(num_users=10_000)
    geo = generate_geometry(cfg, rng_seed=5)
    mean_r = np.linalg.norm(geo.user_positions, axis=1).mean()
    assert mean_r == pytest.approx(2.0 / 3.0 * cfg.coop_radius, rel=0.02)


def test_three_bs_sit_on_a_circle_with_equal_spacing():
    geo = generate_geometry(NetworkConfig(num_bs=3), rng_seed=0)
    radii = np.linalg.norm(geo.bs_positions, axis=1)
    np.testing.assert_allclose(radii, 300.0, rtol=1e-14)
    side = np.linalg.norm(geo.bs_positions - np.roll(geo.bs_positions, 1, axis=0), axis=1)
    np.testing.assert_allclose(side, side[0], rtol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 12), b=st.integers(1, 4))
def test_geometry_invariants(seed, k, b):
    cfg = NetworkConfig(num_bs=b, num_users=k)
    geo = generate_geometry(cfg, rng_seed=seed)
    assert np.all(np.linalg.norm(geo.user_positions, axis=1) <= cfg.coop_radius + 1e-9)
    d = np.linalg.norm(geo.user_positions[:, None] - geo.bs_positions[None], axis=-1)
    np.testing.assert_array_equal(geo.distances, d)
    assert np.all(geo.distances > 0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), nt=st.integers(1, 3))
def test_channel_construction_invariants(seed, nt):
    cfg = NetworkConfig(antennas_per_bs=nt, num_users=4, seed=seed)
    ch = draw_scenario(cfg)
    for k in range(ch.num_users):
        np.testing.assert_array_equal(ch.cascaded[k], np.concatenate(list(ch.raw[k])))
    np.testing.assert_array_equal(ch.raw, np.sqrt(ch.gains)[:, :, None] * ch.fast_fading)
    np.testing.assert_allclose(ch.normalized * ch.sigma[:, None], ch.cascaded, rtol=1e-15)


def test_unit_noise_leaves_channels_unscaled():
    cfg = NetworkConfig(noise_variance=1.0, num_users=3)
    ch = draw_scenario(cfg)
    np.testing.assert_array_equal(ch.normalized, ch.cascaded)


def test_scenario_is_deterministic_per_seed():
    cfg = NetworkConfig(num_users=5, seed=99)
    a, b = draw_scenario(cfg), draw_scenario(cfg)
    np.testing.assert_array_equal(a.raw, b.raw)
    c = draw_scenario(cfg.replace(seed=100))
    assert not np.array_equal(a.raw, c.raw)


def test_fast_fading_real_part_variance():
    cfg = NetworkConfig(num_bs=1, antennas_per_bs=10, num_users=10_000)
    geo = generate_geometry(cfg, rng_seed=1)
    ch = generate_channels(geo, cfg, rng_seed=2)
    assert np.var(ch.fast_fading.real) == pytest.approx(0.5, rel=0.02)
    assert np.var(ch.fast_fading.imag) == pytest.approx(0.5, rel=0.02)


def test_shadowing_statistics():
    cfg = NetworkConfig(num_bs=3, num_users=10_000)
    ch = draw_scenario(cfg.replace(seed=4))
    assert abs(ch.shadowing_db.mean()) < 0.2
    assert ch.shadowing_db.std() == pytest.approx(8.0, rel=0.02)


def test_average_link_power_matches_pathloss():
    cfg = NetworkConfig(num_bs=2, antennas_per_bs=2, num_users=3)
    geo = generate_geometry(cfg, rng_seed=0)
    ratios = []
    for s in range(10_000 // 4):
        ch = generate_channels(geo, cfg, rng_seed=s)
        ratios.append(np.abs(ch.raw) ** 2 / ch.gains[:, :, None])
    assert np.mean(ratios) == pytest.approx(1.0, rel=0.05)


def test_channelset_json_round_trip(tmp_path):
    ch = draw_scenario(NetworkConfig(num_users=3, seed=8))
    path = tmp_path / "ch.json"
    ch.save(path)
    back = ChannelSet.load(path)
    np.testing.assert_array_equal(back.raw, ch.raw)
    np.testing.assert_array_equal(back.normalized, ch.normalized)
    np.testing.assert_array_equal(back.shadowing_db, ch.shadowing_db)


def test_subset_keeps_selected_users():
    ch = draw_scenario(NetworkConfig(num_users=5, seed=1))
    sub = ch.subset([3, 1])
    np.testing.assert_array_equal(sub.normalized, ch.normalized[[3, 1]])
