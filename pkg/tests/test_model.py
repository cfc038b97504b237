"""Geometry, channel synthesis, and reproducibility of the random streams."""

import math

import numpy as np
import pytest

from wpmec.config import SystemConfig
from wpmec.model import (PhaseProfile, build_scenario, effective_channels,
                         path_loss, perturb_csi, substream, synth_channels)

from conftest import rand_complex


def test_substream_reproducible_and_independent():
    a1 = substream(7, "fading_hu").standard_normal(8)
    a2 = substream(7, "fading_hu").standard_normal(8)
    b = substream(7, "fading_hi").standard_normal(8)
    c = substream(8, "fading_hu").standard_normal(8)
    np.testing.assert_array_equal(a1, a2)
    assert not np.allclose(a1, b)
    assert not np.allclose(a1, c)


def test_substream_unknown_name():
    with pytest.raises(KeyError):
        substream(0, "nonsense")


def test_path_loss_formula(desk):
    d = np.array([1.0, 2.0, 7.5])
    got = path_loss(d, 3.5, desk)
    want = desk.c0 * (d / desk.d0_m) ** -3.5
    np.testing.assert_allclose(got, want, rtol=1e-15)
    with pytest.raises(ValueError):
        path_loss(0.0, 2.0, desk)


def test_scenario_geometry(desk):
    sc = build_scenario(desk, 3)
    np.testing.assert_allclose(sc.hap_pos, [[0.0, -5.0, 3.0], [4.0, -5.0, 3.0]])
    np.testing.assert_allclose(sc.irs_pos, [[6.0, 1.0, 2.0], [10.0, 1.0, 2.0]])
    assert sc.wd_pos.shape == (desk.num_wds, 3)
    np.testing.assert_allclose(sc.wd_pos[:, 2], 1.0)
    centre = np.array([desk.cluster_x_m, 0.0])
    dists = np.linalg.norm(sc.wd_pos[:, :2] - centre, axis=1)
    assert np.all(dists <= desk.cluster_radius_m + 1e-12)


def test_scenario_drop_is_seeded(desk):
    a = build_scenario(desk, 5)
    b = build_scenario(desk, 5)
    c = build_scenario(desk, 6)
    np.testing.assert_array_equal(a.wd_pos, b.wd_pos)
    assert not np.allclose(a.wd_pos, c.wd_pos)


def test_scenario_cluster_override(desk):
    sc = build_scenario(desk, 0, cluster_x_m=12.0)
    assert abs(float(np.mean(sc.wd_pos[:, 0])) - 12.0) <= desk.cluster_radius_m


def test_channels_deterministic(desk):
    a = synth_channels(build_scenario(desk, 2))
    b = synth_channels(build_scenario(desk, 2))
    c = synth_channels(build_scenario(desk, 3))
    np.testing.assert_array_equal(a.h_direct, b.h_direct)
    np.testing.assert_array_equal(a.reflect_matrix, b.reflect_matrix)
    np.testing.assert_array_equal(a.h_surface, b.h_surface)
    assert not np.allclose(a.h_direct, c.h_direct)


def test_pure_los_direct_link_magnitude():
    # with an infinite Rician factor the direct link is exactly the
    # steering vector times the root path loss, antenna by antenna
    cfg = SystemConfig(rician_hu=math.inf)
    sc = build_scenario(cfg, 1)
    ch = synth_channels(sc)
    m = cfg.num_antennas
    for k in range(cfg.num_wds):
        for b in range(cfg.num_haps):
            d = np.linalg.norm(sc.wd_pos[k] - sc.hap_pos[b])
            want = math.sqrt(path_loss(d, cfg.pl_exp_hu, cfg))
            got = np.abs(ch.h_direct[k, b * m:(b + 1) * m])
            np.testing.assert_allclose(got, want, rtol=1e-12)


def test_reflect_blocks_are_rank_one_los(desk):
    # default HAP-IRS links are pure line of sight: every (b, i) block is
    # an outer product of steering vectors scaled by the root path loss
    sc = build_scenario(desk, 4)
    ch = synth_channels(sc)
    m, n = desk.num_antennas, desk.num_elements
    for b in range(desk.num_haps):
        for i in range(desk.num_irs):
            block = ch.reflect_matrix[b * m:(b + 1) * m, i * n:(i + 1) * n]
            s = np.linalg.svd(block, compute_uv=False)
            assert s[1] <= 1e-12 * s[0]
            d = np.linalg.norm(sc.irs_pos[i] - sc.hap_pos[b])
            want = math.sqrt(path_loss(d, desk.pl_exp_hi, desk) * m * n)
            np.testing.assert_allclose(np.linalg.norm(block), want, rtol=1e-12)


def test_surface_gram_matches_blocks(desk_channels, desk):
    n = desk.num_elements
    for i in range(desk.num_irs):
        gi = desk_channels.reflect_matrix[:, i * n:(i + 1) * n]
        np.testing.assert_allclose(desk_channels.surface_gram[i], gi @ gi.conj().T,
                                   rtol=1e-12, atol=1e-20)


def test_effective_channels_oracle(desk_channels, desk):
    rng = np.random.default_rng(0)
    v = rand_complex(rng, desk.dim_in)
    got = effective_channels(desk_channels, v)
    for k in range(desk.num_wds):
        want = desk_channels.h_direct[k].copy()
        for idx in range(desk.dim_in):
            want += v[idx] * desk_channels.h_surface[k, idx] * desk_channels.reflect_matrix[:, idx]
        np.testing.assert_allclose(got[k], want, rtol=1e-12, atol=1e-18)


def test_effective_channels_rejects_bad_shape(desk_channels):
    with pytest.raises(ValueError):
        effective_channels(desk_channels, np.zeros(3, dtype=complex))


def test_perturb_zero_is_identity(desk_channels):
    assert perturb_csi(desk_channels, 0.0) is desk_channels


def test_perturb_is_deterministic(desk_channels):
    a = perturb_csi(desk_channels, 0.1)
    b = perturb_csi(desk_channels, 0.1)
    np.testing.assert_array_equal(a.h_direct, b.h_direct)
    np.testing.assert_array_equal(a.reflect_matrix, b.reflect_matrix)
    np.testing.assert_array_equal(a.h_surface, b.h_surface)


def test_perturb_error_scales_with_delta(desk_channels):
    delta = 0.05
    noisy = perturb_csi(desk_channels, delta)
    rel = []
    for clean, est in ((desk_channels.h_direct, noisy.h_direct),
                       (desk_channels.reflect_matrix, noisy.reflect_matrix),
                       (desk_channels.h_surface, noisy.h_surface)):
        rel.append(((np.abs(est - clean) / np.abs(clean)) ** 2).ravel())
    mean_rel = float(np.mean(np.concatenate(rel)))
    # 124 samples of delta*|CN(0,1)|^2; the mean concentrates near delta
    assert 0.5 * delta < mean_rel < 1.8 * delta


def test_perturb_updates_gram(desk_channels, desk):
    noisy = perturb_csi(desk_channels, 0.2)
    n = desk.num_elements
    gi = noisy.reflect_matrix[:, n:2 * n]
    np.testing.assert_allclose(noisy.surface_gram[1], gi @ gi.conj().T, rtol=1e-12)


def test_perturb_negative_delta_rejected(desk_channels):
    with pytest.raises(ValueError):
        perturb_csi(desk_channels, -0.1)


def test_result_arrays_are_readonly(desk_channels):
    prof = PhaseProfile(theta=np.zeros(4), v=np.ones(4, dtype=complex))
    with pytest.raises(ValueError):
        prof.theta[0] = 1.0
    with pytest.raises(ValueError):
        desk_channels.h_direct[0, 0] = 0.0
