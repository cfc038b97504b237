"""Offloading stage: ratio auxiliaries, detector/power programs, full cycle."""

import math

import numpy as np
import pytest

from wpmec.config import SystemConfig
from wpmec.errors import InfeasibleError
from wpmec.model import build_scenario, effective_channels, synth_channels
from wpmec.offload import (_matched_detectors, sinr_and_rate, solve_mud,
                           solve_p4, solve_power_freq, update_rho, update_varpi,
                           update_xi)
from wpmec.phase import PhaseModel, reflect_coeff
from wpmec.wet import WetSetting, solve_p3

from conftest import rand_complex


def sinr_oracle(detectors, p_tx, h_eff, cfg):
    K = h_eff.shape[0]
    out = np.zeros(K)
    for k in range(K):
        sig = p_tx[k] * abs(np.vdot(detectors[k], h_eff[k])) ** 2
        interf = sum(p_tx[j] * abs(np.vdot(detectors[k], h_eff[j])) ** 2
                     for j in range(K) if j != k)
        noise = cfg.noise_w * float(np.linalg.norm(detectors[k]) ** 2)
        out[k] = sig / (interf + noise)
    return out


def xi_surrogate(xi, detectors, p_tx, h_eff, mu, cfg):
    """Quadratic transform objective as an explicit function of xi."""
    s = detectors.conj() @ h_eff.T
    den = (np.abs(s) ** 2) @ p_tx + cfg.noise_w * np.sum(np.abs(detectors) ** 2, axis=1)
    lin = 2.0 * np.sqrt(mu * p_tx) * np.real(np.conj(xi) * np.diag(s))
    return float(np.sum(lin - np.abs(xi) ** 2 * den))


def varpi_surrogate(varpi, detectors, p_tx, v, channels, mu, cfg):
    h_eff = effective_channels(channels, v)
    s = detectors.conj() @ h_eff.T
    f_mat = s * np.sqrt(p_tx)[None, :]
    den = np.sum(np.abs(f_mat) ** 2, axis=1) \
        + cfg.noise_w * np.sum(np.abs(detectors) ** 2, axis=1)
    lin = 2.0 * np.sqrt(mu) * np.real(np.conj(varpi) * np.diag(f_mat))
    return float(np.sum(lin - np.abs(varpi) ** 2 * den))


@pytest.fixture(scope="module")
def stage(tiny, tiny_channels):
    """A mid-iteration state: matched detectors, positive powers."""
    rng = np.random.default_rng(21)
    v = 0.8 * np.exp(1j * rng.uniform(-np.pi, np.pi, tiny.dim_in))
    h_eff = effective_channels(tiny_channels, v)
    detectors = _matched_detectors(h_eff, tiny)
    p_tx = np.array([2e-4, 5e-4])
    return v, h_eff, detectors, p_tx


def test_sinr_and_rate_match_direct_formula(tiny, stage):
    _, h_eff, detectors, p_tx = stage
    gamma, rate = sinr_and_rate(detectors, p_tx, h_eff, tiny)
    want = sinr_oracle(detectors, p_tx, h_eff, tiny)
    np.testing.assert_allclose(gamma, want, rtol=1e-12)
    np.testing.assert_allclose(rate, tiny.bandwidth_hz * np.log2(1.0 + want), rtol=1e-12)
    assert update_rho(detectors, p_tx, h_eff, tiny) == pytest.approx(gamma)


def test_zero_power_gives_zero_sinr(tiny, stage):
    _, h_eff, detectors, _ = stage
    gamma, rate = sinr_and_rate(detectors, np.zeros(tiny.num_wds), h_eff, tiny)
    np.testing.assert_array_equal(gamma, 0.0)
    np.testing.assert_array_equal(rate, 0.0)


def test_update_xi_is_stationary(tiny, stage):
    _, h_eff, detectors, p_tx = stage
    rho = update_rho(detectors, p_tx, h_eff, tiny)
    mu = (1.0 + rho) * tiny.bandwidth_hz
    xi = update_xi(detectors, p_tx, h_eff, mu, tiny)
    base = xi_surrogate(xi, detectors, p_tx, h_eff, mu, tiny)
    rng = np.random.default_rng(31)
    for _ in range(100):
        step = 10.0 ** rng.uniform(-6, -1)
        cand = xi + step * rand_complex(rng, xi.shape)
        assert xi_surrogate(cand, detectors, p_tx, h_eff, mu, tiny) <= base + 1e-8


def test_update_varpi_is_stationary(tiny, tiny_channels, stage):
    v, h_eff, detectors, p_tx = stage
    rho = update_rho(detectors, p_tx, h_eff, tiny)
    mu = (1.0 + rho) * tiny.bandwidth_hz
    varpi = update_varpi(detectors, p_tx, v, tiny_channels, mu, tiny)
    base = varpi_surrogate(varpi, detectors, p_tx, v, tiny_channels, mu, tiny)
    rng = np.random.default_rng(37)
    for _ in range(100):
        step = 10.0 ** rng.uniform(-6, -1)
        cand = varpi + step * rand_complex(rng, varpi.shape)
        assert varpi_surrogate(cand, detectors, p_tx, v, tiny_channels,
                               mu, tiny) <= base + 1e-8


def test_solve_mud_blocks_capped_and_stationary(tiny, stage):
    _, h_eff, detectors, p_tx = stage
    rho = update_rho(detectors, p_tx, h_eff, tiny)
    mu = (1.0 + rho) * tiny.bandwidth_hz
    xi = update_xi(detectors, p_tx, h_eff, mu, tiny)
    u = solve_mud(xi, p_tx, h_eff, mu, tiny)
    m = tiny.num_antennas
    base = h_eff.T * p_tx @ h_eff.conj() + tiny.noise_w * np.eye(tiny.dim_bm)

    def objective(k, uk):
        a = np.abs(xi[k]) ** 2 * base
        b = math.sqrt(mu[k] * p_tx[k]) * np.conj(xi[k]) * h_eff[k]
        return float(2 * np.real(np.vdot(b, uk)) - np.real(uk.conj() @ a @ uk))

    rng = np.random.default_rng(41)
    for k in range(tiny.num_wds):
        for b in range(tiny.num_haps):
            assert np.linalg.norm(u[k, b * m:(b + 1) * m]) <= 1 + 1e-9
        got = objective(k, u[k])
        for _ in range(50):
            cand = u[k] + 10.0 ** rng.uniform(-5, -1) * rand_complex(rng, u[k].shape)
            for bb in range(tiny.num_haps):
                blk = slice(bb * m, (bb + 1) * m)
                nrm = np.linalg.norm(cand[blk])
                if nrm > 1.0:
                    cand[blk] /= nrm
            assert objective(k, cand) <= got + 1e-7 * max(1.0, abs(got))


def test_solve_mud_zero_auxiliary_zero_detector(tiny, stage):
    _, h_eff, _, p_tx = stage
    mu = np.full(tiny.num_wds, tiny.bandwidth_hz)
    xi = np.zeros(tiny.num_wds, dtype=complex)
    u = solve_mud(xi, p_tx, h_eff, mu, tiny)
    np.testing.assert_array_equal(u, 0)


def grid_split_oracle(c, d, budget, f_hi, t1, cfg, points=6000):
    """Per-device reference: scan f, close p in closed form."""
    best = -np.inf
    best_pf = (0.0, 0.0)
    for f in np.linspace(0.0, min(f_hi, math.sqrt(budget / cfg.kappa_eff)), points):
        head = budget - cfg.kappa_eff * f * f
        if head < 0:
            continue
        p_unc = c / (2 * d) if d > 0 else math.sqrt(head)
        p = min(p_unc, math.sqrt(head))
        val = c * p - d * p * p + f / cfg.cycles_per_bit
        if val > best:
            best, best_pf = val, (p, f)
    return best, best_pf


def test_solve_power_freq_matches_grid_oracle(tiny, stage):
    _, h_eff, detectors, p_tx = stage
    rho = update_rho(detectors, p_tx, h_eff, tiny)
    mu = (1.0 + rho) * tiny.bandwidth_hz
    xi = update_xi(detectors, p_tx, h_eff, mu, tiny)
    t1 = 0.6
    # budgets tight enough that the multiplier search actually runs
    e_wd = np.array([3e-4, 8e-5]) * t1
    p_new, f_new = solve_power_freq(xi, detectors, h_eff, mu, e_wd, t1, tiny)

    s = detectors.conj() @ h_eff.T
    c_lin = 2.0 * np.sqrt(mu) * np.real(np.conj(xi) * np.diag(s))
    d_quad = (np.abs(xi) ** 2) @ (np.abs(s) ** 2)
    for k in range(tiny.num_wds):
        budget = e_wd[k] / t1 - tiny.p_circuit_w
        want, _ = grid_split_oracle(max(c_lin[k], 0.0), d_quad[k], budget,
                                    tiny.f_max_hz, t1, tiny)
        got = c_lin[k] * math.sqrt(p_new[k]) - d_quad[k] * p_new[k] \
            + f_new[k] / tiny.cycles_per_bit
        assert got >= want - 1e-6 * max(1.0, abs(want))
        # and the budget is honoured
        assert tiny.kappa_eff * f_new[k] ** 2 + p_new[k] \
            <= budget * (1 + 1e-9) + 1e-18


def test_solve_power_freq_slack_budget_hits_f_max(tiny, stage):
    _, h_eff, detectors, p_tx = stage
    mu = np.full(tiny.num_wds, tiny.bandwidth_hz)
    xi = update_xi(detectors, p_tx, h_eff, mu, tiny)
    e_wd = np.full(tiny.num_wds, 1e3)    # effectively unconstrained
    p_new, f_new = solve_power_freq(xi, detectors, h_eff, mu, e_wd, 0.5, tiny)
    np.testing.assert_allclose(f_new, tiny.f_max_hz)
    assert np.all(p_new >= 0)


def test_solve_power_freq_zero_cap_forces_offloading(tiny, stage):
    _, h_eff, detectors, p_tx = stage
    mu = np.full(tiny.num_wds, tiny.bandwidth_hz)
    xi = update_xi(detectors, p_tx, h_eff, mu, tiny)
    _, f_new = solve_power_freq(xi, detectors, h_eff, mu,
                                np.full(tiny.num_wds, 1e-4), 0.5, tiny, f_cap_hz=0.0)
    np.testing.assert_array_equal(f_new, 0.0)


def test_solve_power_freq_starved_device(tiny, stage):
    _, h_eff, detectors, _ = stage
    mu = np.full(tiny.num_wds, tiny.bandwidth_hz)
    xi = np.ones(tiny.num_wds, dtype=complex)
    e_wd = np.array([1e-6, -1e-3])    # second device under the circuit floor
    with pytest.raises(InfeasibleError):
        solve_power_freq(xi, detectors, h_eff, mu, e_wd, 0.5, tiny)
    with pytest.raises(ValueError):
        solve_power_freq(xi, detectors, h_eff, mu, np.abs(e_wd), 0.0, tiny)


def test_matched_detectors_unit_blocks(tiny, stage):
    _, h_eff, _, _ = stage
    u = _matched_detectors(h_eff, tiny)
    m = tiny.num_antennas
    for k in range(tiny.num_wds):
        for b in range(tiny.num_haps):
            assert np.linalg.norm(u[k, b * m:(b + 1) * m]) == pytest.approx(1.0)


@pytest.fixture(scope="module")
def tiny_wet(tiny, tiny_channels):
    wet, _ = solve_p3(tiny_channels, tiny, tau2=0.3)
    return wet


def check_p4_contract(setting, report, wet, tau1, cfg, channels, dark=False):
    if not dark:
        model = PhaseModel.from_config(cfg)
        np.testing.assert_allclose(setting.profile_offload.v,
                                   reflect_coeff(setting.profile_offload.theta, model),
                                   rtol=1e-12)
    h = effective_channels(channels, setting.profile_offload.v)
    _, rates = sinr_and_rate(setting.detectors, setting.p_tx_w, h, cfg)
    np.testing.assert_allclose(setting.rates_bps, rates, rtol=1e-12)
    t1 = cfg.block_s - tau1 - wet.tau2_s
    m = cfg.num_antennas
    for k in range(cfg.num_wds):
        for b in range(cfg.num_haps):
            assert np.linalg.norm(setting.detectors[k, b * m:(b + 1) * m]) <= 1 + 1e-9
        assert setting.p_tx_w[k] >= 0
        assert -1e-12 <= setting.f_hz[k] <= cfg.f_max_hz * (1 + 1e-9)
        spend = t1 * (setting.p_tx_w[k] + cfg.kappa_eff * setting.f_hz[k] ** 2
                      + cfg.p_circuit_w)
        assert spend <= wet.e_wd[k] * (1 + 1e-6) + 1e-15
    for stage_name, _, trace in report.inner_trace:
        assert stage_name == "p4"
        arr = np.asarray(trace)
        assert np.all(np.diff(arr) >= -1e-8 * np.maximum(1.0, np.abs(arr[:-1])))
    assert report.outer_trace[-1][2] <= cfg.penalty_tol


def test_solve_p4_contract(tiny, tiny_channels, tiny_wet):
    setting, report = solve_p4(tiny_channels, tiny_wet, tau1=0.1, config=tiny)
    check_p4_contract(setting, report, tiny_wet, 0.1, tiny, tiny_channels)


def test_solve_p4_dark_surfaces(tiny, tiny_channels, tiny_wet):
    setting, report = solve_p4(tiny_channels, tiny_wet, tau1=0.0, config=tiny,
                               irs_active=False)
    np.testing.assert_array_equal(setting.profile_offload.v, 0)
    assert report.outer_iters == 1
    check_p4_contract(setting, report, tiny_wet, 0.0, tiny, tiny_channels, dark=True)


def test_solve_p4_full_offloading_cap(tiny, tiny_channels, tiny_wet):
    setting, _ = solve_p4(tiny_channels, tiny_wet, tau1=0.1, config=tiny,
                          f_cap_hz=0.0)
    np.testing.assert_array_equal(setting.f_hz, 0.0)


def test_solve_p4_no_time_left(tiny, tiny_channels, tiny_wet):
    with pytest.raises(ValueError):
        solve_p4(tiny_channels, tiny_wet, tau1=tiny.block_s - tiny_wet.tau2_s,
                 config=tiny)
