"""Compute-and-offload stage: detectors, uplink powers, CPU speeds, reflection.

The stage maximises the weighted sum of offloaded-plus-local bits under
per-device energy budgets fixed by the charging stage.  The sum of
logarithms is decoupled by a Lagrangian dual reformulation (auxiliary
SINR surrogates ``rho``) and the resulting ratios by quadratic
transforms (auxiliaries ``xi`` for the detector/power blocks, ``varpi``
for the reflection block), after which every block update is either
closed form or a small convex program:

    rho -> xi -> detectors -> varpi -> reflection -> phases -> powers/CPU

with the penalty weight on the realisability mismatch of the free
reflection coefficients tightened in an outer loop, exactly as in the
energy stage.  The auxiliary ``xi`` is refreshed once more before the
power step so that its surrogate touches the true objective at the
current iterate; without the refresh the power block can regress the
outer objective it is meant to ascend.

All quantities are evaluated in natural-log units internally (the
surrogate of the rate term); reported rates are converted to bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .conic import SubproblemError, ball_qp, solve_conic
from .errors import InfeasibleError
from .model import ChannelSet, PhaseProfile, SolveReport, effective_channels, substream
from .phase import PhaseModel, penalty_residual, project_profile, reflect_coeff
from .wet import WetSetting


@dataclass(frozen=True)
class ComputeSetting:
    """Result of the offloading design at one (tau2, t1) split."""

    profile_offload: PhaseProfile
    detectors: np.ndarray    # (K, BM), per-HAP block norms <= 1
    p_tx_w: np.ndarray       # (K,)
    f_hz: np.ndarray         # (K,)
    rho: np.ndarray          # (K,) final SINRs (the surrogate is exact at exit)
    rates_bps: np.ndarray    # (K,)

    def __post_init__(self):
        for arr in (self.detectors, self.p_tx_w, self.f_hz, self.rho, self.rates_bps):
            arr.setflags(write=False)


def _inner_products(detectors: np.ndarray, h_eff: np.ndarray) -> np.ndarray:
    """s[k, j] = u_k^H h_j."""
    return detectors.conj() @ h_eff.T


def sinr_and_rate(detectors: np.ndarray, p_tx: np.ndarray, h_eff: np.ndarray,
                  config: SystemConfig):
    """Per-device SINR and offloading rate in bits/s."""
    s = _inner_products(detectors, h_eff)
    sig = p_tx * np.abs(np.diag(s)) ** 2
    tot = (np.abs(s) ** 2) @ p_tx
    noise = config.noise_w * np.sum(np.abs(detectors) ** 2, axis=1)
    denom = tot - sig + noise
    gamma = np.where(denom > 0.0, sig / np.where(denom > 0.0, denom, 1.0), 0.0)
    rate = config.bandwidth_hz * np.log2(1.0 + gamma)
    return gamma, rate


def update_rho(detectors, p_tx, h_eff, config) -> np.ndarray:
    """Exact maximiser of the decoupled objective over the SINR surrogates."""
    gamma, _ = sinr_and_rate(detectors, p_tx, h_eff, config)
    return gamma


def update_xi(detectors, p_tx, h_eff, mu, config) -> np.ndarray:
    """Quadratic-transform auxiliary for the detector/power ratios.

    xi_k = sqrt(mu_k P_k) u_k^H h_k / (sum_j P_j |u_k^H h_j|^2 + noise_k),
    the closed-form maximiser of the surrogate for fixed everything else.
    """
    s = _inner_products(detectors, h_eff)
    denom = (np.abs(s) ** 2) @ p_tx + config.noise_w * np.sum(np.abs(detectors) ** 2, axis=1)
    num = np.sqrt(mu * p_tx) * np.diag(s)
    return np.where(denom > 0.0, num / np.where(denom > 0.0, denom, 1.0), 0.0 + 0.0j)


def _ratio_terms(detectors, p_tx, h_eff, config) -> np.ndarray:
    """g_k ratios (self-term denominators) entering the surrogate objective."""
    s = _inner_products(detectors, h_eff)
    sig = p_tx * np.abs(np.diag(s)) ** 2
    denom = (np.abs(s) ** 2) @ p_tx + config.noise_w * np.sum(np.abs(detectors) ** 2, axis=1)
    return np.where(denom > 0.0, sig / np.where(denom > 0.0, denom, 1.0), 0.0)


def surrogate_objective(rho, detectors, p_tx, f_hz, h_eff, config) -> float:
    """The decoupled objective (natural-log units) without the penalty term."""
    g = _ratio_terms(detectors, p_tx, h_eff, config)
    om = config.bandwidth_hz
    return float(np.sum(om * (np.log(1.0 + rho) - rho + (1.0 + rho) * g))
                 + np.sum(f_hz / config.cycles_per_bit))


def solve_mud(xi, p_tx, h_eff, mu, config, report: SolveReport | None = None) -> np.ndarray:
    """Detector update: K independent per-HAP-norm-capped quadratic programs.

    Each device's program is max -u^H A u + 2 Re{b^H u} with
    A = |xi_k|^2 (sum_j P_j h_j h_j^H + noise I); a device with a zero
    auxiliary has a pure-penalty objective and gets the zero detector.
    """
    cfg = config
    K, bm = h_eff.shape
    prog = ball_qp(bm, cfg.num_antennas, var="u")
    base = (h_eff.T * p_tx) @ h_eff.conj() + cfg.noise_w * np.eye(bm)
    detectors = np.zeros((K, bm), dtype=complex)
    for k in range(K):
        w = np.abs(xi[k]) ** 2
        if w == 0.0:
            continue
        A = w * base
        L = np.linalg.cholesky(0.5 * (A + A.conj().T))
        b = np.sqrt(mu[k] * p_tx[k]) * np.conj(xi[k]) * h_eff[k]
        sol = solve_conic(prog.set(F=L, c=b))
        if report is not None:
            report.subsolver_statuses.append(("p4_mud", sol.status, sol.solver))
        if not sol.ok:
            raise SubproblemError(f"detector update failed for device {k}: {sol.status}")
        u = sol.values["u"]
        # repair solver round-off so block norms never exceed one
        for i in range(cfg.num_haps):
            blk = slice(i * cfg.num_antennas, (i + 1) * cfg.num_antennas)
            nrm = np.linalg.norm(u[blk])
            if nrm > 1.0:
                u[blk] /= nrm
        detectors[k] = u
    return detectors


def update_varpi(detectors, p_tx, v, channels, mu, config) -> np.ndarray:
    """Quadratic-transform auxiliary for the reflection block."""
    h_eff = effective_channels(channels, v)
    s = _inner_products(detectors, h_eff)
    f_mat = s * np.sqrt(p_tx)[None, :]              # F[k, j] = sqrt(P_j) u_k^H h_j
    denom = np.sum(np.abs(f_mat) ** 2, axis=1) \
        + config.noise_w * np.sum(np.abs(detectors) ** 2, axis=1)
    num = np.sqrt(mu) * np.diag(f_mat)
    return np.where(denom > 0.0, num / np.where(denom > 0.0, denom, 1.0), 0.0 + 0.0j)


def solve_passive(varpi, detectors, p_tx, channels, mu, anchor, iota2, config,
                  report: SolveReport | None = None) -> np.ndarray:
    """Reflection-coefficient update under the disc constraint.

    Solves min v^H Lam v - 2 Re{nu^H v} + iota2 ||v - anchor||^2 where
    Lam and nu collect the quadratic-transform expansion of every
    (device, interferer) pair through the surfaces.
    """
    if iota2 <= 0:
        raise ValueError("iota2 must be positive")
    K = detectors.shape[0]
    dim_in = channels.h_surface.shape[1]
    # rows t[k, j, :]: sqrt(P_j) (u_k^H G) * h_surface_j, so F_kj = c_kj + t_kj @ v
    ug = detectors.conj() @ channels.reflect_matrix          # (K, IN)
    t = np.sqrt(p_tx)[None, :, None] * (ug[:, None, :] * channels.h_surface[None, :, :])
    c0 = np.sqrt(p_tx)[None, :] * (detectors.conj() @ channels.h_direct.T)
    a = t.conj()                                             # F_kj = c_kj + a_kj^H v
    w = (np.abs(varpi) ** 2)[:, None]
    lam = np.einsum("kjn,kjm->nm", w[:, :, None] * a, a.conj())
    nu = (np.sqrt(mu) * varpi) @ a[np.arange(K), np.arange(K), :] \
        - np.einsum("kj,kjn->n", w * c0, a)
    evals, evecs = np.linalg.eigh(0.5 * (lam + lam.conj().T))
    R = evecs * np.sqrt(np.clip(evals, 0.0, None))[None, :]
    prog = ball_qp(dim_in, 1, ridge=True, var="v")
    sq = math.sqrt(iota2)
    sol = solve_conic(prog.set(F=R, c=nu, sq=sq, sq_anchor=sq * np.asarray(anchor)))
    if report is not None:
        report.subsolver_statuses.append(("p4_passive", sol.status, sol.solver))
    if not sol.ok:
        raise SubproblemError(f"reflection update failed: {sol.status}")
    v = sol.values["v"]
    mags = np.abs(v)
    return np.where(mags > 1.0, v / np.where(mags > 1.0, mags, 1.0), v)


def solve_power_freq(xi, detectors, h_eff, mu, e_wd, t1, config,
                     f_cap_hz: float | None = None):
    """Exact per-device power/CPU split under the energy budget.

    After substituting p = sqrt(P) the surrogate separates per device
    into max c p - d p^2 + f / cycles_per_bit subject to
    kappa f^2 + p^2 <= budget with budget = E/t1 - P_c, which a single
    nonnegative multiplier solves; the multiplier is bisected to machine
    precision.  A device whose budget is negative cannot even power its
    circuit, which is reported as infeasibility.
    """
    cfg = config
    if t1 <= 0:
        raise ValueError("t1 must be positive")
    K = h_eff.shape[0]
    s = _inner_products(detectors, h_eff)
    c_lin = 2.0 * np.sqrt(mu) * np.real(np.conj(xi) * np.diag(s))
    d_quad = (np.abs(xi) ** 2) @ (np.abs(s) ** 2)
    budgets = e_wd / t1 - cfg.p_circuit_w
    f_hi = cfg.f_max_hz if f_cap_hz is None else min(cfg.f_max_hz, f_cap_hz)

    p = np.zeros(K)
    f = np.zeros(K)
    for k in range(K):
        budget = budgets[k]
        if budget < -1e-15 * max(1.0, cfg.p_circuit_w):
            raise InfeasibleError(
                f"device {k} cannot power its circuit "
                f"(harvested {e_wd[k]:.3e} J < {t1 * cfg.p_circuit_w:.3e} J)")
        if budget <= 0.0:
            continue
        c, d = max(c_lin[k], 0.0), d_quad[k]

        def split(lam: float):
            den = 2.0 * (d + lam * t1)
            pk = c / den if den > 0.0 else (0.0 if c == 0.0 else math.inf)
            if lam <= 0.0:
                fk = f_hi
            else:
                fk = min(f_hi, 1.0 / (2.0 * cfg.cycles_per_bit * cfg.kappa_eff * t1 * lam))
            return pk, fk

        def excess(lam: float) -> float:
            pk, fk = split(lam)
            if math.isinf(pk):
                return math.inf
            return cfg.kappa_eff * fk * fk + pk * pk - budget

        if excess(0.0) <= 0.0:
            p[k], f[k] = split(0.0)
            continue
        lo, hi = 0.0, max(1.0, d / t1)
        for _ in range(600):
            if excess(hi) < 0.0:
                break
            hi *= 2.0
        else:
            raise SubproblemError(f"power split bracket failed for device {k}")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if excess(mid) > 0.0:
                lo = mid
            else:
                hi = mid
        p[k], f[k] = split(hi)      # the feasible side of the bracket
    # a power carrying less than ~1e-12 of its budget is numerically "off";
    # snapping it to zero keeps later ratio auxiliaries from dividing 0 by 0
    p[p ** 2 <= 1e-12 * np.maximum(budgets, 0.0)] = 0.0
    return p ** 2, f


def _init_power_freq(e_wd, t1, cfg, f_cap_hz):
    budgets = e_wd / t1 - cfg.p_circuit_w
    for k, budget in enumerate(budgets):
        if budget < -1e-15 * max(1.0, cfg.p_circuit_w):
            raise InfeasibleError(
                f"device {k} cannot power its circuit "
                f"(harvested {e_wd[k]:.3e} J < {t1 * cfg.p_circuit_w:.3e} J)")
    p_tx = 0.5 * np.maximum(budgets, 0.0)
    f_hi = cfg.f_max_hz if f_cap_hz is None else min(cfg.f_max_hz, f_cap_hz)
    head = np.maximum(budgets - p_tx, 0.0) / cfg.kappa_eff
    f_hz = np.minimum(f_hi, np.sqrt(head))
    return p_tx, f_hz


def _matched_detectors(h_eff: np.ndarray, cfg: SystemConfig) -> np.ndarray:
    detectors = np.zeros_like(h_eff)
    m = cfg.num_antennas
    for k in range(h_eff.shape[0]):
        for b in range(cfg.num_haps):
            blk = slice(b * m, (b + 1) * m)
            nrm = np.linalg.norm(h_eff[k, blk])
            if nrm > 0.0:
                detectors[k, blk] = h_eff[k, blk] / nrm
    return detectors


def solve_p4(channels: ChannelSet, wet: WetSetting, tau1: float, config: SystemConfig,
             f_cap_hz: float | None = None, irs_active: bool = True):
    """Offloading design by the penalised block cycle.

    ``wet`` fixes the harvested budgets; ``t1 = T - tau1 - tau2`` is the
    remaining slot.  With ``irs_active=False`` the reflection blocks are
    skipped and the surfaces stay dark (zero coefficients), which is the
    conventional-network baseline.  Returns a consistent
    :class:`ComputeSetting` plus the iteration report.
    """
    cfg = config
    t1 = cfg.block_s - tau1 - wet.tau2_s
    if t1 <= 0:
        raise ValueError("no time left for computing after the charging slots")
    model = PhaseModel.from_config(cfg)
    report = SolveReport()

    if irs_active:
        rng = substream(channels.seed, "init_offload_phase")
        theta = rng.uniform(-math.pi, math.pi, size=cfg.dim_in)
        prof = PhaseProfile(theta=theta, v=reflect_coeff(theta, model))
    else:
        zeros = np.zeros(cfg.dim_in)
        prof = PhaseProfile(theta=zeros, v=np.zeros(cfg.dim_in, dtype=complex))
    v = prof.v.copy()
    p_tx, f_hz = _init_power_freq(wet.e_wd, t1, cfg, f_cap_hz)
    h_eff = effective_channels(channels, v)
    detectors = _matched_detectors(h_eff, cfg)
    rho = update_rho(detectors, p_tx, h_eff, cfg)

    iota = cfg.iota2_init
    for outer in range(cfg.p4_outer_cap):
        trace = []
        prev_merit = None
        for _ in range(cfg.p4_inner_cap):
            h_eff = effective_channels(channels, v)
            rho = update_rho(detectors, p_tx, h_eff, cfg)
            mu = (1.0 + rho) * cfg.bandwidth_hz
            xi = update_xi(detectors, p_tx, h_eff, mu, cfg)
            detectors = solve_mud(xi, p_tx, h_eff, mu, cfg, report)
            if irs_active:
                varpi = update_varpi(detectors, p_tx, v, channels, mu, cfg)
                v = solve_passive(varpi, detectors, p_tx, channels, mu, prof.v,
                                  iota, cfg, report)
                prof = project_profile(v, model, cfg.delta_rad, theta_prev=prof.theta)
                h_eff = effective_channels(channels, v)
            xi = update_xi(detectors, p_tx, h_eff, mu, cfg)
            p_tx, f_hz = solve_power_freq(xi, detectors, h_eff, mu, wet.e_wd, t1,
                                          cfg, f_cap_hz)

            pen = penalty_residual(v, prof.theta, model) if irs_active else 0.0
            merit = surrogate_objective(rho, detectors, p_tx, f_hz, h_eff, cfg) \
                - iota * pen
            trace.append(merit)
            report.inner_iters += 1
            if prev_merit is not None and \
                    abs(merit - prev_merit) <= cfg.inner_tol * max(1e-30, abs(prev_merit)):
                break
            prev_merit = merit
        report.inner_trace.append(("p4", outer, trace))
        residual = penalty_residual(v, prof.theta, model) if irs_active else 0.0
        report.outer_trace.append(("p4", iota, residual))
        report.outer_iters += 1
        if residual <= cfg.penalty_tol:
            break
        iota *= cfg.penalty_growth

    if irs_active:
        final = PhaseProfile(theta=prof.theta, v=reflect_coeff(prof.theta, model))
    else:
        final = prof
    h_final = effective_channels(channels, final.v)
    gamma, rates = sinr_and_rate(detectors, p_tx, h_final, cfg)
    setting = ComputeSetting(profile_offload=final, detectors=detectors, p_tx_w=p_tx,
                             f_hz=f_hz, rho=gamma, rates_bps=rates)
    return setting, report
