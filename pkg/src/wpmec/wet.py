"""Wireless energy transfer stage: charging slots and energy beams.

Two problems live here.  First, the infrastructure-charging slot: the
surfaces consume ``N*mu`` watts while awake, must bank that budget
during the first slot, and every second spent charging them is lost to
the devices, so the slot is pushed to the smallest feasible value by
bisection over a max-min-slack covariance program.  Second, the
device-charging design: transmit covariance and reflection profile that
maximise the total power delivered to the devices, handled by a
penalty-split block descent (covariance SDP with a rank-shaping cut,
closed-form minorant step for the free reflection coefficients, then
the per-element phase fit), tightening the penalty weight outside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .config import SystemConfig
from .conic import (ConicProgram, SubproblemError, dc_rank_step, rank_certificate,
                    rank_one_extract, solve_conic)
from .errors import InfeasibleError
from .model import ChannelSet, PhaseProfile, SolveReport, effective_channels, substream
from .phase import PhaseModel, penalty_residual, project_profile, reflect_coeff

_p1_templates: dict = {}
_q_templates: dict = {}


@dataclass(frozen=True)
class WetSetting:
    """Result of the device-charging design for one channel realisation."""

    tau2_s: float
    q_cov: np.ndarray            # (BM, BM) PSD transmit covariance
    profile_energy: PhaseProfile
    zeta: np.ndarray             # (K,) certified per-device received powers
    e_wd: np.ndarray             # (K,) harvested energy over the slot

    def __post_init__(self):
        for arr in (self.q_cov, self.zeta, self.e_wd):
            arr.setflags(write=False)


def _block_power(mat, b: int, m: int):
    """tr(X D_b): power the b-th HAP spends under covariance X."""
    return cp.real(cp.trace(mat[b * m:(b + 1) * m, b * m:(b + 1) * m])) \
        if isinstance(mat, cp.Expression) \
        else float(np.real(np.trace(mat[b * m:(b + 1) * m, b * m:(b + 1) * m])))


def optimal_tau1(w_cov: np.ndarray, channels: ChannelSet) -> float:
    """Smallest charging slot that keeps every surface self-powered.

    Surface i needs (T - tau1) * N * mu joules but banks
    tau1 * eta * tr(G_i G_i^H W); solving for equality gives
    tau1_i = N mu T / (N mu + eta tr(G_i G_i^H W)) and the binding
    surface decides.
    """
    cfg = channels.config
    draw = cfg.num_elements * cfg.mu_w
    harvest = cfg.eta * np.real(np.einsum("ijk,kj->i", channels.surface_gram, w_cov))
    if np.any(harvest < -1e-12):
        raise ValueError("covariance produced negative harvested power")
    return float(np.max(draw * cfg.block_s / (draw + np.maximum(harvest, 0.0))))


def _p1_template(cfg: SystemConfig) -> ConicProgram:
    key = (cfg.num_haps, cfg.num_antennas, cfg.num_irs)
    if key in _p1_templates:
        return _p1_templates[key]
    bm, I = cfg.dim_bm, cfg.num_irs
    W = cp.Variable((bm, bm), hermitian=True)
    slack = cp.Variable()
    need = cp.Parameter()                 # N mu (T - tau1)
    pmax = cp.Parameter(nonneg=True)
    coupled = [cp.Parameter((bm, bm), hermitian=True) for _ in range(I)]  # tau1 eta G'_i
    cons = [W >> 0]
    cons += [_block_power(W, b, cfg.num_antennas) <= pmax for b in range(cfg.num_haps)]
    cons += [need + slack <= cp.real(cp.trace(W @ coupled[i])) for i in range(I)]
    prog = ConicProgram(
        problem=cp.Problem(cp.Maximize(slack), cons),
        variables={"w": W, "slack": slack},
        params={"need": need, "pmax": pmax, **{f"coupled{i}": c for i, c in enumerate(coupled)}},
        psd_names=("w",),
    )
    _p1_templates[key] = prog
    return prog


def solve_p1(channels: ChannelSet, config: SystemConfig):
    """Minimise the infrastructure-charging slot by bisection.

    Each probe solves a max-min-slack covariance program; a slot is
    feasible exactly when the optimal slack is nonnegative.  Returns
    ``(tau1, w_cov, report)`` with tau1 within ``bisect_tol_s`` of the
    smallest feasible value.
    """
    cfg = config
    prog = _p1_template(cfg)
    report = SolveReport()

    def probe(tau1: float):
        updates = {
            "need": cfg.num_elements * cfg.mu_w * (cfg.block_s - tau1),
            "pmax": cfg.p_max_w,
        }
        for i in range(cfg.num_irs):
            updates[f"coupled{i}"] = tau1 * cfg.eta * channels.surface_gram[i]
        sol = solve_conic(prog.set(**updates))
        report.subsolver_statuses.append(("p1_probe", sol.status, sol.solver))
        if not sol.ok:
            raise SubproblemError(f"charging-slot probe failed: {sol.status}")
        return float(sol.values["slack"]), sol.values["w"]

    hi = cfg.block_s
    slack, w_best = probe(hi)
    if slack < -1e-9:
        raise InfeasibleError("surfaces cannot bank their draw even with the full block")
    lo = 0.0
    while hi - lo > cfg.bisect_tol_s:
        mid = 0.5 * (lo + hi)
        slack, w_mid = probe(mid)
        if slack >= -1e-12:
            hi, w_best = mid, w_mid
        else:
            lo = mid
    return hi, w_best, report


def harvested_energy(tau1: float, tau2: float, w_cov: np.ndarray, q_cov: np.ndarray,
                     profile_energy: PhaseProfile, channels: ChannelSet):
    """Energy banked by each surface and each device over its slot."""
    cfg = channels.config
    e_irs = tau1 * cfg.eta * np.real(np.einsum("ijk,kj->i", channels.surface_gram, w_cov))
    h = effective_channels(channels, profile_energy.v)
    received = np.real(np.einsum("kb,bc,kc->k", h.conj(), q_cov, h))
    e_wd = tau2 * cfg.eta * np.maximum(received, 0.0)
    return e_irs, e_wd


def _q_template(cfg: SystemConfig) -> ConicProgram:
    key = (cfg.num_haps, cfg.num_antennas, cfg.num_wds)
    if key in _q_templates:
        return _q_templates[key]
    bm, K = cfg.dim_bm, cfg.num_wds
    Q = cp.Variable((bm, bm), hermitian=True)
    zeta = cp.Variable(K)
    hmats = [cp.Parameter((bm, bm), hermitian=True) for _ in range(K)]
    u_dc = cp.Parameter((bm, bm), hermitian=True)
    pmax = cp.Parameter(nonneg=True)
    rank_slack = cp.Parameter(nonneg=True)
    cons = [Q >> 0]
    cons += [_block_power(Q, b, cfg.num_antennas) <= pmax for b in range(cfg.num_haps)]
    cons += [cp.real(cp.trace(Q @ hmats[k])) >= zeta[k] for k in range(K)]
    # affine minorant of the spectral norm: u^H Q u = tr(Q uu^H); with
    # u_dc = I the cut is vacuous, which is how each pass opens rank-free
    cons.append(cp.real(cp.trace(Q)) - cp.real(cp.trace(Q @ u_dc)) <= rank_slack * cp.real(cp.trace(Q)))
    prog = ConicProgram(
        problem=cp.Problem(cp.Maximize(cp.sum(zeta)), cons),
        variables={"q": Q, "zeta": zeta},
        params={"u_dc": u_dc, "pmax": pmax, "rank_slack": rank_slack,
                **{f"h{k}": h for k, h in enumerate(hmats)}},
        psd_names=("q",),
    )
    _q_templates[key] = prog
    return prog


def _received_powers(q_cov: np.ndarray, h_eff: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("kb,bc,kc->k", h_eff.conj(), q_cov, h_eff))


def _q_step(q_prev: np.ndarray, h_eff: np.ndarray, cfg: SystemConfig,
            report: SolveReport, first: bool):
    """Covariance update: maximise total received power, then shape to rank one.

    Runs a short linearisation loop on the spectral-norm cut.  Keeps the
    best iterate that passes the rank certificate and never returns
    something worse than ``q_prev`` when ``q_prev`` itself is certified,
    which keeps the enclosing descent monotone.
    """
    prog = _q_template(cfg)
    hmats = {f"h{k}": np.outer(h_eff[k], h_eff[k].conj()) for k in range(h_eff.shape[0])}
    # solve in normalised units (unit power cap, O(1) gains): the raw data
    # spans ten decades at large power caps, which starves the interior
    # point method of progress
    gain = max(float(np.real(np.trace(h))) for h in hmats.values())
    if gain <= 0.0:
        gain = 1.0
    # the imposed cut sits a factor below the certificate threshold so
    # that solver slack cannot park iterates just past the acceptance line
    prog.set(pmax=1.0, rank_slack=0.25 * cfg.rank_tol,
             **{name: h / gain for name, h in hmats.items()})

    def merit(q):
        return float(np.sum(_received_powers(q, h_eff)))

    best_q = None
    best_val = -np.inf
    if not first and rank_certificate(q_prev) <= cfg.rank_tol * (1 + 1e-9):
        best_q, best_val = q_prev, merit(q_prev)

    # exact zeros in a parameter value change the compiled sparsity pattern
    # and break the cached solver between calls; a 1e-30 floor keeps the
    # pattern dense without moving the cut
    dense = np.full((cfg.dim_bm, cfg.dim_bm), 1e-30, dtype=complex)
    # every call opens rank-free: the uncut optimum is extreme for the two
    # power rows and almost always certifies rank one on its own, and the
    # cut-free instance is strictly feasible, which the interior point
    # method handles far better than an active cut pinned at the optimum
    anchor = np.eye(cfg.dim_bm, dtype=complex) + dense
    q_cur = q_prev
    for _ in range(cfg.dc_cap):
        sol = solve_conic(prog.set(u_dc=anchor))
        report.subsolver_statuses.append(("p3_qstep", sol.status, sol.solver))
        if not sol.ok:
            raise SubproblemError(f"covariance step failed: {sol.status}")
        q_cur = cfg.p_max_w * sol.values["q"]
        cert = rank_certificate(q_cur)
        if cert <= cfg.rank_tol:
            if merit(q_cur) > best_val:
                best_q, best_val = q_cur, merit(q_cur)
            break
        u = dc_rank_step(q_cur)
        anchor = np.outer(u, u.conj()) + dense
    if best_q is None:
        # never certified; fall back to the leading beam of the last iterate
        x, _ = rank_one_extract(q_cur)
        best_q = np.outer(x, x.conj())
    return best_q


def sca_step_vE(x_beam: np.ndarray, channels: ChannelSet, v_prev: np.ndarray,
                anchor: np.ndarray, iota1: float):
    """One minorant step for the free reflection coefficients.

    The per-device received power through beam x is |d_k + v^H c_k|^2;
    its affine minorant at ``v_prev`` turns the penalised program into a
    separable projection, solved in closed form:

        v* = clip_disc(anchor + grad / iota1).

    Returns the new coefficients and the minorant values, which lower
    bound the true received powers wherever evaluated.
    """
    if iota1 <= 0:
        raise ValueError("iota1 must be positive")
    c = channels.h_surface.conj() * (channels.reflect_matrix.conj().T @ x_beam)[None, :]
    d = channels.h_direct.conj() @ x_beam
    resp_prev = d + c @ v_prev.conj()        # d_k + v_prev^H c_k
    grad = (c * resp_prev.conj()[:, None]).sum(axis=0)   # sum_k c_k (d_k + v^H c_k)^*
    target = anchor + grad / iota1
    mags = np.abs(target)
    v_new = np.where(mags > 1.0, target / np.maximum(mags, 1e-300), target)
    resp_new = d + c @ v_new.conj()
    f_prev = np.abs(resp_prev) ** 2
    zeta = f_prev + 2.0 * np.real(np.conj(resp_prev) * (resp_new - resp_prev))
    return v_new, zeta


def solve_p3(channels: ChannelSet, config: SystemConfig, tau2: float,
             irs_active: bool = True):
    """Device-charging design by penalty-split block descent.

    The three blocks per inner pass are the covariance step, the free
    reflection coefficients (closed-form minorant projection), and the
    per-element phase fit; the outer layer multiplies the penalty weight
    until the free coefficients agree with realisable ones.  With
    ``irs_active=False`` the reflection blocks are skipped and only the
    covariance is optimised against the direct links.  Returns a
    consistent :class:`WetSetting` and the iteration report.
    """
    cfg = config
    if not 0.0 < tau2 < cfg.block_s:
        raise ValueError(f"tau2 must lie in (0, {cfg.block_s}), got {tau2}")
    model = PhaseModel.from_config(cfg)
    if irs_active:
        rng = substream(channels.seed, "init_energy_phase")
        theta = rng.uniform(-math.pi, math.pi, size=cfg.dim_in)
        prof = PhaseProfile(theta=theta, v=reflect_coeff(theta, model))
    else:
        prof = PhaseProfile(theta=np.zeros(cfg.dim_in),
                            v=np.zeros(cfg.dim_in, dtype=complex))
    v = prof.v.copy()
    q_cov = (cfg.p_max_w / cfg.num_antennas) * np.eye(cfg.dim_bm, dtype=complex)
    report = SolveReport()

    iota = cfg.iota1_init
    for outer in range(cfg.p3_outer_cap):
        trace = []
        prev_merit = None
        first = outer == 0
        for inner in range(cfg.p3_inner_cap):
            h_eff = effective_channels(channels, v)
            q_cov = _q_step(q_cov, h_eff, cfg, report, first=(first and inner == 0))
            if irs_active:
                x_beam, _ = rank_one_extract(q_cov)
                v, zeta = sca_step_vE(x_beam, channels, v, prof.v, iota)
                prof = project_profile(v, model, cfg.delta_rad, theta_prev=prof.theta)

            pen = penalty_residual(v, prof.theta, model) if irs_active else 0.0
            merit = float(np.sum(_received_powers(q_cov, effective_channels(channels, v)))
                          - iota * pen)
            trace.append(merit)
            report.inner_iters += 1
            if prev_merit is not None and abs(merit - prev_merit) <= cfg.inner_tol * max(1e-30, abs(prev_merit)):
                prev_merit = merit
                break
            prev_merit = merit
        report.inner_trace.append(("p3", outer, trace))
        residual = penalty_residual(v, prof.theta, model) if irs_active else 0.0
        report.outer_trace.append(("p3", iota, residual))
        report.outer_iters += 1
        if residual <= cfg.penalty_tol:
            break
        iota *= cfg.penalty_growth

    # freeze the realisable profile and report energies under it
    final = PhaseProfile(theta=prof.theta, v=reflect_coeff(prof.theta, model)) \
        if irs_active else prof
    h_final = effective_channels(channels, final.v)
    zeta = _received_powers(q_cov, h_final)
    e_wd = tau2 * cfg.eta * np.maximum(zeta, 0.0)
    setting = WetSetting(tau2_s=float(tau2), q_cov=q_cov, profile_energy=final,
                         zeta=zeta, e_wd=e_wd)
    return setting, report
