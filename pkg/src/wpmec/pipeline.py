"""Whole-block orchestration: time-split search, baselines, sweeps.

The full design problem factors cleanly once the infrastructure slot is
fixed: the device-charging design is independent of the slot length
(energy scales linearly with it), and the offloading design depends on
the split only through the harvested budgets.  The driver therefore
runs the charging-slot bisection once, the device-charging descent once
per channel realisation, and the offloading descent once per candidate
split, picking the best split on a uniform interior grid.

Baselines reuse the same driver: the ideal-model bound forces unit
reflection amplitudes, the applied-ideal scheme re-prices the ideal
decisions under the lossy amplitudes, full offloading caps CPU speeds
at zero, and the surface-free scheme darkens the reflection blocks.

Sweeps fan the driver out over a parameter grid and write one CSV row
per (value, seed, scheme).  Rows are computed against the listed seed
directly so that trend comparisons stay paired across values; execution
order cannot matter because every row derives all randomness from its
own seed.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .conic import SubproblemError
from .errors import InfeasibleError
from .model import (Allocation, ChannelSet, PhaseProfile, Scenario, SolveReport,
                    build_scenario, effective_channels, perturb_csi, synth_channels)
from .offload import sinr_and_rate, solve_p4
from .phase import PhaseModel, reflect_coeff
from .wet import WetSetting, harvested_energy, optimal_tau1, solve_p1, solve_p3

SCHEMES = ("proposed", "upper_bound", "ideal_applied", "full_offloading", "no_irs")
BASELINE_KINDS = SCHEMES[1:]
SWEEP_PARAMS = ("N", "L", "P_max", "kappa_HU", "K", "delta", "beta_min", "tau2")
CSV_COLUMNS = ("sweep_param", "value", "seed", "scheme", "objective_bits",
               "sum_rate_bps", "tau1_s", "tau2_s", "t1_s", "inner_iters",
               "outer_iters", "status", "wall_s")


def objective_bits(alloc: Allocation, channels: ChannelSet, config: SystemConfig) -> float:
    """Total bits computed in the block: offloaded plus local."""
    h = effective_channels(channels, alloc.profile_offload.v)
    _, rates = sinr_and_rate(alloc.detectors, alloc.p_tx_w, h, config)
    return float(alloc.t1_s * float(np.sum(rates))
                 + float(np.sum(alloc.f_hz)) * alloc.t1_s / config.cycles_per_bit)


def _surfaces_dark(alloc: Allocation) -> bool:
    return not (np.any(alloc.profile_energy.v) or np.any(alloc.profile_offload.v))


def audit_allocation(alloc: Allocation, channels: ChannelSet, config: SystemConfig,
                     tol: float = 1e-6) -> list:
    """Independent feasibility check; returns a list of violation messages.

    Recomputes every constraint from the raw decision variables and the
    channels, sharing no code with the optimizers beyond the channel
    composition.  Devices that are completely off (zero power and zero
    CPU speed) are treated as inactive and exempt from the circuit draw,
    as are dark surfaces from their element draw.
    """
    cfg = config
    bad = []
    total = alloc.tau1_s + alloc.tau2_s + alloc.t1_s
    if not (alloc.tau1_s >= -1e-12 and alloc.tau2_s >= -1e-12 and alloc.t1_s >= -1e-12):
        bad.append(f"negative slot in ({alloc.tau1_s}, {alloc.tau2_s}, {alloc.t1_s})")
    if total > cfg.block_s * (1 + tol):
        bad.append(f"time budget exceeded: {total} > {cfg.block_s}")
    m = cfg.num_antennas
    for name, cov in (("w_cov", alloc.w_cov), ("q_cov", alloc.q_cov)):
        eigs = np.linalg.eigvalsh(0.5 * (cov + cov.conj().T))
        scale = max(float(np.trace(cov).real), 1e-30)
        if eigs.min() < -tol * scale:
            bad.append(f"{name} not PSD (min eig {eigs.min():.3e})")
        for b in range(cfg.num_haps):
            used = float(np.trace(cov[b * m:(b + 1) * m, b * m:(b + 1) * m]).real)
            if used > cfg.p_max_w * (1 + tol):
                bad.append(f"{name} HAP {b} power {used:.6f} > {cfg.p_max_w}")
    for k in range(alloc.detectors.shape[0]):
        for b in range(cfg.num_haps):
            nrm = float(np.linalg.norm(alloc.detectors[k, b * m:(b + 1) * m]))
            if nrm > 1 + tol:
                bad.append(f"detector block ({b},{k}) norm {nrm:.8f} > 1")
    if np.any(alloc.p_tx_w < -1e-12):
        bad.append("negative transmit power")
    if np.any(alloc.f_hz < -1e-12) or np.any(alloc.f_hz > cfg.f_max_hz * (1 + tol)):
        bad.append("CPU frequency out of [0, f_max]")

    e_irs, e_wd = harvested_energy(alloc.tau1_s, alloc.tau2_s, alloc.w_cov,
                                   alloc.q_cov, alloc.profile_energy, channels)
    if not _surfaces_dark(alloc):
        draw = (cfg.block_s - alloc.tau1_s) * cfg.num_elements * cfg.mu_w
        for i, banked in enumerate(e_irs):
            if draw > banked * (1 + tol) + 1e-15:
                bad.append(f"surface {i} draw {draw:.3e} J > banked {banked:.3e} J")
    for k in range(len(e_wd)):
        if alloc.p_tx_w[k] == 0.0 and alloc.f_hz[k] == 0.0:
            continue
        spent = alloc.t1_s * (alloc.p_tx_w[k] + cfg.kappa_eff * alloc.f_hz[k] ** 2
                              + cfg.p_circuit_w)
        if spent > e_wd[k] * (1 + tol) + 1e-15:
            bad.append(f"device {k} spend {spent:.3e} J > harvested {e_wd[k]:.3e} J")
    return bad


def _rescale_wet(wet: WetSetting, tau2: float, cfg: SystemConfig) -> WetSetting:
    """The charging design is slot-length invariant; only energy rescales."""
    return WetSetting(tau2_s=float(tau2), q_cov=wet.q_cov,
                      profile_energy=wet.profile_energy, zeta=wet.zeta,
                      e_wd=tau2 * cfg.eta * np.maximum(wet.zeta, 0.0))


def solve_from_channels(channels: ChannelSet, config: SystemConfig,
                        irs_active: bool = True, f_cap_hz: float | None = None,
                        tau2_override: float | None = None):
    """Run the full pipeline on an explicit channel realisation."""
    cfg = config
    report = SolveReport()
    started = time.perf_counter()

    if irs_active:
        tau1, w_cov, rep = solve_p1(channels, cfg)
        report.merge(rep)
    else:
        tau1 = 0.0
        w_cov = np.zeros((cfg.dim_bm, cfg.dim_bm), dtype=complex)

    window = cfg.block_s - tau1
    if window <= 0:
        raise InfeasibleError("charging the surfaces consumes the whole block")
    if tau2_override is not None:
        if not 0.0 < tau2_override < window:
            raise InfeasibleError(
                f"requested tau2 {tau2_override} does not fit the {window:.6f} s window")
        points = [float(tau2_override)]
    else:
        grid = cfg.tau2_grid
        points = [window * j / (grid + 1) for j in range(1, grid + 1)]

    wet_base, rep = solve_p3(channels, cfg, tau2=points[0], irs_active=irs_active)
    report.merge(rep)

    best = None
    for tau2 in points:
        wet = _rescale_wet(wet_base, tau2, cfg)
        try:
            setting, rep = solve_p4(channels, wet, tau1, cfg, f_cap_hz=f_cap_hz,
                                    irs_active=irs_active)
        except (InfeasibleError, SubproblemError) as exc:
            report.skipped_grid_points.append((tau2, str(exc)))
            continue
        report.merge(rep)
        t1 = cfg.block_s - tau1 - tau2
        obj = float(t1 * float(np.sum(setting.rates_bps))
                    + float(np.sum(setting.f_hz)) * t1 / cfg.cycles_per_bit)
        report.grid_objectives.append((tau2, obj))
        if best is None or obj > best[0]:
            best = (obj, tau2, wet, setting)

    if best is None:
        detail = "; ".join(f"tau2={t:.4f}: {reason}"
                           for t, reason in report.skipped_grid_points)
        raise InfeasibleError(f"every tau2 grid point failed ({detail})")

    obj, tau2, wet, setting = best
    alloc = Allocation(
        tau1_s=float(tau1), tau2_s=float(tau2), t1_s=float(cfg.block_s - tau1 - tau2),
        w_cov=w_cov, q_cov=wet.q_cov, profile_energy=wet.profile_energy,
        profile_offload=setting.profile_offload, detectors=setting.detectors,
        p_tx_w=setting.p_tx_w, f_hz=setting.f_hz, objective_bits=obj,
        sum_rate_bps=float(np.sum(setting.rates_bps)))
    report.wall_s = time.perf_counter() - started
    return alloc, report


def solve_p0(scenario: Scenario, config: SystemConfig | None = None,
             seed: int | None = None):
    """Solve one full block on a fresh channel realisation."""
    cfg = scenario.config if config is None else config
    sd = scenario.seed if seed is None else int(seed)
    if cfg is not scenario.config or sd != scenario.seed:
        scenario = build_scenario(cfg, sd)
    channels = synth_channels(scenario)
    return solve_from_channels(channels, cfg)


def _shrink_to_budget(p_tx, f_hz, e_wd, t1, cfg):
    """Largest joint scale-down of (power, CPU speed) that fits each budget.

    Used when decisions priced under one channel estimate are carried to
    another realisation: the quadratic t1*(s*P + s^2*kappa*f^2 + P_c) <= E
    has a closed-form largest root.  A device whose budget cannot even
    cover the circuit draw is switched off entirely.
    """
    p_out = np.array(p_tx, dtype=float)
    f_out = np.array(f_hz, dtype=float)
    for k in range(len(p_out)):
        budget = e_wd[k] / t1
        need = p_out[k] + cfg.kappa_eff * f_out[k] ** 2 + cfg.p_circuit_w
        if need <= budget * (1 + 1e-12):
            continue
        a = cfg.kappa_eff * f_out[k] ** 2
        b = p_out[k]
        c = cfg.p_circuit_w - budget
        if c > 0:
            p_out[k] = 0.0
            f_out[k] = 0.0
            continue
        if a > 0:
            # rational root form: stable when the quadratic term is tiny
            s = -2.0 * c / (b + math.sqrt(b * b - 4 * a * c))
        elif b > 0:
            s = -c / b
        else:
            s = 0.0
        s = min(max(s, 0.0), 1.0)
        p_out[k] *= s
        f_out[k] *= s
    return p_out, f_out


def _reevaluate(alloc: Allocation, channels: ChannelSet, config: SystemConfig,
                tau1: float | None = None) -> Allocation:
    """Re-price fixed decisions on other channels (or amplitudes).

    The charging slot is re-derived from the closed form when requested,
    the device budgets recomputed, the power/CPU pair shrunk into them,
    and the rates re-evaluated.  Beams, detectors, phases, and the
    device-charging slot are kept as decided.
    """
    cfg = config
    if tau1 is None:
        tau1 = alloc.tau1_s
    tau2 = min(alloc.tau2_s, cfg.block_s - tau1)
    t1 = cfg.block_s - tau1 - tau2
    K = alloc.detectors.shape[0]
    if t1 <= 0:
        zero = np.zeros(K)
        return dataclasses.replace(alloc, tau1_s=tau1, tau2_s=tau2, t1_s=0.0,
                                   p_tx_w=zero, f_hz=zero.copy(),
                                   objective_bits=0.0, sum_rate_bps=0.0)
    _, e_wd = harvested_energy(tau1, tau2, alloc.w_cov, alloc.q_cov,
                               alloc.profile_energy, channels)
    p_tx, f_hz = _shrink_to_budget(alloc.p_tx_w, alloc.f_hz, e_wd, t1, cfg)
    h = effective_channels(channels, alloc.profile_offload.v)
    _, rates = sinr_and_rate(alloc.detectors, p_tx, h, cfg)
    obj = float(t1 * float(np.sum(rates)) + float(np.sum(f_hz)) * t1 / cfg.cycles_per_bit)
    return dataclasses.replace(alloc, tau1_s=tau1, tau2_s=tau2, t1_s=t1,
                               p_tx_w=p_tx, f_hz=f_hz, objective_bits=obj,
                               sum_rate_bps=float(np.sum(rates)))


def _with_practical_amplitudes(alloc: Allocation, config: SystemConfig) -> Allocation:
    """Swap ideal-model profiles for lossy ones at the same phases."""
    model = PhaseModel.from_config(config)
    pe = PhaseProfile(theta=alloc.profile_energy.theta,
                      v=reflect_coeff(alloc.profile_energy.theta, model))
    po = PhaseProfile(theta=alloc.profile_offload.theta,
                      v=reflect_coeff(alloc.profile_offload.theta, model))
    return dataclasses.replace(alloc, profile_energy=pe, profile_offload=po)


def run_scheme(scheme: str, channels: ChannelSet, config: SystemConfig,
               tau2_override: float | None = None):
    """One scheme on one channel realisation."""
    cfg = config
    if scheme == "proposed":
        return solve_from_channels(channels, cfg, tau2_override=tau2_override)
    if scheme == "upper_bound":
        return solve_from_channels(channels, cfg.replace(beta_min=1.0),
                                   tau2_override=tau2_override)
    if scheme == "ideal_applied":
        alloc, report = solve_from_channels(channels, cfg.replace(beta_min=1.0),
                                            tau2_override=tau2_override)
        alloc = _reevaluate(_with_practical_amplitudes(alloc, cfg), channels, cfg,
                            tau1=alloc.tau1_s)
        return alloc, report
    if scheme == "full_offloading":
        return solve_from_channels(channels, cfg, f_cap_hz=0.0,
                                   tau2_override=tau2_override)
    if scheme == "no_irs":
        return solve_from_channels(channels, cfg, irs_active=False,
                                   tau2_override=tau2_override)
    raise ValueError(f"unknown scheme {scheme!r}")


def run_baseline(kind: str, scenario: Scenario, config: SystemConfig | None = None,
                 seed: int | None = None):
    """One of the reference schemes on a fresh channel realisation."""
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline kind {kind!r}, expected one of {BASELINE_KINDS}")
    cfg = scenario.config if config is None else config
    sd = scenario.seed if seed is None else int(seed)
    if cfg is not scenario.config or sd != scenario.seed:
        scenario = build_scenario(cfg, sd)
    channels = synth_channels(scenario)
    return run_scheme(kind, channels, cfg)


@dataclass(frozen=True)
class SweepSpec:
    """A parameter sweep: which knob, which values, which seeds and schemes."""

    param: str
    values: tuple
    seeds: tuple
    schemes: tuple = ("proposed",)

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"unknown sweep parameter {self.param!r}, "
                             f"expected one of {SWEEP_PARAMS}")
        if not self.values:
            raise ValueError("sweep needs at least one value")
        if list(self.values) != sorted(self.values):
            raise ValueError("sweep values must be sorted ascending")
        if not self.seeds:
            raise ValueError("sweep needs at least one seed")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be nonnegative")
        for scheme in self.schemes:
            if scheme not in SCHEMES:
                raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
        if self.param in ("N", "K") and any(v != int(v) or v < 1 for v in self.values):
            raise ValueError(f"{self.param} values must be positive integers")
        if self.param == "delta" and any(v < 0 for v in self.values):
            raise ValueError("delta values must be nonnegative")


def parse_sweep_text(text: str) -> SweepSpec:
    """Parse the flat key=value sweep description."""
    fields = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key == "param":
            fields["param"] = raw
        elif key == "values":
            fields["values"] = tuple(float(tok) for tok in raw.split(",") if tok.strip())
        elif key == "seeds":
            fields["seeds"] = tuple(int(tok) for tok in raw.split(",") if tok.strip())
        elif key == "schemes":
            fields["schemes"] = tuple(tok.strip() for tok in raw.split(",") if tok.strip())
        else:
            raise ValueError(f"line {lineno}: unknown sweep key {key!r}")
    for required in ("param", "values", "seeds"):
        if required not in fields:
            raise ValueError(f"sweep spec is missing the {required!r} key")
    return SweepSpec(**fields)


def load_sweep(path: str) -> SweepSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_sweep_text(fh.read())


def _apply_param(cfg: SystemConfig, param: str, value: float) -> SystemConfig:
    if param == "N":
        return cfg.replace(num_elements=int(value))
    if param == "K":
        return cfg.replace(num_wds=int(value))
    if param == "L":
        return cfg.replace(cluster_x_m=float(value))
    if param == "P_max":
        return cfg.replace(p_max_w=float(value))
    if param == "kappa_HU":
        return cfg.replace(pl_exp_hu=float(value))
    if param == "beta_min":
        return cfg.replace(beta_min=float(value))
    return cfg    # delta and tau2 are handled by the row runner


def _sweep_row(task) -> list:
    """Worker for one (value, seed, scheme) cell; returns CSV fields."""
    base_cfg, param, value, seed, scheme = task
    started = time.perf_counter()
    cfg = _apply_param(base_cfg, param, value)
    try:
        scenario = build_scenario(cfg, seed)
        channels = synth_channels(scenario)
        tau2_override = value if param == "tau2" else None
        if param == "delta":
            estimate = perturb_csi(channels, value)
            alloc, report = run_scheme(scheme, estimate, cfg)
            tau1 = 0.0 if _surfaces_dark(alloc) else optimal_tau1(alloc.w_cov, channels)
            alloc = _reevaluate(alloc, channels, cfg, tau1=tau1)
        else:
            alloc, report = run_scheme(scheme, channels, cfg, tau2_override=tau2_override)
        status = "ok"
        row = [param, f"{value:.10g}", str(seed), scheme,
               f"{alloc.objective_bits:.6f}", f"{alloc.sum_rate_bps:.6f}",
               f"{alloc.tau1_s:.9f}", f"{alloc.tau2_s:.9f}", f"{alloc.t1_s:.9f}",
               str(report.inner_iters), str(report.outer_iters), status]
    except (InfeasibleError, SubproblemError, ValueError) as exc:
        status = f"failed: {str(exc).replace(',', ';')}"
        row = [param, f"{value:.10g}", str(seed), scheme,
               "0.000000", "0.000000", "0.000000000", "0.000000000", "0.000000000",
               "0", "0", status]
    row.append(f"{time.perf_counter() - started:.3f}")
    return row


def _worker_count() -> int:
    env = os.environ.get("WPMEC_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_sweep(spec: SweepSpec, base_config: SystemConfig, out_path: str) -> list:
    """Evaluate the sweep grid and write the CSV; returns the rows.

    Row order is the canonical value-major, seed-minor, scheme-innermost
    order regardless of which worker finishes first, and each row's
    randomness comes only from its own seed, so reruns are reproducible
    byte for byte (apart from the wallclock column).
    """
    tasks = [(base_config, spec.param, value, seed, scheme)
             for value in spec.values for seed in spec.seeds for scheme in spec.schemes]
    workers = min(_worker_count(), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, tasks))
    else:
        rows = [_sweep_row(task) for task in tasks]
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        writer.writerows(rows)
    return rows
