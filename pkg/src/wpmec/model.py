"""Network geometry, channel synthesis, and the shared result types.

Conventions used across the package:

* Transmit-side vectors are stacked over HAPs: a device's composite
  channel lives in C^{B*M}, ordered HAP 0 antennas, HAP 1 antennas, ...
* Reflection-side vectors are stacked over surfaces: C^{I*N}.
* ``reflect_matrix[:, i*N+n]`` couples element n of surface i into the
  stacked transmit space, so a composite downlink channel is

      h_k(v) = h_direct[k] + reflect_matrix @ (v * h_surface[k]),

  with ``v`` the stacked reflection coefficients.

Randomness is reproducible: every stochastic ingredient (device drop,
each link's small-scale fading, channel-estimate noise, optimizer
initialisation) draws from its own named substream of one master seed,
so changing e.g. a path loss exponent never reshuffles the fading.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig

# named substreams of the master seed
_STREAMS = {
    "wd_drop": 0,
    "fading_hu": 1,
    "fading_hi": 2,
    "fading_iu": 3,
    "csi_noise": 4,
    "init_energy_phase": 5,
    "init_offload_phase": 6,
}


def substream(master_seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named role under a master seed."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), _STREAMS[name]]))


def path_loss(distance_m, exponent: float, config: SystemConfig):
    """Distance-dependent power attenuation c0 * (d/d0)^-exponent."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("path_loss needs a strictly positive distance")
    return config.c0 * (d / config.d0_m) ** (-exponent)


@dataclass(frozen=True)
class Scenario:
    """Placed network: HAP/IRS anchors and one random device drop."""

    config: SystemConfig
    hap_pos: np.ndarray    # (B, 3)
    irs_pos: np.ndarray    # (I, 3)
    wd_pos: np.ndarray     # (K, 3)
    seed: int

    def __post_init__(self):
        for arr in (self.hap_pos, self.irs_pos, self.wd_pos):
            arr.setflags(write=False)


def build_scenario(config: SystemConfig, seed: int, cluster_x_m: float | None = None) -> Scenario:
    """Drop devices uniformly in a disc and anchor the fixed infrastructure.

    HAP b sits at (4b, -5, 3); surface i at (6 + 4i, 1, 2), which
    reproduces the reference deployment (6 m and 10 m) for two surfaces.
    Devices land uniformly in a horizontal disc of the configured radius
    centred at (cluster_x, 0, 1).
    """
    L = config.cluster_x_m if cluster_x_m is None else float(cluster_x_m)
    hap_pos = np.array([[4.0 * b, -5.0, 3.0] for b in range(config.num_haps)])
    irs_pos = np.array([[6.0 + 4.0 * i, 1.0, 2.0] for i in range(config.num_irs)])
    rng = substream(seed, "wd_drop")
    radii = config.cluster_radius_m * np.sqrt(rng.uniform(size=config.num_wds))
    angles = rng.uniform(0.0, 2.0 * np.pi, size=config.num_wds)
    wd_pos = np.stack(
        [L + radii * np.cos(angles), radii * np.sin(angles), np.ones(config.num_wds)],
        axis=1,
    )
    return Scenario(config=config, hap_pos=hap_pos, irs_pos=irs_pos, wd_pos=wd_pos, seed=seed)


@dataclass(frozen=True)
class ChannelSet:
    """One realisation of every link, in stacked coordinates."""

    config: SystemConfig
    h_direct: np.ndarray        # (K, B*M) HAP->WD
    reflect_matrix: np.ndarray  # (B*M, I*N) HAP->IRS coupling, surfaces side by side
    h_surface: np.ndarray       # (K, I*N) IRS->WD
    surface_gram: np.ndarray    # (I, B*M, B*M) G_i G_i^H per surface
    seed: int

    def __post_init__(self):
        for arr in (self.h_direct, self.reflect_matrix, self.h_surface, self.surface_gram):
            arr.setflags(write=False)

    @property
    def num_wds(self) -> int:
        return self.h_direct.shape[0]


def _steering(count: int, cos_dir: float) -> np.ndarray:
    """Half-wavelength ULA response along the x axis."""
    return np.exp(1j * np.pi * np.arange(count) * cos_dir)


def _cos_x(src: np.ndarray, dst: np.ndarray) -> float:
    diff = dst - src
    return diff[0] / np.linalg.norm(diff)


def _rician_mix(los: np.ndarray, nlos: np.ndarray, factor: float) -> np.ndarray:
    if np.isinf(factor):
        return los
    w_los = np.sqrt(factor / (1.0 + factor))
    w_nlos = np.sqrt(1.0 / (1.0 + factor))
    return w_los * los + w_nlos * nlos


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard circularly-symmetric complex normal samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def synth_channels(scenario: Scenario) -> ChannelSet:
    """Draw all small-scale fading and apply geometry-derived path loss.

    Every link class mixes a deterministic steering-vector line-of-sight
    term with Rayleigh scatter according to its Rician factor; the HAP-WD
    default factor of zero makes those links pure scatter while both
    IRS-related links default to pure line of sight.
    """
    cfg = scenario.config
    B, M, I, N, K = cfg.num_haps, cfg.num_antennas, cfg.num_irs, cfg.num_elements, cfg.num_wds
    seed = scenario.seed

    fade_hu = _cn(substream(seed, "fading_hu"), (K, B, M))
    fade_hi = _cn(substream(seed, "fading_hi"), (I, B, M, N))
    fade_iu = _cn(substream(seed, "fading_iu"), (K, I, N))

    h_direct = np.zeros((K, B * M), dtype=complex)
    for k in range(K):
        for b in range(B):
            d = np.linalg.norm(scenario.wd_pos[k] - scenario.hap_pos[b])
            gain = np.sqrt(path_loss(d, cfg.pl_exp_hu, cfg))
            los = _steering(M, _cos_x(scenario.hap_pos[b], scenario.wd_pos[k]))
            h_direct[k, b * M:(b + 1) * M] = gain * _rician_mix(los, fade_hu[k, b], cfg.rician_hu)

    reflect_matrix = np.zeros((B * M, I * N), dtype=complex)
    for i in range(I):
        for b in range(B):
            d = np.linalg.norm(scenario.irs_pos[i] - scenario.hap_pos[b])
            gain = np.sqrt(path_loss(d, cfg.pl_exp_hi, cfg))
            a_h = _steering(M, _cos_x(scenario.hap_pos[b], scenario.irs_pos[i]))
            a_s = _steering(N, _cos_x(scenario.irs_pos[i], scenario.hap_pos[b]))
            los = np.outer(a_h, a_s.conj())
            block = gain * _rician_mix(los, fade_hi[i, b], cfg.rician_hi)
            reflect_matrix[b * M:(b + 1) * M, i * N:(i + 1) * N] = block

    h_surface = np.zeros((K, I * N), dtype=complex)
    for k in range(K):
        for i in range(I):
            d = np.linalg.norm(scenario.wd_pos[k] - scenario.irs_pos[i])
            gain = np.sqrt(path_loss(d, cfg.pl_exp_iu, cfg))
            los = _steering(N, _cos_x(scenario.irs_pos[i], scenario.wd_pos[k]))
            h_surface[k, i * N:(i + 1) * N] = gain * _rician_mix(los, fade_iu[k, i], cfg.rician_iu)

    surface_gram = np.zeros((I, B * M, B * M), dtype=complex)
    for i in range(I):
        Gi = reflect_matrix[:, i * N:(i + 1) * N]
        surface_gram[i] = Gi @ Gi.conj().T

    return ChannelSet(config=cfg, h_direct=h_direct, reflect_matrix=reflect_matrix,
                      h_surface=h_surface, surface_gram=surface_gram, seed=seed)


def effective_channels(channels: ChannelSet, v: np.ndarray) -> np.ndarray:
    """Composite downlink channels (K, B*M) under reflection coefficients v."""
    v = np.asarray(v)
    if v.shape != (channels.h_surface.shape[1],):
        raise ValueError(f"expected reflection vector of shape ({channels.h_surface.shape[1]},)")
    return channels.h_direct + (channels.reflect_matrix @ (v[None, :] * channels.h_surface).T).T


def perturb_csi(channels: ChannelSet, delta: float) -> ChannelSet:
    """Corrupt every coefficient with CN(0, delta*|h|^2) estimation noise.

    The noise draw is a deterministic function of the channel seed, so
    perturbing twice with the same delta gives the same estimate.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    if delta == 0.0:
        return channels
    rng = substream(channels.seed, "csi_noise")
    scale = np.sqrt(delta)

    def noisy(arr: np.ndarray) -> np.ndarray:
        return arr + scale * np.abs(arr) * _cn(rng, arr.shape)

    h_direct = noisy(channels.h_direct)
    reflect = noisy(channels.reflect_matrix)
    h_surface = noisy(channels.h_surface)
    cfg = channels.config
    N = cfg.num_elements
    gram = np.zeros_like(channels.surface_gram)
    for i in range(cfg.num_irs):
        Gi = reflect[:, i * N:(i + 1) * N]
        gram[i] = Gi @ Gi.conj().T
    return ChannelSet(config=cfg, h_direct=h_direct, reflect_matrix=reflect,
                      h_surface=h_surface, surface_gram=gram, seed=channels.seed)


@dataclass(frozen=True)
class PhaseProfile:
    """Per-element phase settings plus the reflection coefficients they induce."""

    theta: np.ndarray  # (I*N,) radians
    v: np.ndarray      # (I*N,) complex coefficients actually applied

    def __post_init__(self):
        self.theta.setflags(write=False)
        self.v.setflags(write=False)


@dataclass(frozen=True)
class Allocation:
    """A complete feasible operating point for one block."""

    tau1_s: float            # infrastructure charging slot
    tau2_s: float            # device charging slot
    t1_s: float              # compute-and-offload slot
    w_cov: np.ndarray        # (BM, BM) charging-stage transmit covariance
    q_cov: np.ndarray        # (BM, BM) device-charging transmit covariance
    profile_energy: PhaseProfile
    profile_offload: PhaseProfile
    detectors: np.ndarray    # (K, BM) receive combiners
    p_tx_w: np.ndarray       # (K,) device transmit powers
    f_hz: np.ndarray         # (K,) device CPU frequencies
    objective_bits: float
    sum_rate_bps: float

    def __post_init__(self):
        for arr in (self.w_cov, self.q_cov, self.detectors, self.p_tx_w, self.f_hz):
            arr.setflags(write=False)


@dataclass
class SolveReport:
    """Iteration diagnostics collected while producing an Allocation."""

    inner_trace: list = field(default_factory=list)    # (stage, outer_round, [objective...])
    outer_trace: list = field(default_factory=list)    # (stage, penalty_weight, residual)
    subsolver_statuses: list = field(default_factory=list)
    skipped_grid_points: list = field(default_factory=list)  # (tau2, reason)
    grid_objectives: list = field(default_factory=list)      # (tau2, objective_bits)
    inner_iters: int = 0
    outer_iters: int = 0
    wall_s: float = 0.0

    def merge(self, other: "SolveReport") -> None:
        self.inner_trace.extend(other.inner_trace)
        self.outer_trace.extend(other.outer_trace)
        self.subsolver_statuses.extend(other.subsolver_statuses)
        self.inner_iters += other.inner_iters
        self.outer_iters += other.outer_iters
