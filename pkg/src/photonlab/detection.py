"""Monte-Carlo model of the path from source output to detector clicks.

Per trial: draw the emitted photon number, send each photon through the
memory (transmitted / stored and retrieved / lost), thin by the end-to-end
detection efficiency, add Poissonian control-leakage noise in the stored
window and detector dark counts over the whole trial, split at the HBT
beam splitter and stamp arrival times by inverse-CDF sampling of the
relevant intensity profile.

Trials are processed in fixed-size blocks, each with its own RNG derived
from ``(master_seed, block_index)``, so the output does not depend on the
number of worker threads.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ConfigError
from .raman import StorageOutcome, simulate_storage
from .seeding import derive_rng
from .source import EmissionDistribution, emission_distribution, input_intensity, sample_trials
from .timetags import D1, D2, RECORD_DTYPE, RUN_KINDS, TRIGGER, TimeTagDataset

if TYPE_CHECKING:
    from .config import ExperimentConfig

REFERENCE_STAGES = (
    ("fiber_after_source", 0.40),
    ("aom_shifter", 0.62),
    ("fiber_after_memory", 0.83),
    ("filter_cavity", 0.65),
    ("misc_optics", 0.75),
)
BLOCK_TRIALS = 1 << 16
PS = 1e12


@dataclass(frozen=True)
class TransmissionConfig:
    stages: tuple = REFERENCE_STAGES
    source_to_memory: float = 0.22
    detector_efficiency: float = 0.85
    dark_rate: float = 3.0
    filter_suppression_db: float = 43.4
    # end-to-end detection efficiency; replaces chain * detector when set
    efficiency_override: float | None = None

    def __post_init__(self):
        for name, tr in self.stages:
            if not 0 < tr <= 1:
                raise ConfigError(f"stage {name!r} transmission {tr} outside (0, 1]")
        for name in ("source_to_memory", "detector_efficiency"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name} {v} outside (0, 1]")
        if self.dark_rate < 0:
            raise ConfigError("dark rate must be non-negative")
        if self.efficiency_override is not None and not 0 <= self.efficiency_override <= 1:
            raise ConfigError("efficiency_override outside [0, 1]")

    @property
    def overall_efficiency(self) -> float:
        if self.efficiency_override is not None:
            return self.efficiency_override
        return chain_transmission(self) * self.detector_efficiency

    @property
    def filter_leakage(self) -> float:
        return 10 ** (-self.filter_suppression_db / 10)


@dataclass(frozen=True)
class WindowConfig:
    input_start: float = 240e-9
    input_width: float = 300e-9
    stored_start: float = 1.6e-6
    stored_width: float = 100e-9
    trial_period: float = 4e-6

    def __post_init__(self):
        if min(self.input_width, self.stored_width, self.trial_period) <= 0:
            raise ConfigError("window widths and trial period must be positive")
        for name, (a, b) in self.windows().items():
            if a < 0 or b > self.trial_period:
                raise ConfigError(f"{name} window [{a:g}, {b:g}) s exceeds the trial period {self.trial_period:g} s")
        (a0, a1), (b0, b1) = self.windows().values()
        if a0 < b1 and b0 < a1:
            raise ConfigError("input and stored windows overlap")

    def windows(self) -> dict:
        return {
            "input": (self.input_start, self.input_start + self.input_width),
            "stored": (self.stored_start, self.stored_start + self.stored_width),
        }

    @property
    def input(self) -> tuple:
        return self.windows()["input"]

    @property
    def stored(self) -> tuple:
        return self.windows()["stored"]


@dataclass(frozen=True)
class NoiseConfig:
    p_noise_per_trial: float = 2.3e-4
    profile: str = "uniform"

    def __post_init__(self):
        if not 0 <= self.p_noise_per_trial <= 1:
            raise ConfigError("p_noise_per_trial outside [0, 1]")
        if self.profile != "uniform":
            raise ConfigError(f"unsupported noise profile {self.profile!r}")


def chain_transmission(cfg: TransmissionConfig) -> float:
    return math.prod(tr for _, tr in cfg.stages)


def thin_photons(count, p: float, rng: np.random.Generator):
    """Keep each of ``count`` photons independently with probability ``p``."""
    if not 0 <= p <= 1:
        raise ValueError(f"probability {p} outside [0, 1]")
    out = rng.binomial(count, p)
    return int(out) if np.ndim(out) == 0 else out


def hbt_split(count, rng: np.random.Generator):
    """Route each photon to D1 or D2 with probability 1/2."""
    if np.any(np.asarray(count) < 0):
        raise ValueError("photon count must be non-negative")
    d1 = rng.binomial(count, 0.5)
    d2 = np.asarray(count) - d1
    if np.ndim(d1) == 0:
        return int(d1), int(d2)
    return d1, d2


class _Sampler:
    """Inverse-CDF sampler for an intensity profile on a time grid."""

    def __init__(self, t, intensity):
        t = np.asarray(t, float)
        y = np.clip(np.asarray(intensity, float), 0, None)
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))))
        if cum[-1] <= 0:
            raise ValueError("cannot sample an all-zero profile")
        self.t = t
        self.cdf = cum / cum[-1]

    def __call__(self, u):
        return np.interp(u, self.cdf, self.t)


@dataclass
class RunPlan:
    """Everything the per-block sampler needs, computed once per run."""

    kind: str
    dist: EmissionDistribution
    p_transmit: float
    p_store: float
    efficiency: float
    p_noise: float
    dark_per_trial: float
    trial_period: float
    stored_window: tuple
    transmit_sampler: _Sampler | None
    store_sampler: _Sampler | None


def plan_run(kind: str, cfg: "ExperimentConfig", outcome: StorageOutcome | None = None) -> RunPlan:
    if kind not in RUN_KINDS:
        raise ConfigError(f"unknown run kind {kind!r}")
    op = cfg.source.operating_point()
    if kind == "noise_only" or op.p_gen == 0:
        dist = EmissionDistribution(1.0, 0.0, 0.0)
    else:
        dist = emission_distribution(op.p_gen, op.g2_0)
    period = cfg.windows.trial_period
    env = cfg.source.envelope
    transmit = store = None
    p_t, p_s = 1.0, 0.0
    if kind == "storage":
        outcome = outcome or simulate_storage(env, cfg.protocol, cfg.memory)
        p_t, p_s = outcome.transmission, outcome.eta_wr
        transmit = _Sampler(outcome.t_write, outcome.trans_intensity)
        store = _Sampler(outcome.t_read, outcome.out_intensity)
        if outcome.t_read[-1] > period:
            raise ConfigError("retrieval extends beyond the trial period")
    elif kind == "input_only":
        lo = max(0.0, env.peak_time - 10 * env.rise_sigma)
        hi = min(period, env.peak_time + 25 * env.decay_tau)
        t = np.linspace(lo, hi, 20001)
        transmit = _Sampler(t, input_intensity(env, t))
    return RunPlan(
        kind=kind,
        dist=dist,
        p_transmit=p_t,
        p_store=p_s,
        efficiency=cfg.detection.overall_efficiency,
        p_noise=cfg.noise.p_noise_per_trial,
        dark_per_trial=cfg.detection.dark_rate * period,
        trial_period=period,
        stored_window=cfg.windows.stored,
        transmit_sampler=transmit,
        store_sampler=store,
    )


def _simulate_block(plan: RunPlan, master_seed: int, block: int, first: int, n: int) -> np.ndarray:
    rng = derive_rng(master_seed, block)
    trial_ids = np.arange(first, first + n, dtype=np.int64)

    counts = sample_trials(plan.dist, rng, n)
    ph_trial = np.repeat(trial_ids, counts)
    u_fate = rng.random(ph_trial.size)
    stored = (u_fate >= plan.p_transmit) & (u_fate < plan.p_transmit + plan.p_store)
    transmitted = u_fate < plan.p_transmit
    detected = rng.random(ph_trial.size) < plan.efficiency
    keep_t = transmitted & detected
    keep_s = stored & detected
    u_time = rng.random(ph_trial.size)
    times = np.zeros(ph_trial.size)
    if plan.transmit_sampler is not None and keep_t.any():
        times[keep_t] = plan.transmit_sampler(u_time[keep_t])
    if plan.store_sampler is not None and keep_s.any():
        times[keep_s] = plan.store_sampler(u_time[keep_s])
    keep = keep_t | keep_s
    ph_trial, times = ph_trial[keep], times[keep]

    n_noise = rng.poisson(plan.p_noise, n)
    nz_trial = np.repeat(trial_ids, n_noise)
    w0, w1 = plan.stored_window
    nz_times = w0 + (w1 - w0) * rng.random(nz_trial.size)

    light_trial = np.concatenate([ph_trial, nz_trial])
    light_times = np.concatenate([times, nz_times])
    light_ch = np.where(rng.random(light_trial.size) < 0.5, D1, D2).astype(np.uint8)

    dark = rng.poisson(plan.dark_per_trial, (2, n))
    dk_trial = np.concatenate([np.repeat(trial_ids, dark[0]), np.repeat(trial_ids, dark[1])])
    dk_ch = np.concatenate([np.full(dark[0].sum(), D1), np.full(dark[1].sum(), D2)]).astype(np.uint8)
    dk_times = plan.trial_period * rng.random(dk_trial.size)

    period_ps = int(round(plan.trial_period * PS))
    click_trial = np.concatenate([light_trial, dk_trial])
    click_off = np.floor(np.concatenate([light_times, dk_times]) * PS).astype(np.int64)
    click_off = np.clip(click_off, 0, period_ps - 1)
    click_ch = np.concatenate([light_ch, dk_ch])

    ts = np.concatenate([trial_ids * period_ps, click_trial * period_ps + click_off])
    trials = np.concatenate([trial_ids, click_trial])
    ch = np.concatenate([np.full(n, TRIGGER, dtype=np.uint8), click_ch])
    order = np.lexsort((ch, ts))
    rec = np.zeros(ts.size, dtype=RECORD_DTYPE)
    rec["timestamp_ps"] = ts[order]
    rec["trial_index"] = trials[order]
    rec["channel"] = ch[order]
    return rec


def _thread_count() -> int:
    env = os.environ.get("PHOTONLAB_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cap))
        except ValueError:
            raise ConfigError(f"PHOTONLAB_THREADS={env!r} is not an integer") from None
    return min(4, cap)


def run_experiment(kind: str, n_trials: int, cfg: "ExperimentConfig", master_seed: int,
                   outcome: StorageOutcome | None = None) -> TimeTagDataset:
    """Simulate ``n_trials`` trials of one run kind and return the time tags."""
    if n_trials < 0:
        raise ConfigError("n_trials must be non-negative")
    cfg.validate()
    plan = plan_run(kind, cfg, outcome)
    blocks = [(b, b * BLOCK_TRIALS, min(BLOCK_TRIALS, n_trials - b * BLOCK_TRIALS))
              for b in range(math.ceil(n_trials / BLOCK_TRIALS))]
    workers = _thread_count()
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _simulate_block(plan, master_seed, *a), blocks))
    else:
        parts = [_simulate_block(plan, master_seed, *a) for a in blocks]
    records = np.concatenate(parts) if parts else np.zeros(0, dtype=RECORD_DTYPE)
    return TimeTagDataset(
        records=records,
        kind=kind,
        n_trials=n_trials,
        trial_period_ps=int(round(cfg.windows.trial_period * PS)),
        config_hash=cfg.config_hash(),
        metadata={
            "detectors": "idealized: no dead time, jitter or afterpulsing",
            "p_transmit": plan.p_transmit,
            "p_store": plan.p_store,
            "efficiency": plan.efficiency,
            "master_seed": master_seed,
        },
    )
