"""End-to-end pipelines behind ``photonlab reproduce``: one CSV bundle per figure."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .config import MHZ, NS, US, ExperimentConfig
from .detection import run_experiment
from .errors import UnknownFigureError
from .raman import (
    apply_storage_decay,
    read_power_outputs,
    shape_readout,
    simulate_storage,
    storage_factor,
    sweep_detuning,
    sweep_write_power,
)
from .seeding import derive_rng
from .source import WaveshapeParams, calibrate_source, input_intensity

FIGURES = (2, 3, 4, 5, 6)
RUN_ORDER = ("input_only", "storage", "noise_only")


def _grid(opts: dict, geometric: bool = False) -> np.ndarray:
    f = np.geomspace if geometric else np.linspace
    return f(opts["start"], opts["stop"], int(opts["num"]))


def _write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def run_seeds(master_seed: int) -> dict:
    """Independent master seeds for the three runs of one experiment."""
    return {kind: int(derive_rng(master_seed, 1000 + i).integers(2**62)) for i, kind in enumerate(RUN_ORDER)}


def run_trio(cfg: ExperimentConfig, n_trials: int, master_seed: int, outcome=None) -> dict:
    outcome = outcome or simulate_storage(cfg.source.envelope, cfg.protocol, cfg.memory)
    seeds = run_seeds(master_seed)
    return {kind: run_experiment(kind, n_trials, cfg, seeds[kind], outcome=outcome) for kind in RUN_ORDER}


def figure2(cfg: ExperimentConfig, out: Path, seed: int) -> list:
    probes = _grid(cfg.document["figures"]["2"]["probe_settings"])
    rows = []
    for x in probes:
        op = calibrate_source(float(x), cfg.source)
        rows.append((float(x), op.p_gen, op.g2_0, int(op.g2_defined)))
    return [_write_rows(out / "fig2_source_calibration.csv", ("probe_setting", "p_gen", "g2_0", "g2_defined"), rows)]


def figure3(cfg: ExperimentConfig, out: Path, seed: int) -> list:
    opts = cfg.document["figures"]["3"]
    outcome = simulate_storage(cfg.source.envelope, cfg.protocol, cfg.memory)
    runs = run_trio(cfg, int(opts["n_trials"]), seed, outcome)
    paths = []
    bin_ps = int(round(opts.get("bin_ns", 10.0) * 1000))
    for kind, ds in runs.items():
        edges, counts = analysis.histogram(ds, bin_ps)
        p = out / f"fig3_histogram_{kind}.csv"
        analysis.write_histogram_csv(p, edges, counts)
        paths.append(p)
    figs = analysis.memory_figures(runs["input_only"], runs["storage"], runs["noise_only"], cfg.windows)

    # lifetime: eta_wr(t) from the solver, counted with the calibrated detection budget
    times = np.asarray(opts["storage_times_us"], float) * US
    eta0 = outcome.eta_wr / float(storage_factor(cfg.protocol.storage_time, cfg.memory))
    eta = eta0 * storage_factor(times, cfg.memory)
    op = cfg.source.operating_point()
    capture = analysis.window_capture(cfg.source.envelope, cfg.windows.input)
    per_trial = op.p_gen * cfg.detection.overall_efficiency * capture
    n = float(opts["trials_per_point"])
    rng = derive_rng(seed, 3)
    counts = rng.poisson(n * per_trial * eta)
    measured = counts / (n * per_trial)
    err = np.sqrt(np.maximum(counts, 1)) / (n * per_trial)
    fit = analysis.fit_lifetime(times, measured, sigma=err)
    model = fit.eta0.value * np.exp(-(times / fit.tau.value) ** 2) if math.isfinite(fit.tau.value) else \
        np.full_like(times, fit.eta0.value)
    paths.append(_write_rows(out / "fig3_lifetime.csv", ("t_store_us", "eta_wr", "error", "model"),
                             zip(times / US, measured, err, model)))
    doc = {
        "memory_figures": figs.as_dict(),
        "lifetime_fit": {
            "tau_us": {"value": fit.tau.value / US, "error": fit.tau.error / US},
            "eta0": fit.eta0.as_dict(),
            "A": fit.A.as_dict(),
            "omega_rad_per_s": fit.omega.as_dict(),
            "oscillation": fit.oscillation,
            "unbounded": fit.unbounded,
        },
        "solver": {"eta_wr": outcome.eta_wr, "transmission": outcome.transmission, "eta_w_spin": outcome.eta_w_spin},
    }
    p = out / "fig3_summary.json"
    p.write_text(json.dumps(doc, indent=2, sort_keys=True, default=analysis._default))
    paths.append(p)
    return paths


def figure4(cfg: ExperimentConfig, out: Path, seed: int) -> list:
    opts = cfg.document["figures"]["4"]
    d2 = _grid(opts["delta2_mhz"])
    sigma = opts.get("input_sigma_ns", 50.0) * NS
    t0 = cfg.source.envelope.peak_time

    def envelope(t):
        return np.exp(-0.25 * ((t - t0) / sigma) ** 2)

    eta = sweep_detuning(d2 * MHZ, cfg.memory, cfg.protocol, envelope)
    rows = zip(d2, eta, eta / eta.max())
    return [_write_rows(out / "fig4_spectrum.csv", ("delta2_mhz", "eta_wr", "eta_wr_normalized"), rows)]


def figure5(cfg: ExperimentConfig, out: Path, seed: int) -> list:
    rel = _grid(cfg.document["figures"]["5"]["power_scale"], geometric=True)
    base = cfg.protocol.write.power_scale
    sweep = sweep_write_power(rel * base, cfg.memory, cfg.source.envelope, cfg.protocol)
    sweep.parameter = rel
    p = out / "fig5_write_power.csv"
    sweep.to_csv(p, parameter_name="power")
    return [p]


def read_power_profiles(cfg: ExperimentConfig):
    """Retrieved intensity profiles over the figure-6 read-power grid."""
    opts = cfg.document["figures"]["6"]
    powers = _grid(opts["read_power"], geometric=True)
    span = opts.get("read_span_us", 5.0) * US
    outcome = simulate_storage(cfg.source.envelope, cfg.protocol, cfg.memory)
    S = apply_storage_decay(outcome.spin_wave, cfg.protocol.storage_time, cfg.memory)
    t = cfg.memory.dt * np.arange(int(round(span / cfg.memory.dt)) + 1)
    read = replace(cfg.protocol.read, duration=span)
    return powers, t, read_power_outputs(S, cfg.memory, read, powers, t), S


def figure6(cfg: ExperimentConfig, out: Path, seed: int) -> list:
    opts = cfg.document["figures"]["6"]
    powers, t, profiles, S = read_power_profiles(cfg)
    stored = float(np.trapezoid(np.abs(S) ** 2, np.linspace(0, 1, S.size)))
    rows = []
    for k, pw in enumerate(powers):
        y = profiles[:, k]
        fw = analysis.fwhm_of_profile(t, y)
        rows.append((pw, fw / NS, np.trapezoid(y, t) / stored))
    paths = [_write_rows(out / "fig6_read_power.csv", ("power", "fwhm_ns", "eta_r"), rows)]

    span = opts.get("shaping_span_us", 1.0) * US
    ts = cfg.memory.dt * np.arange(int(round(span / cfg.memory.dt)) + 1)
    env = cfg.source.envelope
    shifted = WaveshapeParams(env.rise_sigma, env.decay_tau, env.fwhm, opts.get("shaped_peak_ns", 300.0) * NS)
    width = opts.get("time_bin_width_ns", 60.0) * NS
    bins = np.zeros_like(ts)
    for c in opts.get("time_bins_ns", [250.0, 510.0]):
        bins[np.abs(ts - c * NS) <= width / 2] = 1.0
    targets = {"input_waveshape": input_intensity(shifted, ts), "time_bin": bins}
    cols, summary = [ts / NS], {}
    for name, target in targets.items():
        res = shape_readout(target, cfg.memory, S, ts)
        cols += [target / np.trapezoid(target, ts) * NS, res.achieved / np.trapezoid(res.achieved, ts) * NS,
                 res.pulse.rabi(ts) / MHZ]
        summary[name] = {"mismatch": res.mismatch, "iterations": res.iterations, "eta_r": res.eta_r}
    header = ["t_ns"]
    for name in targets:
        header += [f"{name}_target", f"{name}_achieved", f"{name}_rabi_mhz"]
    paths.append(_write_rows(out / "fig6_shaped_readout.csv", header, zip(*cols)))
    p = out / "fig6_shaping.json"
    p.write_text(json.dumps(summary, indent=2, sort_keys=True))
    paths.append(p)
    return paths


_PIPELINES = {2: figure2, 3: figure3, 4: figure4, 5: figure5, 6: figure6}


def reproduce(figure: int, out_dir, cfg: ExperimentConfig | None = None, seed: int | None = None) -> list:
    """Run the pipeline of one figure and return the written paths."""
    if figure not in _PIPELINES:
        raise UnknownFigureError(f"unknown figure {figure!r}; choose one of {list(FIGURES)}")
    cfg = cfg or ExperimentConfig.builtin("calibrated")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return _PIPELINES[figure](cfg, out, cfg.run.master_seed if seed is None else seed)
