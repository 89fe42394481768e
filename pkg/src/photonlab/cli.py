"""``photonlab`` command-line interface.

Exit codes: 0 success, 2 usage, 3 configuration, 4 I/O, 5 tag-file parse,
6 lineage mismatch, 7 unknown figure, 8 analysis failure.
"""
from __future__ import annotations

import argparse
import hashlib
import sys
import time
from pathlib import Path

from . import analysis, figures
from .config import ExperimentConfig
from .detection import run_experiment
from .errors import (
    ConfigError,
    LineageError,
    OutOfRangeError,
    InfeasibleError,
    PhotonLabError,
    UnknownFigureError,
)
from .timetags import RUN_KINDS, TagFormatError, read_tags, write_tags

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_PARSE = 5
EXIT_LINEAGE = 6
EXIT_FIGURE = 7
EXIT_ANALYSIS = 8

# most specific first
_EXIT_CODES = (
    (UnknownFigureError, EXIT_FIGURE),
    (TagFormatError, EXIT_PARSE),
    (LineageError, EXIT_LINEAGE),
    (ConfigError, EXIT_CONFIG),
    (OutOfRangeError, EXIT_CONFIG),
    (InfeasibleError, EXIT_CONFIG),
    (OSError, EXIT_IO),
    (PhotonLabError, EXIT_ANALYSIS),
)


def _load_config(arg: str | None) -> ExperimentConfig:
    if arg is None:
        return ExperimentConfig.builtin("calibrated")
    if not Path(arg).exists() and "/" not in arg and not arg.endswith(".json"):
        return ExperimentConfig.builtin(arg)
    return ExperimentConfig.load(arg)


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    kind = args.kind or cfg.run.kind
    trials = cfg.run.n_trials if args.trials is None else args.trials
    seed = cfg.run.master_seed if args.seed is None else args.seed
    if trials < 0:
        raise ConfigError("--trials must be non-negative")
    out = Path(args.out)
    fmt = args.format or ("csv" if out.suffix == ".csv" else "qtt")
    if fmt == "csv" and out.suffix != ".csv":
        raise ConfigError("--format csv requires an output path ending in .csv")
    if fmt == "qtt" and out.suffix == ".csv":
        raise ConfigError("--format qtt cannot write to a .csv path")
    t0 = time.perf_counter()
    ds = run_experiment(kind, trials, cfg, seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    nbytes = write_tags(ds, out)
    clicks = len(ds) - trials
    stored = analysis.window_counts(ds, cfg.windows.stored, max_lag=0).clicks if trials else 0
    digest = hashlib.sha256(out.read_bytes()).hexdigest()[:16]
    print(f"simulate kind={kind} trials={trials} seed={seed} clicks={clicks} stored_window_clicks={stored} "
          f"bytes={nbytes} sha256={digest} wall={time.perf_counter() - t0:.2f}s out={out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load_config(args.config)
    paths = {"input_only": args.input, "storage": args.storage, "noise_only": args.noise}
    runs = {k: read_tags(p) for k, p in paths.items()}
    figs = analysis.memory_figures(runs["input_only"], runs["storage"], runs["noise_only"], cfg.windows)
    payload = {
        "memory_figures": figs.as_dict(),
        "g2_input_window": analysis.g2_table(runs["input_only"], cfg.windows.input),
        "g2_stored_window": analysis.g2_table(runs["storage"], cfg.windows.stored),
    }
    inputs = {k: {"path": str(p), "sha256": analysis.file_sha256(p)} for k, p in paths.items()}
    text = analysis.result_document("memory_figures", payload, inputs)
    if args.out:
        Path(args.out).write_text(text + "\n")
        f = figs
        flag = " degenerate" if f.degenerate else ""
        print(f"analyze eta_wr={f.eta_wr.value:.4f}+-{f.eta_wr.error:.4f} snr={f.snr.value:.2f} "
              f"mu1={f.mu1.value:.3e} s_over_t={f.s_over_t.value:.4f}{flag} out={args.out}")
    else:
        print(text)
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _load_config(args.config)
    t0 = time.perf_counter()
    written = figures.reproduce(args.figure, args.out, cfg, args.seed)
    print(f"reproduce figure={args.figure} files={len(written)} wall={time.perf_counter() - t0:.2f}s "
          f"out={args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="photonlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one run and write a tag file")
    s.add_argument("--config", help="config JSON path or built-in name (default: calibrated)")
    s.add_argument("--kind", choices=sorted(RUN_KINDS))
    s.add_argument("--seed", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("qtt", "csv"))
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="memory figures and g2 from an input/storage/noise trio")
    a.add_argument("input")
    a.add_argument("storage")
    a.add_argument("noise")
    a.add_argument("--config", help="config providing the detection windows")
    a.add_argument("--out", help="JSON output path (default: print JSON)")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("reproduce", help="write the CSV bundle of one figure")
    r.add_argument("--figure", type=int, required=True, help="one of 2, 3, 4, 5, 6")
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    try:
        return args.func(args)
    except tuple(cls for cls, _ in _EXIT_CODES) as exc:
        code = next(c for cls, c in _EXIT_CODES if isinstance(exc, cls))
        print(f"photonlab: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
