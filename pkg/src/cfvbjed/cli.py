"""Command-line entry point.

`cfvbjed run --config file.yaml` executes a user-defined sweep;
`cfvbjed figure --name <id>` reproduces a canned experiment setup.
Exit codes: 0 success, 2 configuration error, 3 when more than 10% of
trials fail numerically.
"""

import argparse
import json
import sys
from dataclasses import fields, replace

import yaml

from . import experiments
from .model import SystemConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_QUANT_METHODS = ("vb_qe:1", "vb_qe:2", "vb_qe:3", "vb_eq:1", "vb_eq:2", "vb_eq:3")

# Canned sweeps: (sweep_var, grid, methods, fixed config overrides).
FIGURES = {
    "ser-vs-snr": ("snr_db", [0, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20],
                   ("lmmse_pfl", "vb_pfl", "vb_dd_pfl") + _QUANT_METHODS, {}),
    "ser-vs-tp": ("pilot_len", [10, 16, 24, 32, 48, 64],
                  ("lmmse_pfl", "vb_pfl", "vb_qe:3", "vb_eq:3"),
                  {"snr_db": 10.0}),
    "ser-vs-td": ("data_len", [16, 48, 96, 128, 160, 192],
                  ("lmmse_pfl", "vb_pfl", "vb_qe:3", "vb_eq:3"),
                  {"snr_db": 10.0}),
    "ser-vs-k": ("num_users", [12, 16, 20, 24, 28, 32],
                 ("lmmse_pfl", "vb_pfl", "vb_qe:3", "vb_eq:3"),
                 {"snr_db": 10.0}),
    "ser-vs-l": ("num_aps", [4, 6, 8, 10],
                 ("lmmse_pfl", "vb_pfl", "vb_qe:3", "vb_eq:3"),
                 {"snr_db": 10.0}),
    "nmse-vs-snr": ("snr_db", [0, 4, 8, 12, 16, 20],
                    ("lmmse_pfl", "vb_pfl", "vb_ce_pfl") + _QUANT_METHODS, {}),
    "nmse-vs-tp": ("pilot_len", [10, 16, 24, 32, 48, 64],
                   ("lmmse_pfl", "vb_pfl", "vb_qe:3", "vb_eq:3"),
                   {"snr_db": 10.0}),
    "nmse-vs-td": ("data_len", [16, 48, 96, 128, 160, 192],
                   ("lmmse_pfl", "vb_pfl", "vb_qe:3", "vb_eq:3"),
                   {"snr_db": 10.0}),
}

_CFG_FIELDS = {f.name for f in fields(SystemConfig)}


class ConfigError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cfvbjed",
                                description="Cell-free massive MIMO joint "
                                            "channel estimation and detection "
                                            "simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a sweep from a config file")
    run.add_argument("--config", required=True, help="YAML or JSON config")
    _common(run)

    fig = sub.add_parser("figure", help="run a canned experiment setup")
    fig.add_argument("--name", required=True,
                     choices=sorted(FIGURES) + ["overhead"])
    _common(fig)
    return p


def _common(sp) -> None:
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--trials", type=int, default=None)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--out", default=None, help="output CSV (default stdout)")
    sp.add_argument("--iters", type=int, default=None,
                    help="override CAVI iteration cap")
    sp.add_argument("--nmse-avg", choices=("linear", "db"), default="linear")
    sp.add_argument("--timing", action="store_true",
                    help="record wall time (breaks byte-level determinism)")


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            if path.endswith(".json"):
                raw = json.load(fh)
            else:
                raw = yaml.safe_load(fh)
    except (OSError, ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    return raw


def _build_run(raw: dict, args):
    extra = set(raw) - _CFG_FIELDS - {"sweep_var", "grid", "methods",
                                      "trials", "output", "threads",
                                      "nmse_avg"}
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    for key in ("sweep_var", "grid", "methods"):
        if key not in raw:
            raise ConfigError(f"config missing required key {key!r}")
    cfg_kwargs = {k: raw[k] for k in _CFG_FIELDS & set(raw)}
    if "constellation" in cfg_kwargs:
        cfg_kwargs["constellation"] = [complex(v) for v in cfg_kwargs["constellation"]]
    try:
        cfg = SystemConfig(**cfg_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    trials = args.trials or raw.get("trials", 100)
    out = args.out or raw.get("output")
    nmse_avg = raw.get("nmse_avg", args.nmse_avg)
    return cfg, raw["sweep_var"], raw["grid"], list(raw["methods"]), trials, out, nmse_avg


def _overhead_rows(out_fh) -> None:
    """The overhead comparison is analytic; it gets its own small schema."""
    out_fh.write("scenario,bits,overhead_bits\n")
    out_fh.write("pfl,10,%d\n" % experiments.fronthaul_overhead_bits(
        "pfl", 4, 8, 16, 32, 128))
    for b in (1, 2, 3):
        out_fh.write("qe,%d,%d\n" % (b, experiments.fronthaul_overhead_bits(
            "qe", 4, 8, 16, 32, 128, bits=b)))
    for b in (1, 2, 3):
        out_fh.write("eq,%d,%d\n" % (b, experiments.fronthaul_overhead_bits(
            "eq", 4, 8, 16, 32, 128, bits=b)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "figure" and args.name == "overhead":
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    _overhead_rows(fh)
            else:
                _overhead_rows(sys.stdout)
            return EXIT_OK

        if args.command == "run":
            raw = load_config(args.config)
            cfg, var, grid, methods, trials, out, nmse_avg = _build_run(raw, args)
            threads = args.threads if args.threads != 1 else raw.get("threads", 1)
        else:
            var, grid, methods, overrides = FIGURES[args.name]
            cfg = SystemConfig(**overrides)
            methods = list(methods)
            trials = args.trials or 100
            out = args.out
            nmse_avg = args.nmse_avg
            threads = args.threads

        if args.seed is not None:
            cfg = replace(cfg, master_seed=args.seed)
        if args.iters is not None:
            cfg = replace(cfg, cavi_iters=args.iters)
        if trials < 1 or threads < 1:
            raise ConfigError("trials and threads must be >= 1")

        try:
            rows = experiments.run_sweep(cfg, var, grid, methods, trials,
                                         threads=threads, nmse_avg=nmse_avg)
        except ValueError as exc:
            raise ConfigError(str(exc))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            experiments.write_csv(rows, fh, timing=args.timing)
    else:
        experiments.write_csv(rows, sys.stdout, timing=args.timing)

    total = sum(r.trials for r in rows)
    failed = sum(r.failures for r in rows)
    if total and failed > 0.1 * total:
        print(f"error: {failed}/{total} trials failed numerically",
              file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
