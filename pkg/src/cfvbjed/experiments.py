"""Monte-Carlo harness: trials, sweeps, metrics, fronthaul overhead
accounting, and CSV output.

Common random numbers: every trial realization depends only on
(master_seed, trial_index), never on the method, so all methods at one
sweep point consume identical channels, symbols, and noise.
"""

import concurrent.futures
import csv
import time
from dataclasses import dataclass, replace

import numpy as np

from . import baselines, vb
from .model import SystemConfig, make_block

METHOD_NAMES = ("vb_pfl", "vb_qe", "vb_eq", "lmmse_pfl", "vb_dd_pfl", "vb_ce_pfl")
SWEEP_VARS = ("snr_db", "pilot_len", "data_len", "num_users", "num_aps")
_INT_VARS = {"pilot_len", "data_len", "num_users", "num_aps"}

CSV_COLUMNS = [
    "sweep_var", "sweep_value", "method", "bits", "trials",
    "ser_mean", "ser_ci_lo", "ser_ci_hi",
    "nmse_db_mean", "nmse_ci_lo", "nmse_ci_hi",
    "failures", "wall_time_s",
]

NMSE_DB_FLOOR = -300.0


@dataclass
class TrialResult:
    method: str
    trial_index: int
    symbol_errors: int
    symbols_total: int
    nmse_linear: float
    wall_time: float
    failed: bool = False
    error: str = ""

    @property
    def ser(self) -> float:
        return self.symbol_errors / self.symbols_total


@dataclass
class SweepPointResult:
    sweep_var: str
    sweep_value: float
    method: str
    bits: int | None
    trials: int
    ser_mean: float
    ser_ci: tuple[float, float]
    nmse_db_mean: float
    nmse_ci: tuple[float, float]
    failures: int
    wall_time_s: float


def compute_ser(X_hat: np.ndarray, X_true: np.ndarray) -> float:
    """Fraction of mismatched symbols."""
    if X_hat.shape != X_true.shape:
        raise ValueError("shape mismatch")
    return float(np.mean(X_hat != X_true))


def compute_nmse_db(H_hat: np.ndarray, H: np.ndarray) -> float:
    """10 log10(||H - H_hat||_F^2 / ||H||_F^2), floored at -300 dB."""
    num = float(np.sum(np.abs(H - H_hat) ** 2))
    den = float(np.sum(np.abs(H) ** 2))
    if num == 0.0:
        return NMSE_DB_FLOOR
    return max(10.0 * np.log10(num / den), NMSE_DB_FLOOR)


def fronthaul_overhead_bits(scenario: str, M: int, L: int, K: int,
                            T_p: int, T_d: int, bits: int = 3,
                            b_hi: int = 10) -> int:
    """Fronthaul payload per coherence block, in bits.

    PFL forwards unquantized signals represented at b_hi bits; Q-E forwards
    b-bit quantized signals; E-Q forwards b-bit quantized channel estimates
    plus b-bit quantized data signals.
    """
    if min(M, L, K, T_p, T_d) < 1:
        raise ValueError("dimensions must be positive")
    if scenario == "pfl":
        return b_hi * M * L * (T_p + T_d)
    if scenario == "qe":
        return bits * M * L * (T_p + T_d)
    if scenario == "eq":
        return bits * M * L * (K + T_d)
    raise ValueError(f"unknown scenario {scenario!r}")


def parse_method(method: str) -> tuple[str, int | None]:
    """Split 'vb_qe:3' into ('vb_qe', 3); bare names carry bits=None."""
    name, _, bits = method.partition(":")
    if name not in METHOD_NAMES:
        raise ValueError(f"unknown method {method!r}")
    if bits:
        return name, int(bits)
    if name in ("vb_qe", "vb_eq"):
        raise ValueError(f"method {name!r} needs a bit width, e.g. '{name}:3'")
    return name, None


def run_trial(cfg: SystemConfig, method: str, trial_index: int) -> TrialResult:
    """One full pipeline run: realization -> method -> metrics.

    Failures (numerics, shape errors) are recorded, not raised, so sweeps
    can continue and report them.
    """
    name, bits = parse_method(method)
    cfg_m = replace(cfg, quant_bits=bits) if bits is not None else cfg
    t0 = time.perf_counter()
    symbols_total = cfg.num_users * cfg.data_len
    try:
        channel, block = make_block(cfg_m, trial_index)
        sigma = channel.sigma
        if name == "vb_pfl":
            H_hat, X_hat, _ = vb.run_vb_pfl(cfg_m, block, sigma)
        elif name == "vb_qe":
            H_hat, X_hat, _ = vb.run_vb_qe(cfg_m, block, sigma)
        elif name == "vb_eq":
            H_hat, X_hat, _ = vb.run_vb_eq(cfg_m, block, sigma)
        elif name == "lmmse_pfl":
            H_hat, X_hat = baselines.run_lmmse_pfl(cfg_m, block, sigma)
        elif name == "vb_dd_pfl":
            H_hat = channel.H       # genie CSI
            X_hat = baselines.run_vb_dd_pfl(cfg_m, block, channel.H)
        elif name == "vb_ce_pfl":
            H_hat = baselines.run_vb_ce_pfl(cfg_m, block, sigma)
            X_hat = block.X_d       # genie data: estimation-only benchmark
        errors = int(np.count_nonzero(X_hat != block.X_d))
        nmse = float(np.sum(np.abs(channel.H - H_hat) ** 2)
                     / np.sum(np.abs(channel.H) ** 2))
        return TrialResult(method, trial_index, errors, symbols_total, nmse,
                           time.perf_counter() - t0)
    except (vb.NumericsError, np.linalg.LinAlgError, ValueError) as exc:
        return TrialResult(method, trial_index, symbols_total, symbols_total,
                           np.nan, time.perf_counter() - t0,
                           failed=True, error=f"{type(exc).__name__}: {exc}")


def apply_sweep(cfg: SystemConfig, var: str, value) -> SystemConfig:
    if var not in SWEEP_VARS:
        raise ValueError(f"unknown sweep variable {var!r}; choose from {SWEEP_VARS}")
    if var in _INT_VARS:
        value = int(value)
    return replace(cfg, **{var: value})


def _bootstrap_ci(values: np.ndarray, rng: np.random.Generator,
                  level: float = 0.95, resamples: int = 200) -> tuple[float, float]:
    """Percentile bootstrap CI of the mean; degenerate inputs collapse."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return (np.nan, np.nan)
    if values.size == 1:
        return (float(values[0]), float(values[0]))
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def _aggregate(cfg, var, value, method, results, nmse_avg, point_i, method_i):
    name, bits = parse_method(method)
    ok = [r for r in results if not r.failed]
    failures = len(results) - len(ok)
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.master_seed, 0xB00, point_i, method_i]))
    sers = np.array([r.ser for r in ok])
    nmses = np.array([r.nmse_linear for r in ok])
    ser_mean = float(sers.mean()) if ok else np.nan
    ser_ci = _bootstrap_ci(sers, rng)
    if nmse_avg == "linear":
        nmse_mean = compute_nmse_db_from_linear(float(nmses.mean())) if ok else np.nan
        lo, hi = _bootstrap_ci(nmses, rng)
        nmse_ci = (compute_nmse_db_from_linear(lo), compute_nmse_db_from_linear(hi))
    else:
        dbs = np.array([compute_nmse_db_from_linear(v) for v in nmses])
        nmse_mean = float(dbs.mean()) if ok else np.nan
        nmse_ci = _bootstrap_ci(dbs, rng)
    return SweepPointResult(
        sweep_var=var, sweep_value=value, method=name, bits=bits,
        trials=len(results), ser_mean=ser_mean, ser_ci=ser_ci,
        nmse_db_mean=nmse_mean, nmse_ci=nmse_ci, failures=failures,
        wall_time_s=sum(r.wall_time for r in results),
    )


def compute_nmse_db_from_linear(v: float) -> float:
    if not np.isfinite(v) or v < 0:
        return np.nan
    if v == 0:
        return NMSE_DB_FLOOR
    return max(10.0 * np.log10(v), NMSE_DB_FLOOR)


def run_sweep(cfg: SystemConfig, sweep_var: str, grid, methods, trials: int,
              threads: int = 1, nmse_avg: str = "linear"):
    """Run all (grid point, method, trial) combinations and aggregate.

    Results are reduced in deterministic (point, method, trial) order, so
    the output is independent of the degree of parallelism.
    """
    if trials < 1 or not len(list(grid)):
        raise ValueError("need at least one grid point and one trial")
    for m in methods:
        parse_method(m)

    tasks = []
    for pi, value in enumerate(grid):
        cfg_pt = apply_sweep(cfg, sweep_var, value)
        for mi, method in enumerate(methods):
            for t in range(trials):
                tasks.append((pi, value, mi, method, cfg_pt, t))

    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as ex:
            outs = list(ex.map(_run_task, tasks, chunksize=4))
    else:
        outs = [_run_task(t) for t in tasks]

    by_cell: dict[tuple[int, int], list[TrialResult]] = {}
    for (pi, value, mi, method, _, t), res in zip(tasks, outs):
        by_cell.setdefault((pi, mi), []).append(res)

    rows = []
    for pi, value in enumerate(grid):
        for mi, method in enumerate(methods):
            results = sorted(by_cell[(pi, mi)], key=lambda r: r.trial_index)
            rows.append(_aggregate(cfg, sweep_var, value, method, results,
                                   nmse_avg, pi, mi))
    return rows


def _run_task(task):
    pi, value, mi, method, cfg_pt, t = task
    return run_trial(cfg_pt, method, t)


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def write_csv(rows, fh, timing: bool = False) -> None:
    """UTF-8 CSV, '.' decimal separator; timing is zeroed unless requested
    so that repeated runs are byte-identical."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([
            r.sweep_var, _fmt(float(r.sweep_value)), r.method,
            "" if r.bits is None else r.bits, r.trials,
            _fmt(r.ser_mean), _fmt(r.ser_ci[0]), _fmt(r.ser_ci[1]),
            _fmt(r.nmse_db_mean), _fmt(r.nmse_ci[0]), _fmt(r.nmse_ci[1]),
            r.failures, _fmt(round(r.wall_time_s, 3)) if timing else "0",
        ])


def read_csv(fh):
    """Round-trip reader returning rows of parsed values."""
    reader = csv.DictReader(fh)
    rows = []
    for rec in reader:
        rows.append({
            "sweep_var": rec["sweep_var"],
            "sweep_value": float(rec["sweep_value"]),
            "method": rec["method"],
            "bits": int(rec["bits"]) if rec["bits"] else None,
            "trials": int(rec["trials"]),
            "ser_mean": float(rec["ser_mean"]),
            "ser_ci_lo": float(rec["ser_ci_lo"]),
            "ser_ci_hi": float(rec["ser_ci_hi"]),
            "nmse_db_mean": float(rec["nmse_db_mean"]),
            "nmse_ci_lo": float(rec["nmse_ci_lo"]),
            "nmse_ci_hi": float(rec["nmse_ci_hi"]),
            "failures": int(rec["failures"]),
            "wall_time_s": float(rec["wall_time_s"]),
        })
    return rows
