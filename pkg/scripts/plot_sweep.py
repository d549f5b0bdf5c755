#!/usr/bin/env python3
"""Plot a sweep CSV produced by `cfvbjed run` / `cfvbjed figure`.

Example:
    cfvbjed figure --name ser-vs-snr --trials 100 --out ser.csv
    python scripts/plot_sweep.py ser.csv --metric ser --out ser.png
"""

import argparse
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from cfvbjed.experiments import read_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv")
    ap.add_argument("--metric", choices=("ser", "nmse"), default="ser")
    ap.add_argument("--out", default=None, help="output image (default <csv>.png)")
    args = ap.parse_args()

    with open(args.csv) as fh:
        rows = read_csv(fh)
    if not rows:
        raise SystemExit("empty CSV")

    series = defaultdict(list)
    for r in rows:
        label = r["method"] if r["bits"] is None else f"{r['method']} ({r['bits']}b)"
        series[label].append(r)

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for label, pts in series.items():
        pts.sort(key=lambda r: r["sweep_value"])
        x = [p["sweep_value"] for p in pts]
        if args.metric == "ser":
            y = [p["ser_mean"] for p in pts]
            lo = [p["ser_ci_lo"] for p in pts]
            hi = [p["ser_ci_hi"] for p in pts]
            ax.set_yscale("log")
            ax.set_ylabel("SER")
        else:
            y = [p["nmse_db_mean"] for p in pts]
            lo = [p["nmse_ci_lo"] for p in pts]
            hi = [p["nmse_ci_hi"] for p in pts]
            ax.set_ylabel("NMSE (dB)")
        ax.plot(x, y, marker="o", label=label)
        ax.fill_between(x, lo, hi, alpha=0.15)

    ax.set_xlabel(rows[0]["sweep_var"])
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = args.out or args.csv.rsplit(".", 1)[0] + ".png"
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
