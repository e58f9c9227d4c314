"""Result persistence: delimited files plus rendered summary figures.

Every experiment writes tidy CSVs (one observation per row) and a PNG figure
of the same content next to them, so runs can be inspected without loading
anything into a notebook.
"""

from __future__ import annotations

import csv
import json
import platform
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import __version__
from .experiments import ControlOutput

__all__ = [
    "write_results_csv",
    "write_pairs_csv",
    "write_containment_csv",
    "write_checks_csv",
    "write_decile_csv",
    "write_trajectory_csv",
    "write_manifest",
    "render_rates_figure",
    "render_control_figure",
    "render_checks_figure",
]

METHOD_COLORS = {"robust": "tab:blue", "vanilla": "tab:red", "full_bayes": "tab:green"}


def write_results_csv(path, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "train_size", "repetition", "violation_rate", "wall_time"])
        for r in rows:
            writer.writerow([r.method, r.train_size, r.repetition, f"{r.violation_rate:.6f}", f"{r.wall_time:.4f}"])


def write_pairs_csv(path, pair_records: list) -> None:
    """One row per bounding pair; vectors are space-joined to keep one schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["context", "delta", "achieved_mass", "gamma", "lower", "upper"])
        for rec in pair_records:
            p = rec.pair
            writer.writerow(
                [
                    rec.context,
                    f"{p.delta:.6g}",
                    f"{p.achieved_mass:.6f}",
                    f"{p.gamma:.6g}",
                    " ".join(f"{v:.10g}" for v in p.lower.to_array()),
                    " ".join(f"{v:.10g}" for v in p.upper.to_array()),
                ]
            )


def write_containment_csv(path, records: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["train_size", "repetition", "contained_fraction"])
        for rec in records:
            writer.writerow([rec["train_size"], rec["repetition"], f"{rec['contained_fraction']:.6f}"])


def write_checks_csv(path, reports: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "trials", "worst_violation", "tolerance", "passed", "seeds"])
        for rep in reports:
            writer.writerow(
                [rep.name, rep.trials, f"{rep.worst_violation:.6e}", f"{rep.tolerance:.1e}", rep.passed,
                 " ".join(str(s) for s in rep.seeds)]
            )


def write_decile_csv(path, deciles: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "time", "median", "q10", "q90"])
        for policy, table in deciles.items():
            for t, med, lo, hi in zip(table["times"], table["median"], table["q10"], table["q90"]):
                writer.writerow([policy, f"{t:.6g}", f"{med:.6g}", f"{lo:.6g}", f"{hi:.6g}"])


def write_trajectory_csv(path, trajectory) -> None:
    m = trajectory.states.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + [f"x{i + 1}" for i in range(m)] + ["u", "error_norm"])
        for k in range(trajectory.times.size):
            writer.writerow(
                [f"{trajectory.times[k]:.6g}"]
                + [f"{v:.8g}" for v in trajectory.states[k]]
                + [f"{trajectory.inputs[k]:.8g}", f"{trajectory.error_norms[k]:.8g}"]
            )


def write_manifest(path, config_manifest: dict, extra: dict | None = None) -> None:
    payload = {
        "config": config_manifest,
        "versions": {
            "gpbounds": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "platform": platform.platform(),
        },
    }
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _rates_by_method(rows: list) -> dict:
    table: dict[str, dict[int, list[float]]] = {}
    for r in rows:
        table.setdefault(r.method, {}).setdefault(r.train_size, []).append(r.violation_rate)
    return table


def render_rates_figure(path, rows: list, title: str) -> None:
    """Mean violation rate against training size, one line per method."""
    table = _rates_by_method(rows)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for method, by_size in sorted(table.items()):
        sizes = sorted(by_size)
        means = [float(np.mean(by_size[s])) for s in sizes]
        spread = [float(np.std(by_size[s])) for s in sizes]
        color = METHOD_COLORS.get(method)
        ax.errorbar(sizes, means, yerr=spread, marker="o", capsize=3, label=method, color=color)
    ax.set_xlabel("training points N")
    ax.set_ylabel("violation rate")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_control_figure(path, output: ControlOutput, xi_des: float) -> None:
    """Median tracking-error norm with decile bands, one color per policy."""
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    for policy, table in output.deciles.items():
        color = METHOD_COLORS.get(policy)
        med = np.where(np.isfinite(table["median"]), table["median"], np.nan)
        lo = np.where(np.isfinite(table["q10"]), table["q10"], np.nan)
        hi = np.where(np.isfinite(table["q90"]), table["q90"], np.nan)
        ax.plot(table["times"], med, label=policy, color=color)
        ax.fill_between(table["times"], lo, hi, alpha=0.2, color=color)
    ax.axhline(xi_des, linestyle="--", color="black", linewidth=1, label="error target")
    ax.set_xlabel("time")
    ax.set_ylabel("tracking error norm")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_checks_figure(path, reports: list) -> None:
    """Worst violation per check on a symlog axis, with tolerance markers."""
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    names = [rep.name for rep in reports]
    worst = [rep.worst_violation for rep in reports]
    tols = [rep.tolerance for rep in reports]
    colors = ["tab:green" if rep.passed else "tab:red" for rep in reports]
    pos = np.arange(len(names))
    ax.bar(pos, worst, color=colors)
    ax.scatter(pos, tols, marker="_", s=400, color="black", label="tolerance")
    ax.set_xticks(pos)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("worst violation")
    ax.set_yscale("symlog", linthresh=1e-12)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
