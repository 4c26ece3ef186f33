"""Turn evaluation records into a metric table and summary figures.

An evaluation record is a small JSON document (one per configuration) with
the three headline numbers and the per-α breakdown.  The report step collects
every record in a directory and renders: ``metrics.csv`` (machine-readable,
full precision), ``hota_bar.png`` (one bar per configuration) and
``deta_assa_scatter.png`` (detection vs association accuracy).  Rendering is
deterministic: identical records produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from matplotlib.figure import Figure

from .errors import DataError
from .metrics import EvalResult

__all__ = [
    "ABLATION_ORDER", "write_eval_record", "load_eval_records", "write_report",
]

# Display order for the standard ablation ladder; unknown names follow
# alphabetically after these.
ABLATION_ORDER = (
    "baseline",
    "+proposals",
    "+pseudo-clips",
    "+QD",
    "+extra-association",
)


def write_eval_record(path: str | Path, name: str, result: EvalResult,
                      extra: dict | None = None) -> Path:
    """Serialize one evaluation to JSON (stable key order)."""
    record = {
        "name": name,
        "hota": result.hota,
        "deta": result.deta,
        "assa": result.assa,
        "vacuous": result.vacuous,
        "alphas": [round(float(a), 2) for a in result.alphas],
        "hota_alpha": [float(v) for v in result.hota_alpha],
        "deta_alpha": [float(v) for v in result.deta_alpha],
        "assa_alpha": [float(v) for v in result.assa_alpha],
        "tp": [int(v) for v in result.tp],
        "fp": [int(v) for v in result.fp],
        "fn": [int(v) for v in result.fn],
    }
    if extra:
        record.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def _order_key(record: dict) -> tuple:
    name = record["name"]
    try:
        return (0, ABLATION_ORDER.index(name), name)
    except ValueError:
        return (1, 0, name)


def load_eval_records(results_dir: str | Path) -> list[dict]:
    """All ``*.json`` evaluation records under a directory, in report order."""
    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise DataError(f"results directory not found: {results_dir}")
    records = []
    for path in sorted(results_dir.glob("*.json")):
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"not a valid eval record: {path} ({exc})") from None
        for key in ("name", "hota", "deta", "assa"):
            if key not in doc:
                raise DataError(f"eval record {path} is missing '{key}'")
        records.append(doc)
    if not records:
        raise DataError(f"no evaluation records (*.json) in {results_dir}")
    records.sort(key=_order_key)
    return records


def _bar_figure(records: list[dict]) -> Figure:
    fig = Figure(figsize=(max(4.0, 1.6 * len(records)), 4.0), dpi=120)
    ax = fig.subplots()
    names = [r["name"] for r in records]
    values = [r["hota"] for r in records]
    bars = ax.bar(range(len(records)), values, color="#4878cf", width=0.6)
    for bar, value in zip(bars, values):
        ax.annotate(f"{value:.1f}", (bar.get_x() + bar.get_width() / 2, value),
                    ha="center", va="bottom", fontsize=9)
    ax.set_xticks(range(len(records)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylim(0, 105)
    ax.set_ylabel("HOTA")
    ax.set_title("HOTA by configuration")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return fig


def _scatter_figure(records: list[dict]) -> Figure:
    fig = Figure(figsize=(5.0, 5.0), dpi=120)
    ax = fig.subplots()
    for record in records:
        ax.scatter(record["deta"], record["assa"], s=45, zorder=3)
        ax.annotate(record["name"], (record["deta"], record["assa"]),
                    textcoords="offset points", xytext=(6, 4), fontsize=9)
    ax.set_xlabel("DetA")
    ax.set_ylabel("AssA")
    ax.set_xlim(0, 105)
    ax.set_ylim(0, 105)
    ax.set_title("Detection vs association accuracy")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def write_report(results_dir: str | Path, out_dir: str | Path | None = None) -> dict[str, Path]:
    """Render table + figures for every record under ``results_dir``."""
    records = load_eval_records(results_dir)
    out = Path(out_dir) if out_dir is not None else Path(results_dir)
    out.mkdir(parents=True, exist_ok=True)

    csv_path = out / "metrics.csv"
    with csv_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["name", "hota", "deta", "assa", "vacuous"])
        for record in records:
            writer.writerow([
                record["name"],
                f"{record['hota']:.6f}",
                f"{record['deta']:.6f}",
                f"{record['assa']:.6f}",
                str(bool(record.get("vacuous", False))).lower(),
            ])

    bar_path = out / "hota_bar.png"
    _bar_figure(records).savefig(bar_path, format="png")
    scatter_path = out / "deta_assa_scatter.png"
    _scatter_figure(records).savefig(scatter_path, format="png")
    return {"csv": csv_path, "bar": bar_path, "scatter": scatter_path}
