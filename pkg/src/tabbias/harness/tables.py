"""Gain arithmetic and the scenario / gain tables (CSV and Markdown)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..validate import DivergenceReport

SCENARIO_ORDER = ("big_data", "low_data", "pretrain", "avg", "maml", "drs")
SCENARIO_LABELS = {
    "big_data": "Big data",
    "low_data": "Low data",
    "pretrain": "Pre-train",
    "avg": "AVG",
    "maml": "MAML",
    "drs": "DRS",
}
METRICS = ("js", "kl")


@dataclass(frozen=True)
class GainEntry:
    metric: str
    low_mean: float
    method_mean: float
    absolute: float
    relative: float | None  # None when the low-data mean is not positive


def compute_gains(low: DivergenceReport, method: DivergenceReport) -> list[GainEntry]:
    """Improvement of ``method`` over the low-data baseline; positive means better.

    Negative gains are kept as they are.
    """
    out = []
    for metric in METRICS:
        lo = getattr(low, f"{metric}_mean")
        me = getattr(method, f"{metric}_mean")
        absolute = lo - me
        out.append(GainEntry(metric, lo, me, absolute, absolute / lo if lo > 0 else None))
    return out


def fmt_pair(a: float, b: float | None) -> str:
    return f"{a:.3f} (N/A)" if b is None else f"{a:.3f} ({b:.3f})"


def _scenario_rows(results) -> list[dict]:
    rows = []
    key = lambda r: (r.dataset, SCENARIO_ORDER.index(r.scenario))  # noqa: E731
    for res in sorted(results, key=key):
        for rep in res.reports:
            rows.append({
                "dataset": res.dataset,
                "scenario": SCENARIO_LABELS[res.scenario],
                "N": res.n,
                "M": rep.m,
                "L": rep.l,
                "JS": fmt_pair(rep.js_mean, rep.js_std),
                "KL": fmt_pair(rep.kl_mean, rep.kl_std),
                "reliability": "" if rep.reliable else "UNRELIABLE",
                "js_mean": repr(rep.js_mean),
                "js_std": repr(rep.js_std),
                "kl_mean": repr(rep.kl_mean),
                "kl_std": repr(rep.kl_std),
            })  # fmt: skip
    return rows


def _gain_rows(results) -> list[dict]:
    lows = {}
    for res in results:
        if res.scenario == "low_data":
            for rep in res.reports:
                lows[(res.dataset, rep.m, rep.l)] = rep
    rows = []
    key = lambda r: (r.dataset, SCENARIO_ORDER.index(r.scenario))  # noqa: E731
    for res in sorted(results, key=key):
        if res.scenario in ("big_data", "low_data"):
            continue
        for rep in res.reports:
            low = lows.get((res.dataset, rep.m, rep.l))
            if low is None:
                continue
            gains = {g.metric: g for g in compute_gains(low, rep)}
            row = {
                "dataset": res.dataset,
                "strategy": SCENARIO_LABELS[res.scenario],
                "M": rep.m,
                "L": rep.l,
                "JS gain": fmt_pair(gains["js"].absolute, gains["js"].relative),
                "KL gain": fmt_pair(gains["kl"].absolute, gains["kl"].relative),
                "reliability": "" if (rep.reliable and low.reliable) else "UNRELIABLE",
            }
            for metric, g in gains.items():
                row[f"{metric}_absolute"] = repr(g.absolute)
                row[f"{metric}_relative"] = "" if g.relative is None else repr(g.relative)
            rows.append(row)
    return rows


SCENARIO_COLUMNS = ["dataset", "scenario", "N", "M", "L", "JS", "KL", "reliability",
                    "js_mean", "js_std", "kl_mean", "kl_std"]  # fmt: skip
GAIN_COLUMNS = ["dataset", "strategy", "M", "L", "JS gain", "KL gain", "reliability",
                "js_absolute", "js_relative", "kl_absolute", "kl_relative"]  # fmt: skip
MD_SCENARIO = ["dataset", "scenario", "N", "M", "L", "JS", "KL", "reliability"]
MD_GAIN = ["dataset", "strategy", "M", "L", "JS gain", "KL gain", "reliability"]


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _markdown(columns, rows) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
    for r in rows:
        lines.append("| " + " | ".join(str(r[c]) for c in columns) + " |")
    return "\n".join(lines) + "\n"


def emit_tables(results: Sequence, out_dir) -> dict[str, Path]:
    """Write scenario_table.{csv,md} and gain_table.{csv,md} into ``out_dir``."""
    if not results:
        raise ValueError("no results to tabulate")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    srows, grows = _scenario_rows(results), _gain_rows(results)
    paths = {
        "scenario_csv": out_dir / "scenario_table.csv",
        "scenario_md": out_dir / "scenario_table.md",
        "gain_csv": out_dir / "gain_table.csv",
        "gain_md": out_dir / "gain_table.md",
    }
    _write_csv(paths["scenario_csv"], SCENARIO_COLUMNS, srows)
    _write_csv(paths["gain_csv"], GAIN_COLUMNS, grows)
    paths["scenario_md"].write_text(
        "Divergences, mean (std) over repeats; lower is better.\n\n" + _markdown(MD_SCENARIO, srows)
    )
    paths["gain_md"].write_text(
        "Gains over low data, absolute (relative); higher is better.\n\n" + _markdown(MD_GAIN, grows)
    )
    return paths
