from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Any

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .types import AssessmentRecord  # noqa: E402

ZONE_COLORS = {
    "AP": "#d62828",
    "NOT_AP": "#2a9d8f",
    "TRADEOFF": "#e9c46a",
    "UNINFORMATIVE": "#adb5bd",
}


def quadrant_data(record: AssessmentRecord) -> dict[str, Any]:
    """Everything the chart shows, taken from the record as stored."""
    return {
        "target_id": record.target_id,
        "points": [asdict(p) for p in record.points],
        "decision": asdict(record.decision) if record.decision is not None else None,
        "padding_used": asdict(record.padding_used) if record.padding_used is not None else None,
        "utility_padding": record.config.get("padding", {}).get("utility_padding", 0),
    }


def plot_quadrants(record: AssessmentRecord, out_path: str) -> tuple[Path, Path]:
    """Write the quadrant chart as SVG plus a JSON twin with the same points."""
    data = quadrant_data(record)
    price_pad = data["padding_used"]["fraction"] if data["padding_used"] else 0.0
    util_pad = data["utility_padding"]

    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)

    with plt.rc_context({"svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(8, 6))
        xs = [p.net_utility for p in record.points]
        ys = [p.rel_gap for p in record.points]
        x_lim = max([abs(x) for x in xs] + [util_pad + 1, 2]) + 0.5
        y_lim = max([abs(y) for y in ys] + [price_pad + 0.1, 0.5]) + 0.1

        # Price-padding band and utility-padding band.
        ax.axhspan(-price_pad, price_pad, color="#f1faee", alpha=0.8, zorder=0)
        ax.axvspan(-util_pad - 0.5, util_pad + 0.5, color="#e9ecef", alpha=0.5, zorder=0)
        ax.axhline(price_pad, color="#d62828", linewidth=0.8, linestyle="--", label=f"price padding {price_pad:.0%}")
        ax.axhline(0, color="black", linewidth=0.8)
        ax.axvline(0, color="black", linewidth=0.8)

        for zone, color in ZONE_COLORS.items():
            members = [p for p in record.points if p.zone == zone]
            if not members:
                continue
            ax.scatter(
                [p.net_utility for p in members],
                [p.rel_gap for p in members],
                s=48,
                color=color,
                edgecolor="black",
                linewidth=0.5,
                label=zone.replace("_", "-"),
                zorder=3,
            )
            for p in members:
                ax.annotate(p.neighbor_id, (p.net_utility, p.rel_gap), fontsize=7, xytext=(4, 4), textcoords="offset points")

        verdict = record.verdict or "n/a"
        ax.text(
            0.02,
            0.97,
            f"Verdict: {verdict}",
            transform=ax.transAxes,
            va="top",
            fontsize=11,
            fontweight="bold",
        )
        ax.set_xlim(-x_lim, x_lim)
        ax.set_ylim(-y_lim, y_lim)
        ax.set_title(f"Price/utility quadrants for {record.target_id}")
        ax.set_xlabel("Net utility (neighbor vs target)")
        ax.set_ylabel("Relative price gap (positive = neighbor cheaper)")
        ax.legend(fontsize=8, loc="lower right")
        ax.grid(alpha=0.2)

        plt.tight_layout()
        plt.savefig(out, format="svg")
        plt.close(fig)

    twin = out.with_suffix(".json")
    twin.write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")
    return out, twin
