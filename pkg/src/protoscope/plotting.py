"""Static SVG figures: attribution beeswarms, a top-k bar chart and the
cross-model bubble summary."""

from __future__ import annotations

import csv
import io
import re
from typing import Sequence

import numpy as np
from matplotlib import rcParams
from matplotlib.figure import Figure

from .explain import DIRECT, INVERSE, NONE, Attribution, TrendSummary, beeswarm_data
from .seeding import rng

DIRECTION_COLORS = {DIRECT: "#ff0000", INVERSE: "#0000ff", NONE: "#808080"}


def _svg(fig: Figure) -> str:
    # fixed hash salt and no date keep reruns byte-identical
    rcParams["svg.hashsalt"] = "protoscope"
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches="tight")
    return buf.getvalue()


def beeswarm_svg(attribution: Attribution, X, title: str = "", seed: int = 0) -> str:
    points = beeswarm_data(attribution, X)
    order = list(dict.fromkeys(p.feature for p in points))
    fig = Figure(figsize=(7, 0.45 * len(order) + 1.2))
    ax = fig.add_subplot()
    jitter = rng(seed, 60)
    for row, name in enumerate(order):
        pts = [p for p in points if p.feature == name]
        y = len(order) - 1 - row + jitter.uniform(-0.3, 0.3, len(pts))
        ax.scatter([p.phi for p in pts], y, c=[p.color for p in pts], cmap="coolwarm",
                   vmin=0.0, vmax=1.0, s=10, linewidths=0)
    ax.axvline(0.0, color="#444444", linewidth=0.8)
    ax.set_yticks(range(len(order)))
    ax.set_yticklabels(order[::-1])
    ax.set_xlabel("Shapley value (probability of good quality)")
    ax.set_title(title)
    return _svg(fig)


def top_features_svg(summary: TrendSummary, title: str = "") -> str:
    top = summary.top_features()
    fig = Figure(figsize=(6, 0.5 * len(top) + 1.2))
    ax = fig.add_subplot()
    names = [f for f, _ in top][::-1]
    weights = [w for _, w in top][::-1]
    ax.barh(names, weights, color="#4c72b0")
    ax.set_xlabel("impact weight, summed over models (rank score x F1)")
    ax.set_title(title)
    return _svg(fig)


def bubble_svg(summary: TrendSummary, title: str = "") -> str:
    """One bubble per (model, present feature); red direct, blue inverse,
    gray none. Features a model never saw get no bubble."""
    fig = Figure(figsize=(0.9 * len(summary.models) + 3, 0.45 * len(summary.features) + 1.5))
    ax = fig.add_subplot()
    rows = {f: len(summary.features) - 1 - i for i, f in enumerate(summary.features)}
    cols = {m: i for i, m in enumerate(summary.models)}
    for cell in summary.cells:
        if cell.feature not in rows:
            continue
        ax.scatter([cols[cell.model]], [rows[cell.feature]], s=15 + 60 * cell.impact_weight,
                   color=DIRECTION_COLORS[cell.direction], alpha=0.8, linewidths=0,
                   gid=f"bubble:{cell.model}:{cell.feature}:{cell.direction}")
    ax.set_xticks(range(len(summary.models)))
    ax.set_xticklabels(summary.models)
    ax.set_yticks(range(len(summary.features)))
    ax.set_yticklabels(summary.features[::-1])
    ax.set_xlim(-0.7, len(summary.models) - 0.3)
    ax.set_ylim(-0.7, len(summary.features) - 0.3)
    ax.set_title(title)
    handles = [ax.scatter([], [], color=c, label=d) for d, c in DIRECTION_COLORS.items()]
    ax.legend(handles=handles, loc="upper left", bbox_to_anchor=(1.02, 1.0), frameon=False)
    return _svg(fig)


def bubbles_in_svg(svg: str) -> list[tuple[str, str, str]]:
    """(model, feature, direction) of every bubble group in a bubble SVG."""
    return [tuple(m.split(":")[1:]) for m in re.findall(r'id="(bubble:[^"]+)"', svg)]


def table_csv(rows: Sequence[Sequence[str]]) -> str:
    out = io.StringIO()
    csv.writer(out, lineterminator="\n").writerows(rows)
    return out.getvalue()
