"""SVG line and bar charts for benchmark rows, rendered with matplotlib."""

from __future__ import annotations

import io
import logging
from typing import Dict, List, Mapping, Optional, Sequence

import matplotlib as mpl

mpl.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

CHART_KINDS = ("line", "bar")
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")
FIGSIZE = (6.4, 4.0)
# Keep labels as <text> and element ids stable between runs.
SVG_RC = {"svg.fonttype": "none", "svg.hashsalt": "beamfuse"}


def _number(row: Mapping[str, object], key: str) -> float:
    if key not in row:
        raise ValueError(f"row has no column {key!r}")
    try:
        return float(row[key])
    except (TypeError, ValueError) as exc:
        raise ValueError(f"column {key!r} is not numeric: {row[key]!r}") from exc


def _group(rows: Sequence[Mapping[str, object]],
           series: Optional[str]) -> Dict[str, List[Mapping[str, object]]]:
    groups: Dict[str, List[Mapping[str, object]]] = {}
    for row in rows:
        name = str(row[series]) if series else ""
        groups.setdefault(name, []).append(row)
    return groups


def _line_chart(ax, groups: Dict[str, List[Mapping[str, object]]], x: str,
                y: str, labelled: bool) -> None:
    point = 0
    for index, (name, members) in enumerate(groups.items()):
        color = PALETTE[index % len(PALETTE)]
        members = sorted(members, key=lambda row: _number(row, x))
        xs = [_number(row, x) for row in members]
        ys = [_number(row, y) for row in members]
        (line, ) = ax.plot(xs, ys, color=color, linewidth=2,
                           label=name if labelled else "_nolegend_")
        line.set_gid(f"series-{index}")
        for px, py in zip(xs, ys):
            marker = ax.scatter([px], [py], color=color, s=18, zorder=3)
            marker.set_gid(f"point-{point}")
            point += 1


def _bar_chart(ax, rows: Sequence[Mapping[str, object]],
               groups: Dict[str, List[Mapping[str, object]]], x: str, y: str,
               labelled: bool) -> None:
    categories = list(dict.fromkeys(str(row[x]) for row in rows))
    width = 0.8 / len(groups)
    point = 0
    for index, (name, members) in enumerate(groups.items()):
        offset = (index - (len(groups) - 1) / 2) * width
        positions = [categories.index(str(row[x])) + offset for row in members]
        heights = [_number(row, y) for row in members]
        bars = ax.bar(positions, heights, width=width,
                      color=PALETTE[index % len(PALETTE)],
                      label=name if labelled else "_nolegend_")
        for patch in bars.patches:
            patch.set_gid(f"point-{point}")
            point += 1
    ax.set_xticks(range(len(categories)))
    ax.set_xticklabels(categories, fontsize=8)


def emit_svg(rows: Sequence[Mapping[str, object]],
             kind: str,
             *,
             x: str,
             y: str,
             series: Optional[str] = None,
             title: str = "") -> str:
    """Render ``rows`` as a standalone SVG document.

    Every data point is drawn as its own element with id ``point-N``:
    a marker for line charts, a bar for bar charts. Each line of a line
    chart carries id ``series-N``.
    """
    if not rows:
        raise ValueError("cannot chart an empty table")
    if kind not in CHART_KINDS:
        raise ValueError(f"unknown chart kind {kind!r}; expected one of {CHART_KINDS}")
    values = [_number(row, y) for row in rows]
    if min(values) < 0:
        raise ValueError(f"column {y!r} has negative values")

    groups = _group(rows, series)
    labelled = series is not None
    buffer = io.BytesIO()
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        try:
            if kind == "line":
                _line_chart(ax, groups, x, y, labelled)
            else:
                _bar_chart(ax, rows, groups, x, y, labelled)
            ax.set_ylim(bottom=0)
            ax.set_xlabel(x)
            ax.set_ylabel(y)
            ax.set_title(title or f"{y} by {x}")
            if labelled:
                ax.legend(loc="best", fontsize=8)
            fig.tight_layout()
            fig.savefig(buffer, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    logger.debug("Rendered %s chart with %d points", kind, len(rows))
    return buffer.getvalue().decode("utf-8")
