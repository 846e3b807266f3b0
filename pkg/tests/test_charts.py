from __future__ import annotations

import re
import xml.etree.ElementTree as ET

import pytest
from bs4 import BeautifulSoup

from beamfuse.charts import emit_svg

SVG = "{http://www.w3.org/2000/svg}"
POINT = re.compile(r"^point-\d+$")
SERIES = re.compile(r"^series-\d+$")


def texts(soup: BeautifulSoup):
    return [text.get_text() for text in soup.find_all("text")]


def test_line_chart_has_one_point_per_row():
    rows = [{"step": step, "active_slots": slots} for step, slots in ((1, 8), (2, 5), (3, 2))]

    svg = emit_svg(rows, "line", x="step", y="active_slots")

    soup = BeautifulSoup(svg, "html.parser")
    assert len(soup.find_all("g", id=POINT)) == 3
    assert len(soup.find_all("g", id=SERIES)) == 1


def test_line_chart_draws_one_line_per_series():
    rows = [
        {"strategy": strategy, "batch_size": size, "sentences_per_sec": rate}
        for strategy, size, rate in (("naive", 1, 3.0), ("naive", 4, 5.0),
                                     ("dynamic", 1, 3.1), ("dynamic", 4, 7.5))
    ]

    svg = emit_svg(rows, "line", x="batch_size", y="sentences_per_sec", series="strategy")

    soup = BeautifulSoup(svg, "html.parser")
    assert len(soup.find_all("g", id=SERIES)) == 2
    assert len(soup.find_all("g", id=POINT)) == 4
    legend = texts(soup)
    assert "naive" in legend and "dynamic" in legend


def test_bar_chart_is_well_formed_svg():
    rows = [{"phase": "encoder", "share": 0.2}, {"phase": "decoder", "share": 0.5},
            {"phase": "output_layer", "share": 0.3}]

    svg = emit_svg(rows, "bar", x="phase", y="share", title="Share per phase")

    root = ET.fromstring(svg.encode("utf-8"))
    assert root.tag == f"{SVG}svg"
    assert root.get("version") == "1.1"
    points = [group for group in root.iter(f"{SVG}g") if POINT.match(group.get("id", ""))]
    assert len(points) == 3
    soup = BeautifulSoup(svg, "html.parser")
    assert "Share per phase" in texts(soup)
    assert "output_layer" in texts(soup)


def test_grouped_bar_chart_counts_every_bar():
    rows = [{"case": case, "kernel": kernel, "seconds": seconds}
            for case, kernel, seconds in (("v1000 k1", "baseline", 0.4), ("v1000 k1", "fused", 0.2),
                                          ("v1000 k3", "baseline", 0.5), ("v1000 k3", "fused", 0.3))]

    svg = emit_svg(rows, "bar", x="case", y="seconds", series="kernel")

    soup = BeautifulSoup(svg, "html.parser")
    assert len(soup.find_all("g", id=POINT)) == 4


def test_emit_svg_is_reproducible():
    rows = [{"beam": beam, "seconds": 0.1 * beam} for beam in (1, 3, 5)]
    assert emit_svg(rows, "line", x="beam", y="seconds") == emit_svg(rows, "line", x="beam", y="seconds")


def test_emit_svg_rejects_empty_and_non_numeric_rows():
    with pytest.raises(ValueError):
        emit_svg([], "line", x="a", y="b")
    with pytest.raises(ValueError):
        emit_svg([{"a": 1, "b": "fast"}], "line", x="a", y="b")
    with pytest.raises(ValueError):
        emit_svg([{"a": 1, "b": 2}], "pie", x="a", y="b")
    with pytest.raises(ValueError):
        emit_svg([{"a": 1, "b": -2}], "bar", x="a", y="b")
