"""Timeline rendering: SVG structure, ASCII alignment, validation."""

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from adaseg.render import class_color, render_timeline_ascii, render_timeline_svg


def rect_widths(svg: str) -> list[float]:
    tree = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    return [float(r.get("width")) for r in tree.iter(f"{ns}rect")]


def test_single_track_span_widths():
    svg = render_timeline_svg([("gt", np.array([0, 0, 1]))], width=300)
    widths = rect_widths(svg)
    # background + two spans + one legend swatch per class
    spans = [w for w in widths if w in (200.0, 100.0)]
    assert sorted(spans) == [100.0, 200.0]


def test_identical_tracks_render_identical_bars():
    labels = np.array([0, 1, 1, 2])
    svg = render_timeline_svg([("gt", labels), ("pred", labels)], bar_height=26)
    tree = ET.fromstring(svg)
    ns = "{http://www.w3.org/2000/svg}"
    by_row = {}
    for r in tree.iter(f"{ns}rect"):
        if r.get("height") == "26":  # track bars, not legend swatches
            by_row.setdefault(r.get("y"), []).append(
                (r.get("x"), r.get("width"), r.get("fill")))
    rows = list(by_row.values())
    assert len(rows) == 2 and rows[0] == rows[1]


def test_svg_is_well_formed_xml():
    svg = render_timeline_svg([("gt", np.array([0, 1, 0, 2, 2]))],
                              class_names=["a", "b", "c"])
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        render_timeline_svg([("a", np.array([0, 1])), ("b", np.array([0]))])
    with pytest.raises(ValueError):
        render_timeline_svg([])
    with pytest.raises(ValueError):
        render_timeline_ascii([("a", np.array([], dtype=int))])


def test_palette_deterministic_and_distinct():
    colors = [class_color(i) for i in range(12)]
    assert colors == [class_color(i) for i in range(12)]
    assert len(set(colors)) == 12


def test_custom_color_table_respected():
    svg = render_timeline_svg([("gt", np.array([0, 0]))], colors={0: "#123456"})
    assert "#123456" in svg


def test_ascii_alignment_and_downsampling():
    tracks = [("ground truth", np.array([0] * 50 + [1] * 50)),
              ("prediction", np.array([0] * 100))]
    art = render_timeline_ascii(tracks, width=20)
    lines = art.splitlines()
    assert len(lines) == 2
    assert len(lines[0]) == len(lines[1])
    assert lines[0].endswith("|AAAAAAAAAABBBBBBBBBB|")
    assert lines[1].endswith("|AAAAAAAAAAAAAAAAAAAA|")
