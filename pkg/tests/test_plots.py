import re
import xml.dom.minidom

import numpy as np
import pytest

from eventsets.core import EventSpan, SequenceSample
from eventsets.decode import DetectionRecord
from eventsets.plots import TIMELINE_LEFT, TIMELINE_WIDTH, ar_curve_svg, attention_svg, timeline_svg


def sample():
    return SequenceSample("v1", 64, np.zeros((64, 2)), [EventSpan(4, 20, 1), EventSpan(30, 41, 2)])


def rects(svg, cls):
    dom = xml.dom.minidom.parseString(svg)
    out = []
    for g in dom.getElementsByTagName("g"):
        if g.getAttribute("class") == cls:
            out += [(float(r.getAttribute("x")), float(r.getAttribute("width")), r) for r in g.getElementsByTagName("rect")]
    return out


def test_timeline_gt_only():
    svg = timeline_svg(sample(), [], C=2)
    assert len(rects(svg, "gt")) == 2 and rects(svg, "det") == []


def test_timeline_geometry():
    dets = [DetectionRecord(10.0, 26.5, 1, 0.25)]
    svg = timeline_svg(sample(), dets, C=2)
    (x, w, r), = rects(svg, "det")
    assert abs(x - (TIMELINE_LEFT + 10 * TIMELINE_WIDTH / 64)) <= 1
    assert abs(w - 16.5 / 64 * TIMELINE_WIDTH) <= 1
    assert float(r.getAttribute("fill-opacity")) == 0.25
    for (x, w, _), e in zip(rects(svg, "gt"), sample().events):
        assert abs(w - (e.end - e.start) / 64 * TIMELINE_WIDTH) <= 1


def test_timeline_deterministic():
    dets = [DetectionRecord(10.0, 26.5, 1, 0.25), DetectionRecord(31.0, 40.0, 2, 0.9)]
    assert timeline_svg(sample(), dets, 2) == timeline_svg(sample(), dets[::-1], 2)


def test_attention():
    w = np.full((3, 64), 1 / 64)
    svg = attention_svg(w, sample(), ["a", "b", "c"])
    xml.dom.minidom.parseString(svg)
    assert svg.count('class="gt"') == 4
    with pytest.raises(ValueError):
        attention_svg(w, sample(), ["a"])


def test_ar_curve():
    svg = ar_curve_svg({"x": np.linspace(0, 100, 100), "y": np.zeros(100)}, range(1, 101))
    xml.dom.minidom.parseString(svg)
    assert len(re.findall("<polyline", svg)) == 2
