import xml.etree.ElementTree as ET

import numpy as np

from clot.plot import PALETTE, band_svg, color, write_band_plot

NS = "{http://www.w3.org/2000/svg}"


def test_palette():
    assert len(PALETTE) == 22 == len(set(PALETTE))
    assert color(22) == color(0)


def test_one_rect_per_segment(tmp_path):
    gt = np.array([0, 0, 1, 1, 1, 2])
    pred = np.array([0, 1, 1, 1, 1, 1])
    write_band_plot(tmp_path / "v.svg", pred, gt, "v & w")
    root = ET.parse(tmp_path / "v.svg").getroot()
    rects = root.findall(f"{NS}rect")
    assert len(rects) == 3 + 2
    assert rects[0].get("fill") == PALETTE[0] and rects[2].get("fill") == PALETTE[2]
    texts = [t.text for t in root.findall(f"{NS}text")]
    assert texts[:3] == ["v & w", "GT", "Pred"]


def test_widths_cover_axis():
    svg = band_svg([("Pred", np.array([3, 3, 4, 4, 4]))])
    root = ET.fromstring(svg)
    total = sum(float(r.get("width")) for r in root.findall(f"{NS}rect"))
    assert abs(total - (800 - 70)) < 0.05
