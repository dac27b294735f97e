import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from failfoundry import plotting
from failfoundry.plotting import BOTTOM, HEIGHT, LEFT, RIGHT, TOP, WIDTH, PlotError

NS = {"svg": "http://www.w3.org/2000/svg"}


def _write(path, header, rows):
    path.write_text(",".join(header) + "\n" + "".join(",".join(map(str, r)) + "\n" for r in rows))
    return path


def _render(tmp_path, kind, header, rows):
    src = _write(tmp_path / "in.csv", header, rows)
    out = tmp_path / "out.svg"
    plotting.plot(src, kind, out)
    return ET.parse(out).getroot()


def _vertices(polyline):
    return [tuple(map(float, p.split(","))) for p in polyline.get("points").split()]


def _to_data(root, px, py):
    """Invert the pixel mapping using the ranges stored on the root."""
    x0, x1 = float(root.get("data-xmin")), float(root.get("data-xmax"))
    y0, y1 = float(root.get("data-ymin")), float(root.get("data-ymax"))
    w = WIDTH - LEFT - RIGHT
    h = HEIGHT - TOP - BOTTOM
    return x0 + (px - LEFT) / w * (x1 - x0), y0 + (1 - (py - TOP) / h) * (y1 - y0)


def test_two_point_line(tmp_path):
    root = _render(tmp_path, "line", ["x", "y"], [(0, 1), (1, 3)])
    polys = root.findall("svg:polyline", NS)
    assert len(polys) == 1
    pts = _vertices(polys[0])
    assert len(pts) == 2
    x, y = _to_data(root, *pts[1])
    assert x == pytest.approx(1, abs=0.01) and y == pytest.approx(3, abs=0.01)


def test_axis_labels_come_from_header(tmp_path):
    root = _render(tmp_path, "line", ["log_lambda", "mean_auc"], [(0, 1), (1, 3)])
    texts = {t.text for t in root.findall("svg:text", NS)}
    assert {"log_lambda", "mean_auc"} <= texts


def test_grouped_line_draws_one_polyline_per_group(tmp_path):
    rows = [(t, v, g) for g in ("a", "b", "c") for t, v in ((0, 1), (1, 2), (2, 0))]
    root = _render(tmp_path, "trace", ["iteration", "value", "chain"], rows)
    assert len(root.findall("svg:polyline", NS)) == 3


def test_perfect_roc_passes_through_top_left(tmp_path):
    root = _render(tmp_path, "roc", ["fpr", "tpr"], [(0, 0), (0, 1), (1, 1)])
    pts = [_to_data(root, *p) for p in _vertices(root.find("svg:polyline", NS))]
    assert any(abs(x) < 1e-6 and abs(y - 1) < 1e-6 for x, y in pts)


def test_density_mode_of_normal_draws(tmp_path):
    draws = np.random.default_rng(0).standard_normal(10_000)
    root = _render(tmp_path, "density", ["value"], [(repr(float(v)),) for v in draws])
    pts = _vertices(root.find("svg:polyline", NS))
    top = min(pts, key=lambda p: p[1])
    mode, height = _to_data(root, *top)
    assert abs(mode) < 0.2
    assert height == pytest.approx(1 / math.sqrt(2 * math.pi), rel=0.05)


def test_kde_matches_direct_sum():
    x = np.array([-1.0, 0.0, 0.5, 2.0])
    grid, dens = plotting.density_curve(x, n_points=11)
    h = plotting.silverman_bandwidth(x)
    ref = [np.mean(np.exp(-0.5 * ((g - x) / h) ** 2)) / (h * math.sqrt(2 * math.pi)) for g in grid]
    assert np.allclose(dens, ref)


def test_silverman_bandwidth():
    x = np.random.default_rng(1).standard_normal(1000)
    sd = x.std(ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    assert plotting.silverman_bandwidth(x) == pytest.approx(0.9 * min(sd, iqr / 1.34) * 1000 ** -0.2)


def test_boxplot(tmp_path):
    rows = [("a", v) for v in range(10)] + [("b", v) for v in range(5, 20)]
    root = _render(tmp_path, "boxplot", ["group", "value"], rows)
    assert len(root.findall("svg:rect", NS)) == 3   # background plus two boxes


def test_arity_mismatch(tmp_path):
    src = _write(tmp_path / "in.csv", ["a", "b", "c"], [(1, 2, 3)])
    with pytest.raises(PlotError, match="columns"):
        plotting.plot(src, "roc", tmp_path / "o.svg")


def test_ragged_rows_rejected(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("x,y\n1,2\n3\n")
    with pytest.raises(PlotError, match=":3:"):
        plotting.plot(src, "line", tmp_path / "o.svg")


def test_non_numeric_rejected(tmp_path):
    src = _write(tmp_path / "in.csv", ["x", "y"], [(1, "abc")])
    with pytest.raises(PlotError, match="non-numeric"):
        plotting.plot(src, "line", tmp_path / "o.svg")


def test_unknown_kind():
    with pytest.raises(PlotError):
        plotting.render(["x", "y"], [["1", "2"]], "pie")
