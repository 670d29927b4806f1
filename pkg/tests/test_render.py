import numpy as np
import pytest

from seasoncast.render import COLORMAPS, ERROR_STYLE, PRECIP_STYLE, HeatmapStyle, colorize, read_ppm, render_heatmap


def test_zero_error_map_is_neutral(tmp_path):
    path = render_heatmap(np.zeros((3, 4)), ERROR_STYLE, tmp_path / "e.ppm")
    img = read_ppm(path)
    assert img.shape == (3 * 8, 4 * 8, 3)
    assert np.all(img == 255)


def test_diverging_sign_convention():
    rgb, (lo, hi) = colorize(np.array([[-2.0, 0.0, 1.0]]), ERROR_STYLE)
    assert (lo, hi) == (-2.0, 2.0)
    under, mid, over = rgb[0]
    assert under[0] > under[2]  # red for underestimation
    assert over[2] > over[0]  # blue for overestimation
    assert tuple(mid) == (255, 255, 255)


def test_monotone_gradient_progression():
    rgb, _ = colorize(np.linspace(0, 10, 20)[None, :], PRECIP_STYLE)
    red = rgb[0, :, 0].astype(int)
    assert np.all(np.diff(red) <= 0) and red[0] > red[-1]


def test_bytes_are_deterministic(tmp_path):
    values = np.random.default_rng(0).normal(size=(5, 6))
    a = render_heatmap(values, PRECIP_STYLE, tmp_path / "a.ppm").read_bytes()
    b = render_heatmap(values, PRECIP_STYLE, tmp_path / "b.ppm").read_bytes()
    assert a == b
    assert a.startswith(b"P6\n48 40\n255\n")


def test_north_up_and_legend(tmp_path):
    values = np.array([[0.0], [1.0]])  # row 1 is further north
    path = render_heatmap(values, HeatmapStyle("sequential", cell_pixels=1), tmp_path / "p.ppm", lat_values=[-10, 0])
    img = read_ppm(path)
    assert img[0, 0, 0] < img[1, 0, 0]  # darker (higher) value on top
    legend = (tmp_path / "p.ppm.legend.txt").read_text().splitlines()
    assert legend[:3] == ["colormap sequential", "vmin 0.0", "vmax 1.0"]
    assert len(legend) == 3 + len(COLORMAPS["sequential"])


def test_rejects_bad_input(tmp_path):
    with pytest.raises(ValueError):
        render_heatmap(np.array([[np.nan]]), PRECIP_STYLE, tmp_path / "x.ppm")
    with pytest.raises(ValueError):
        HeatmapStyle("rainbow")
