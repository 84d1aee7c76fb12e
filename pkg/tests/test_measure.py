import numpy as np
import pytest

from src.measure import (DiscreteMeasure, EmptyMeasureError, GridSpec, MeasureError, MeasureFormatError, OutsideGridError, ellipse_axes, ellipses_image,
                         gen_ellipses, infer_format, load_measure, measure_from_image, merge_duplicates, normalize, rasterize, read_grid_header, rescale_domain,
                         save_measure, save_pgm, to_image, uniform_measure, union_support)


class TestDiscreteMeasure:

    def test_arrays_are_read_only(self):
        mu = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5])
        with pytest.raises(ValueError):
            mu.masses[0] = 2.0

    def test_default_domain_box_is_bounding_box(self):
        mu = DiscreteMeasure([[0.0, 1.0], [2.0, -1.0]], [1.0, 1.0])
        assert mu.domain_box.tolist() == [[0.0, -1.0], [2.0, 1.0]]

    @pytest.mark.parametrize("points,masses", [
        ([[0.0, 0.0]], [-1.0]),
        ([[0.0, 0.0]], [np.nan]),
        ([[np.inf, 0.0]], [1.0]),
        ([[0.0, 0.0], [1.0, 1.0]], [1.0]),
    ])
    def test_invalid_measures_rejected(self, points, masses):
        with pytest.raises(MeasureError):
            DiscreteMeasure(points, masses)

    def test_point_outside_box_rejected(self):
        with pytest.raises(MeasureError):
            DiscreteMeasure([[2.0, 0.0]], [1.0], [[0.0, 0.0], [1.0, 1.0]])


class TestNormalize:

    def test_unit_total_mass(self):
        mu = normalize(DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [1.0, 3.0]))
        assert mu.total_mass == pytest.approx(1.0)
        assert mu.masses.tolist() == [0.25, 0.75]

    def test_already_normalized_is_identical(self):
        mu = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [0.25, 0.75])
        assert np.array_equal(normalize(mu).masses, mu.masses)

    def test_idempotent(self, rng):
        mu = DiscreteMeasure(rng.uniform(size=(20, 2)), rng.uniform(0.1, 5.0, 20))
        once = normalize(mu)
        assert np.allclose(normalize(once).masses, once.masses, rtol=0, atol=1e-12)

    def test_zero_mass_rejected(self):
        with pytest.raises(EmptyMeasureError):
            normalize(DiscreteMeasure([[0.0, 0.0]], [0.0]))


class TestRescaleDomain:

    def test_divides_coordinates_and_keeps_masses(self):
        mu = DiscreteMeasure([[2.0, 4.0], [6.0, 8.0]], [0.3, 0.7])
        scaled = rescale_domain(mu, 2.0)
        assert scaled.points.tolist() == [[1.0, 2.0], [3.0, 4.0]]
        assert np.array_equal(scaled.masses, mu.masses)

    def test_composition(self):
        mu = DiscreteMeasure([[3.0, -5.0], [0.75, 1.25]], [1.0, 2.0])
        assert np.array_equal(rescale_domain(rescale_domain(mu, 4.0), 0.5).points, rescale_domain(mu, 2.0).points)

    @pytest.mark.parametrize("kappa", [0.0, -1.0, float("inf")])
    def test_invalid_kappa(self, kappa):
        with pytest.raises(MeasureError):
            rescale_domain(DiscreteMeasure([[0.0, 0.0]], [1.0]), kappa)


class TestRasterize:

    def test_point_on_node_keeps_all_mass(self):
        grid = GridSpec((4, 4))
        mu = rasterize(DiscreteMeasure([[2.0, 1.0]], [0.7]), grid)
        assert len(mu) == 1
        assert mu.points[0].tolist() == [2.0, 1.0]
        assert mu.masses[0] == pytest.approx(0.7)

    def test_cell_centre_splits_equally(self):
        grid = GridSpec((4, 4))
        mu = rasterize(DiscreteMeasure([[1.5, 1.5]], [1.0]), grid)
        assert len(mu) == 4
        assert np.allclose(mu.masses, 0.25)

    def test_preserves_mass(self, rng):
        grid = GridSpec((10, 12), (0.0, 0.0), (0.5, 0.5))
        mu = DiscreteMeasure(rng.uniform(0, 5, size=(50, 2)), rng.uniform(0.1, 1.0, 50))
        assert rasterize(mu, grid).total_mass == pytest.approx(mu.total_mass, rel=1e-12)

    def test_clamps_within_one_spacing(self):
        grid = GridSpec((3, 3))
        mu = rasterize(DiscreteMeasure([[-0.5, 2.5]], [1.0]), grid)
        assert mu.points.tolist() == [[0.0, 2.0]]

    def test_far_outside_rejected(self):
        with pytest.raises(OutsideGridError):
            rasterize(DiscreteMeasure([[10.0, 0.0]], [1.0]), GridSpec((3, 3)))

    def test_far_outside_clipped_on_request(self):
        mu = rasterize(DiscreteMeasure([[10.0, 0.0]], [1.0]), GridSpec((3, 3)), clip_outside=True)
        assert mu.points.tolist() == [[2.0, 0.0]]

    def test_image_orientation(self):
        grid = GridSpec.pixels(2, 3)
        image = to_image(DiscreteMeasure([[2.5, 0.5]], [1.0]), grid)
        assert image.shape == (2, 3)
        assert image[0, 2] == pytest.approx(1.0)


class TestGridSpec:

    def test_parse(self):
        grid = GridSpec.parse("32x48")
        assert grid.shape == (32, 48)
        assert grid.origin == (0.5, 0.5)

    @pytest.mark.parametrize("text", ["32", "axb", "0x4"])
    def test_parse_invalid(self, text):
        with pytest.raises(MeasureError):
            GridSpec.parse(text)

    def test_nodes_row_major(self):
        grid = GridSpec((2, 3), (1.0, 10.0), (0.5, 2.0))
        assert grid.nodes().tolist() == [[1.0, 10.0], [1.5, 10.0], [2.0, 10.0], [1.0, 12.0], [1.5, 12.0], [2.0, 12.0]]


class TestFileFormats:

    def test_points_round_trip(self, tmp_path, rng):
        mu = DiscreteMeasure(rng.uniform(size=(7, 2)), rng.uniform(0.1, 1, 7))
        path = save_measure(mu, str(tmp_path / "mu.csv"), metadata={"source": "test"})
        loaded = load_measure(path)
        assert np.array_equal(loaded.points, mu.points)
        assert np.array_equal(loaded.masses, mu.masses)

    def test_grid_round_trip(self, tmp_path):
        grid = GridSpec((3, 4), (0.0, 0.0), (0.25, 0.5))
        image = np.zeros((3, 4))
        image[1, 2] = 0.5
        image[2, 0] = 1.5
        mu = measure_from_image(image, grid)
        path = save_measure(mu, str(tmp_path / "grid.csv"), "csv_grid", grid)

        assert infer_format(path) == "csv_grid"
        assert read_grid_header(path) == grid
        loaded = load_measure(path)
        assert loaded.points.tolist() == [[0.5, 0.5], [0.0, 1.0]]
        assert loaded.masses.tolist() == [0.5, 1.5]

    def test_grid_header_first(self, tmp_path):
        grid = GridSpec((2, 2))
        path = save_measure(DiscreteMeasure([[0.0, 0.0]], [1.0]), str(tmp_path / "g.csv"), "csv_grid", grid, {"p1": "0"})
        lines = open(path).read().splitlines()
        assert lines[0] == "#grid 2 2 0 0 1 1"
        assert lines[1] == "# p1=0"

    def test_zero_masses_dropped(self, tmp_path):
        path = tmp_path / "mu.csv"
        path.write_text("x,y,mass\n0,0,0\n1,1,2\n")
        mu = load_measure(str(path))
        assert mu.points.tolist() == [[1.0, 1.0]]

    def test_comment_lines_skipped(self, tmp_path):
        path = tmp_path / "mu.csv"
        path.write_text("# generated\nx,y,mass\n# note\n1,2,3\n")
        assert load_measure(str(path)).masses.tolist() == [3.0]

    @pytest.mark.parametrize("content", [
        "x,y,mass\n0,0,-1\n",
        "x,y,mass\n0,zero,1\n",
        "a,b,c\n0,0,1\n",
        "x,y,mass\n0,0\n",
    ])
    def test_malformed_points(self, tmp_path, content):
        path = tmp_path / "bad.csv"
        path.write_text(content)
        with pytest.raises(MeasureFormatError):
            load_measure(str(path))

    def test_malformed_grid_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("#grid 2 2 0 0 1 1\n1,2\n3,x\n")
        with pytest.raises(MeasureFormatError, match=":3"):
            load_measure(str(path))

    def test_all_zero_is_empty(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("x,y,mass\n0,0,0\n")
        with pytest.raises(EmptyMeasureError):
            load_measure(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_measure(str(tmp_path / "missing.csv"))

    def test_save_pgm(self, tmp_path):
        image = np.array([[0.0, 1.0], [0.5, 2.0]])
        path = save_pgm(image, str(tmp_path / "img.pgm"))
        data = open(path, "rb").read()
        assert data.startswith(b"P5\n2 2\n255\n")
        assert list(data[-4:]) == [0, 128, 64, 255]


class TestSupportHelpers:

    def test_uniform_measure(self):
        mu = uniform_measure(GridSpec((2, 5)), total_mass=2.0)
        assert len(mu) == 10
        assert np.allclose(mu.masses, 0.2)

    def test_union_support(self):
        mu = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [1.0, 2.0])
        nu = DiscreteMeasure([[1.0, 0.0], [2.0, 0.0]], [3.0, 4.0])
        points, a, b = union_support(mu, nu)
        assert points.tolist() == [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]
        assert a.tolist() == [1.0, 2.0, 0.0]
        assert b.tolist() == [0.0, 3.0, 4.0]

    def test_merge_duplicates(self):
        mu = DiscreteMeasure([[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]], [1.0, 2.0, 3.0])
        merged = merge_duplicates(mu)
        assert merged.points.tolist() == [[0.0, 0.0], [1.0, 0.0]]
        assert merged.masses.tolist() == [2.0, 4.0]


class TestEllipses:

    def test_reflection_symmetry(self):
        # Negating p1 swaps which ellipse is horizontal: mirror the left/right halves
        image = ellipses_image(0.6, 0.0)
        mirrored = ellipses_image(-0.6, 0.0)
        assert np.allclose(np.roll(image, 32, axis=1), mirrored)

    def test_areas_preserved_by_elongation(self):
        (ax0, ay0), (bx0, by0) = ellipse_axes(0.0, 0.0)
        (ax1, ay1), (bx1, by1) = ellipse_axes(1.0, 0.0)
        assert ax1 * ay1 == pytest.approx(ax0 * ay0)
        assert bx1 * by1 == pytest.approx(bx0 * by0)
        assert ax1 > ay1 and by1 > bx1

    def test_size_parameter_grows_left_shrinks_right(self):
        image = ellipses_image(0.0, 1.0)
        left, right = image[:, :32].sum(), image[:, 32:].sum()
        assert left > right

    def test_total_mass_near_disk_area(self):
        image = ellipses_image(0.0, 0.0)
        assert image.sum() == pytest.approx(2 * np.pi * 49, rel=0.02)

    def test_deterministic_measure(self):
        a = gen_ellipses(0.3, -0.4)
        b = gen_ellipses(0.3, -0.4)
        assert np.array_equal(a.points, b.points)
        assert np.array_equal(a.masses, b.masses)

    @pytest.mark.parametrize("p1,p2,resolution", [(1.5, 0.0, 64), (0.0, -2.0, 64), (0.0, 0.0, 8)])
    def test_invalid_parameters(self, p1, p2, resolution):
        with pytest.raises(MeasureError):
            ellipses_image(p1, p2, resolution)

    def test_equal_sizes_without_size_parameter(self):
        image = ellipses_image(0.7, 0.0)
        left, right = image[:, :32].sum(), image[:, 32:].sum()
        assert left == pytest.approx(right, rel=0.01)

    def test_growing_ellipse_mass_increases(self):
        masses = [ellipses_image(0.0, p2)[:, :32].sum() for p2 in np.linspace(-1, 1, 8)]
        assert all(a < b for a, b in zip(masses, masses[1:]))
