import itertools
import math

import numpy as np
import pytest
from conftest import grid_pair, map_regime_pair

from src.geodesic import dirac_geodesic, interpolate_hk
from src.measure import DiscreteMeasure
from src.solver import Coupling, solve_hk
from src.tangent import (ROW_MASS_SLACK, DecompositionError, ExpDomainError, TangentError, TangentField, W2TangentField, barycentric_project,
                         hk_embedding_vector, hk_exp, hk_inner, hk_lin_dist, hk_log, save_tangent_field, tangent_from_vector, w2_embedding_vector, w2_exp,
                         w2_inner, w2_lin_dist, w2_log)


def diagonal_pair(shift=(0.3, 0.4), masses0=(1.0, 0.5), masses1=(2.0, 0.5)):
    """Two-point measures matched one-to-one by a diagonal coupling."""
    points = np.array([[0.0, 0.0], [1.0, 1.0]])
    mu0 = DiscreteMeasure(points, masses0)
    mu1 = DiscreteMeasure(points + np.array(shift), masses1)
    plan = np.diag([0.8, 0.4])
    return mu0, mu1, Coupling.from_weights(plan, mu0, mu1, 0.0)


class TestBarycentricProject:

    def test_diagonal_coupling(self):
        mu0, mu1, coupling = diagonal_pair()
        decomp = barycentric_project(coupling, mu0, mu1, 0.0)

        assert np.allclose(decomp.transport_map, mu1.points)
        assert np.allclose(decomp.u0, [1.0 / 0.8, 0.5 / 0.4])
        assert np.allclose(decomp.u1, [2.0 / 0.8, 0.5 / 0.4])
        assert np.allclose(decomp.u1_of_T, decomp.u1)
        assert decomp.mu0_perp.total_mass == 0.0
        assert decomp.mu1_perp.total_mass == 0.0

    def test_barycentre_of_split_row(self):
        mu0 = DiscreteMeasure([[0.0, 0.0]], [1.0])
        mu1 = DiscreteMeasure([[0.2, 0.0], [0.0, 0.4]], [1.0, 1.0])
        coupling = Coupling.from_weights(np.array([[0.25, 0.75]]), mu0, mu1, 0.0)
        decomp = barycentric_project(coupling, mu0, mu1, 0.0)
        assert np.allclose(decomp.transport_map, [[0.05, 0.3]])

    def test_threshold_marks_poorly_covered_mass(self):
        mu0 = DiscreteMeasure([[0.0, 0.0]], [1.0])
        mu1 = DiscreteMeasure([[0.1, 0.0], [0.0, 0.1]], [1.0, 1.0])
        coupling = Coupling.from_weights(np.array([[0.9, 0.2]]), mu0, mu1, 0.0)

        strict = barycentric_project(coupling, mu0, mu1, 0.0)
        loose = barycentric_project(coupling, mu0, mu1, 0.5)

        assert strict.mu1_perp.masses.tolist() == [0.0, 0.0]
        # coverage 0.2 with threshold 0.5 marks 1 - 0.2/0.5 of the mass singular
        assert loose.mu1_perp.masses == pytest.approx([0.0, 0.6])
        assert loose.u1[1] == pytest.approx(0.4 / 0.2)

    def test_uncovered_target_is_singular(self):
        mu0 = DiscreteMeasure([[0.0, 0.0], [3.0, 0.0]], [1.0, 1.0])
        mu1 = DiscreteMeasure([[0.1, 0.0], [0.0, 3.0]], [1.0, 2.0])
        coupling = Coupling.from_weights(np.array([[0.9, 0.0], [0.0, 0.0]]), mu0, mu1, 0.0)
        decomp = barycentric_project(coupling, mu0, mu1, 0.0)
        assert decomp.mu0_perp.masses.tolist() == [0.0, 1.0]
        assert decomp.mu1_perp.masses.tolist() == [0.0, 2.0]
        assert decomp.transported.tolist() == [True, False]

    @pytest.mark.parametrize("threshold", [-0.1, 1.5])
    def test_invalid_threshold(self, threshold):
        mu0, mu1, coupling = diagonal_pair()
        with pytest.raises(DecompositionError):
            barycentric_project(coupling, mu0, mu1, threshold)

    def test_shape_mismatch(self):
        mu0, mu1, _ = diagonal_pair()
        with pytest.raises(DecompositionError):
            barycentric_project(Coupling.from_weights(np.ones((1, 2)), DiscreteMeasure([[0.0, 0.0]], [1.0]), mu1, 0.0), mu0, mu1)


class TestLogExp:

    def test_exp_inverts_log_for_map_couplings(self):
        mu0, mu1, coupling = diagonal_pair()
        tf = hk_log(mu0, mu1, barycentric_project(coupling, mu0, mu1, 0.0))
        recovered = hk_exp(mu0, tf)
        assert np.allclose(recovered.points, mu1.points)
        assert np.allclose(recovered.masses, mu1.masses)

    def test_log_of_reference_is_zero(self):
        points = np.array([[0.0, 0.0], [1.0, 0.0]])
        mu0 = DiscreteMeasure(points, [0.3, 0.7])
        coupling = Coupling.from_weights(np.diag([0.3, 0.7]), mu0, mu0, 0.0)
        tf = hk_log(mu0, mu0, barycentric_project(coupling, mu0, mu0, 0.0))
        assert np.allclose(tf.v0, 0.0)
        assert np.allclose(tf.alpha0, 0.0)

    def test_log_formula(self):
        mu0, mu1, coupling = diagonal_pair()
        tf = hk_log(mu0, mu1, barycentric_project(coupling, mu0, mu1, 0.0))
        ratio = math.sqrt(2.0)
        assert tf.v0[0] == pytest.approx(ratio * math.sin(0.5) * np.array([0.6, 0.8]))
        assert tf.alpha0[0] == pytest.approx(2 * (ratio * math.cos(0.5) - 1))

    @pytest.mark.parametrize("tau", [0.25, 0.5, 0.75])
    def test_scaled_log_traces_geodesic(self, tau):
        mu0 = DiscreteMeasure([[0.0, 0.0]], [1.0])
        mu1 = DiscreteMeasure([[0.3, 0.4]], [2.0])
        coupling = Coupling.from_weights(np.array([[1.2]]), mu0, mu1, 0.0)
        tf = hk_log(mu0, mu1, barycentric_project(coupling, mu0, mu1, 0.0))

        point = hk_exp(mu0, tf.scaled(tau))
        expected = dirac_geodesic([0.0, 0.0], 1.0, [0.3, 0.4], 2.0, tau)

        assert point.masses[0] == pytest.approx(expected.mass)
        assert np.allclose(point.points[0], expected.position)

    def test_untransported_mass_vanishes(self):
        mu0 = DiscreteMeasure([[0.0, 0.0], [3.0, 0.0]], [1.0, 1.0])
        mu1 = DiscreteMeasure([[0.1, 0.0], [0.0, 3.0]], [1.0, 2.0])
        coupling = Coupling.from_weights(np.array([[0.9, 0.0], [0.0, 0.0]]), mu0, mu1, 0.0)
        tf = hk_log(mu0, mu1, barycentric_project(coupling, mu0, mu1, 0.0))

        assert tf.alpha0[1] == -2.0
        assert tf.singular_mass == pytest.approx(2.0)

        recovered = hk_exp(mu0, tf)
        assert recovered.total_mass == pytest.approx(3.0)
        assert not np.any(np.all(recovered.points == [3.0, 0.0], axis=1))

    def test_exp_domain(self):
        mu0 = DiscreteMeasure([[0.0, 0.0]], [1.0])
        with pytest.raises(ExpDomainError):
            hk_exp(mu0, TangentField(mu0.points, [[0.0, 0.0]], [-2.5]))

    def test_field_must_live_on_reference(self):
        mu0 = DiscreteMeasure([[0.0, 0.0]], [1.0])
        with pytest.raises(TangentError):
            hk_exp(mu0, TangentField([[1.0, 0.0]], [[0.0, 0.0]], [0.0]))

    def test_log_needs_positive_reference(self):
        mu0 = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [1.0, 0.0])
        coupling = Coupling.from_weights(np.array([[1.0], [0.0]]), mu0, mu0.compact(), 0.0)
        with pytest.raises(TangentError):
            hk_log(mu0, mu0.compact(), barycentric_project(coupling, mu0, mu0.compact(), 0.0))

    def test_log_on_solved_coupling(self, rng, fast_cfg):
        mu0, mu1 = grid_pair(rng, side=4)
        coupling = solve_hk(mu0, mu1, fast_cfg)
        tf = hk_log(mu0, mu1, barycentric_project(coupling, mu0, mu1, 0.5))
        assert np.all(np.isfinite(tf.v0))
        assert np.all(tf.alpha0 >= -2.0)
        assert np.all(np.linalg.norm(tf.v0, axis=1) < 0.5)


class TestInnerProduct:

    @pytest.fixture
    def fields(self, rng):
        mu0 = DiscreteMeasure(rng.uniform(size=(6, 2)), rng.uniform(0.2, 1.0, 6))
        tf1 = TangentField(mu0.points, rng.normal(size=(6, 2)), rng.uniform(-2, 1, 6))
        tf2 = TangentField(mu0.points, rng.normal(size=(6, 2)), rng.uniform(-2, 1, 6))
        return mu0, tf1, tf2

    def test_norm_matches_distance_to_zero(self, fields):
        mu0, tf1, _ = fields
        zero = TangentField.zero(mu0)
        assert hk_lin_dist(mu0, tf1, zero) ** 2 == pytest.approx(hk_inner(mu0, tf1, tf1))

    def test_polarization(self, fields):
        mu0, tf1, tf2 = fields
        dist_sq = hk_lin_dist(mu0, tf1, tf2) ** 2
        expected = hk_inner(mu0, tf1, tf1) + hk_inner(mu0, tf2, tf2) - 2 * hk_inner(mu0, tf1, tf2)
        assert dist_sq == pytest.approx(expected)

    def test_singular_parts_pair_through_square_roots(self):
        mu0 = DiscreteMeasure([[0.0, 0.0]], [1.0])
        perp1 = DiscreteMeasure([[2.0, 0.0], [3.0, 0.0]], [4.0, 1.0])
        perp2 = DiscreteMeasure([[2.0, 0.0]], [1.0])
        tf1 = TangentField(mu0.points, [[0.0, 0.0]], [0.0], perp1)
        tf2 = TangentField(mu0.points, [[0.0, 0.0]], [0.0], perp2)

        assert hk_inner(mu0, tf1, tf2) == pytest.approx(2.0)
        assert hk_lin_dist(mu0, tf1, tf2) ** 2 == pytest.approx(1.0 + 1.0)
        assert hk_lin_dist(mu0, tf1, TangentField.zero(mu0)) ** 2 == pytest.approx(5.0)


class TestEmbedding:

    def test_euclidean_geometry_matches_tangent_metric(self, rng):
        mu0 = DiscreteMeasure(rng.uniform(size=(5, 2)), rng.uniform(0.2, 1.0, 5))
        tf1 = TangentField(mu0.points, rng.normal(size=(5, 2)), rng.uniform(-2, 1, 5))
        tf2 = TangentField(mu0.points, rng.normal(size=(5, 2)), rng.uniform(-2, 1, 5))
        e1, e2 = hk_embedding_vector(mu0, tf1), hk_embedding_vector(mu0, tf2)

        assert e1.shape == (15,)
        assert float(e1 @ e2) == pytest.approx(hk_inner(mu0, tf1, tf2))
        assert float(np.linalg.norm(e1 - e2)) == pytest.approx(hk_lin_dist(mu0, tf1, tf2))

    def test_channel_major_layout(self):
        mu0 = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [4.0, 1.0])
        tf = TangentField(mu0.points, [[1.0, 2.0], [3.0, 4.0]], [0.5, -1.0])
        assert hk_embedding_vector(mu0, tf).tolist() == [2.0, 3.0, 4.0, 4.0, 0.5, -0.5]

    def test_vector_back_to_field(self, rng):
        mu0 = DiscreteMeasure(rng.uniform(size=(4, 2)), rng.uniform(0.2, 1.0, 4))
        tf = TangentField(mu0.points, rng.normal(size=(4, 2)), rng.uniform(-2, 1, 4))
        back = tangent_from_vector(mu0, hk_embedding_vector(mu0, tf), 'hk')
        assert np.allclose(back.v0, tf.v0)
        assert np.allclose(back.alpha0, tf.alpha0)

    def test_vector_length_checked(self):
        mu0 = DiscreteMeasure([[0.0, 0.0]], [1.0])
        with pytest.raises(TangentError):
            tangent_from_vector(mu0, np.zeros(2), 'hk')

    def test_save_tangent_field(self, tmp_path):
        mu0 = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5])
        tf = TangentField(mu0.points, [[0.1, 0.0], [0.0, 0.2]], [0.0, -1.0], DiscreteMeasure([[5.0, 5.0]], [0.25]))
        path = save_tangent_field(tf, mu0, str(tmp_path / "field.csv"), str(tmp_path / "perp.csv"))

        lines = open(path).read().splitlines()
        assert lines[0] == "x,y,mass,vx,vy,alpha"
        assert lines[2] == "1,0,0.5,0,0.20000000000000001,-1"
        assert (tmp_path / "perp.csv").read_text().splitlines()[1] == "5,5,0.25"


class TestW2Tangent:

    def test_log_exp(self):
        mu0, _, _ = diagonal_pair()
        mu1 = DiscreteMeasure(mu0.points + [0.3, 0.4], mu0.masses)
        coupling = Coupling.from_weights(np.diag(mu0.masses), mu0, mu1, 0.0)
        tf = w2_log(mu0, mu1, coupling)
        assert np.allclose(tf.v0, [[0.3, 0.4], [0.3, 0.4]])
        assert np.allclose(w2_exp(mu0, tf).points, mu1.points)

    def test_lin_dist_and_embedding(self):
        mu0 = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [0.25, 0.75])
        tf1 = W2TangentField(mu0.points, [[1.0, 0.0], [0.0, 0.0]])
        tf2 = W2TangentField(mu0.points, [[0.0, 0.0], [0.0, 2.0]])
        assert w2_lin_dist(mu0, tf1, tf2) == pytest.approx(math.sqrt(0.25 + 0.75 * 4))
        diff = w2_embedding_vector(mu0, tf1) - w2_embedding_vector(mu0, tf2)
        assert float(np.linalg.norm(diff)) == pytest.approx(w2_lin_dist(mu0, tf1, tf2))

    def test_w2_lin_dist_is_norm_of_difference(self, rng):
        mu0 = DiscreteMeasure(rng.uniform(size=(5, 2)), rng.uniform(0.2, 1.0, 5))
        tf1 = W2TangentField(mu0.points, rng.normal(size=(5, 2)))
        tf2 = W2TangentField(mu0.points, rng.normal(size=(5, 2)))
        expected = w2_inner(mu0, tf1, tf1) + w2_inner(mu0, tf2, tf2) - 2 * w2_inner(mu0, tf1, tf2)
        assert w2_lin_dist(mu0, tf1, tf2) ** 2 == pytest.approx(expected)


def solved_log(mu0, mu1, cfg):
    coupling = solve_hk(mu0, mu1, cfg)
    decomp = barycentric_project(coupling, mu0, mu1, 0.0)
    return coupling, decomp, hk_log(mu0, mu1, decomp)


class TestMapRegime:

    @pytest.mark.parametrize("seed", range(30))
    def test_log_norm_matches_squared_distance(self, fast_cfg, seed):
        mu0, mu1 = map_regime_pair(np.random.default_rng(seed))
        coupling, _, tf = solved_log(mu0, mu1, fast_cfg)
        hk_sq = coupling.objective_value
        assert tf.singular_mass == 0.0
        assert abs(hk_inner(mu0, tf, tf) - hk_sq) <= 2e-2 * hk_sq

    @pytest.mark.parametrize("seed", range(30))
    def test_exp_recovers_target(self, fast_cfg, seed):
        mu0, mu1 = map_regime_pair(np.random.default_rng(seed))
        coupling, _, tf = solved_log(mu0, mu1, fast_cfg)
        hk = math.sqrt(coupling.objective_value)
        error = math.sqrt(max(solve_hk(hk_exp(mu0, tf), mu1, fast_cfg).objective_value, 0.0))
        assert error <= 0.05 * hk + 2e-2

    @pytest.mark.parametrize("seed", range(10))
    def test_log_scales_along_geodesic(self, fast_cfg, seed):
        mu0, mu1 = map_regime_pair(np.random.default_rng(seed))
        coupling, decomp, tf = solved_log(mu0, mu1, fast_cfg)
        hk = math.sqrt(coupling.objective_value)

        for tau in (0.25, 0.5, 0.75):
            point = interpolate_hk(coupling, decomp, tau)
            _, _, tf_tau = solved_log(mu0, point, fast_cfg)
            assert abs(math.sqrt(hk_inner(mu0, tf_tau, tf_tau)) - tau * hk) <= 0.05 * tau * hk
            assert hk_lin_dist(mu0, tf_tau, tf.scaled(tau)) <= 0.05 * tau * hk

    def test_embedding_distances_match_tangent_metric(self, fast_cfg):
        rng = np.random.default_rng(7)
        mu0, _ = map_regime_pair(rng)
        fields = []
        for _ in range(4):
            base, moved = map_regime_pair(rng)
            target = DiscreteMeasure(moved.points, mu0.masses * moved.masses / base.masses)
            fields.append(solved_log(mu0, target, fast_cfg)[2])
        rows = np.array([hk_embedding_vector(mu0, tf) for tf in fields])

        for i, j in itertools.combinations(range(len(fields)), 2):
            assert abs(float(np.linalg.norm(rows[i] - rows[j])) - hk_lin_dist(mu0, fields[i], fields[j])) <= 1e-9
            assert abs(float(rows[i] @ rows[j]) - hk_inner(mu0, fields[i], fields[j])) <= 1e-9


class TestRowMassBound:

    def test_solved_plans_respect_bound(self, rng, fast_cfg):
        mu0, mu1 = grid_pair(rng, side=4)
        coupling = solve_hk(mu0, mu1, fast_cfg)
        bound = np.sqrt(mu0.masses * mu1.total_mass)
        assert np.all(coupling.weights.sum(axis=1) <= (1 + ROW_MASS_SLACK) * bound)
        barycentric_project(coupling, mu0, mu1, 0.0)

    def test_oversized_row_rejected(self):
        mu0 = DiscreteMeasure([[0.0, 0.0], [1.0, 0.0]], [0.25, 1.0])
        mu1 = DiscreteMeasure([[0.1, 0.0], [1.1, 0.0]], [1.0, 1.0])
        # row 0 may carry at most sqrt(0.25 * 2)
        coupling = Coupling.from_weights(np.array([[0.9, 0.0], [0.0, 1.0]]), mu0, mu1, 0.0)
        with pytest.raises(DecompositionError, match="reference point 0"):
            barycentric_project(coupling, mu0, mu1, 0.0)

    def test_row_at_bound_accepted(self):
        mu0 = DiscreteMeasure([[0.0, 0.0]], [0.5])
        mu1 = DiscreteMeasure([[0.1, 0.0]], [2.0])
        coupling = Coupling.from_weights(np.array([[1.0]]), mu0, mu1, 0.0)
        assert barycentric_project(coupling, mu0, mu1, 0.0).sigma.total_mass == pytest.approx(1.0)
