import io
import itertools
import math

import numpy as np
import pytest
from scipy.integrate import simpson

from errors import DegenerateDataError, InsufficientDataError, SensorModelError
from models.sensor_model import (
    BeamModelParams,
    beam_distribution,
    bin_centers,
    bins_of,
    fit_parameters,
    known_obstacle_density,
    known_obstacle_matrix,
    likelihood_matrix,
    read_fit_pairs,
    sample_measurements,
    short_matrix,
    unknown_obstacle_mass,
)

LATTICE = [0.0, 0.1, 0.5, 1.0]


def _phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _gaussian_bins(params: BeamModelParams, o_l: float) -> list[float]:
    """Per-bin Gaussian mass, last bin open-ended, mass below zero dropped."""
    edges = [k * params.delta_d for k in range(params.n)]
    cdf = [_phi((e - o_l) / params.sigma) for e in edges] + [1.0]
    above = 1.0 - cdf[0]
    return [(cdf[k + 1] - cdf[k]) / above for k in range(params.n)]


def _event_tree(params: BeamModelParams, o_l: float, capped: bool = True) -> list[float]:
    """Enumerate (a1 and a2) or (b1 and b2) over the truth table of the four events, bin by bin."""
    p_m = _gaussian_bins(params, o_l)
    probs = []
    seen_u = seen = 0.0
    for k in range(params.n - 1):
        p_u = params.c_r * (1.0 - seen_u)
        events = (1.0 - seen_u, params.c_d * p_m[k], 1.0 - seen, params.c_r)
        p = 0.0
        for truth in itertools.product((True, False), repeat=4):
            if (truth[0] and truth[1]) or (truth[2] and truth[3]):
                p += math.prod(e if t else 1.0 - e for e, t in zip(events, truth))
        if capped:
            p = min(max(p, 0.0), max(1.0 - seen, 0.0))
        probs.append(p)
        seen_u += p_u
        seen += p
    probs.append(max(1.0 - seen, 0.0) if capped else 1.0 - seen)
    return probs


def _lattice():
    for n in range(2, 9):
        for sigma_bins, c_r, c_d in itertools.product((0.5, 2.0), LATTICE, LATTICE):
            yield BeamModelParams(sigma=sigma_bins, c_r=c_r, c_d=c_d, n=n, delta_d=1.0)


class TestDiscretization:
    def test_from_range_defaults_sigma_to_two_bins(self):
        params = BeamModelParams.from_range(max_range=5.0, n=51)
        assert params.delta_d == pytest.approx(0.1)
        assert params.sigma == pytest.approx(0.2)
        assert params.max_range == pytest.approx(5.0)

    def test_bins_of_maps_max_range_to_last_bin(self, params):
        d = params.delta_d
        bins = bins_of(params, [0.0, 1.5 * d, params.max_range - 1e-9, params.max_range, 99.0])
        assert bins.tolist() == [0, 1, params.n - 2, params.n - 1, params.n - 1]

    def test_last_center_is_max_range(self, params):
        centers = bin_centers(params)
        assert centers[-1] == params.max_range
        assert centers[0] == pytest.approx(params.delta_d / 2)


class TestLikelihood:
    def test_rows_are_distributions(self, params):
        expected = np.linspace(0.0, params.max_range, 1000)

        rows = likelihood_matrix(params, expected)

        assert np.all(rows >= 0)
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)

    def test_perfect_sensor_reduces_to_gaussian(self):
        params = BeamModelParams.from_range(max_range=4.0, n=32, c_r=0.0, c_d=1.0)
        expected = bin_centers(params)

        np.testing.assert_allclose(likelihood_matrix(params, expected), known_obstacle_matrix(params, expected), atol=1e-12)

    def test_blind_sensor_sees_only_unknown_obstacles(self):
        params = BeamModelParams.from_range(max_range=4.0, n=16, c_r=0.1, c_d=0.0)

        row = beam_distribution(params, 2.0).probs

        geometric = unknown_obstacle_mass(params)
        np.testing.assert_allclose(row[:-1], geometric[:-1])
        assert row[-1] == pytest.approx(0.9 ** 15)

    def test_no_reflection_at_all_reads_max_range(self):
        params = BeamModelParams.from_range(max_range=4.0, n=16, c_r=0.0, c_d=0.0)
        row = beam_distribution(params, 1.0).probs
        assert row[-1] == pytest.approx(1.0)

    def test_peak_sits_at_expected_bin(self, params):
        row = beam_distribution(params, 2.0).probs
        assert int(np.argmax(row)) == int(bins_of(params, 2.0))

    def test_unknown_obstacles_shift_mass_toward_the_sensor(self, params):
        clean = beam_distribution(params.model_copy(update={"c_r": 0.0}), 3.0).probs
        cluttered = beam_distribution(params.model_copy(update={"c_r": 0.1}), 3.0).probs
        near = int(bins_of(params, 1.0))
        assert cluttered[:near].sum() > clean[:near].sum()

    def test_expected_outside_range_is_rejected(self, params):
        with pytest.raises(SensorModelError):
            likelihood_matrix(params, [params.max_range + 1.0])

    def test_short_rows_are_upper_tails(self, params):
        expected = bin_centers(params)[[3, 10, 25]]
        p_m = known_obstacle_matrix(params, expected)

        short = short_matrix(params, expected)

        assert np.all(short[:, -1] == 0)
        np.testing.assert_allclose(short[:, 4], p_m[:, 5:].sum(axis=1))
        assert np.all(np.diff(short, axis=1) <= 1e-15)

    def test_incremental_rows_match_the_event_tree(self):
        for params in _lattice():
            centers = bin_centers(params)
            rows = likelihood_matrix(params, centers)
            for row, o_l in zip(rows, centers):
                np.testing.assert_allclose(row, _event_tree(params, o_l), rtol=0, atol=1e-12)

    def test_worked_six_bin_example(self):
        params = BeamModelParams(sigma=1.0, c_r=0.1, c_d=0.8, n=6, delta_d=1.0)

        row = beam_distribution(params, 2.5).probs

        np.testing.assert_allclose(row, _event_tree(params, 2.5), rtol=0, atol=1e-12)
        assert row.sum() == pytest.approx(1.0, abs=1e-12)
        assert int(np.argmax(row)) == 2

    def test_no_bin_takes_more_than_the_unassigned_mass(self):
        # a sure detection right after a likely one would push the final bin below zero
        params = BeamModelParams(sigma=0.5, c_r=0.1, c_d=1.0, n=3, delta_d=1.0)
        assert _event_tree(params, 0.5, capped=False)[-1] < 0.0

        row = beam_distribution(params, 0.5).probs

        np.testing.assert_allclose(row, _event_tree(params, 0.5), rtol=0, atol=1e-12)
        assert row[1] == pytest.approx(1.0 - row[0], abs=1e-15)
        assert row[2] == pytest.approx(0.0, abs=1e-15)

    def test_final_bin_shrinks_as_unknown_obstacles_grow(self):
        for n in range(2, 9):
            for sigma_bins, c_d in itertools.product((0.5, 2.0), LATTICE):
                finals = []
                for c_r in LATTICE:
                    params = BeamModelParams(sigma=sigma_bins, c_r=c_r, c_d=c_d, n=n, delta_d=1.0)
                    finals.append(likelihood_matrix(params, bin_centers(params))[:, -1])
                assert np.all(np.diff(finals, axis=0) <= 1e-12)

    def test_detections_past_max_range_read_as_max_range(self, params):
        row = known_obstacle_density(params, params.max_range)

        tail = 1.0 - _phi(0.0)
        above = 1.0 - _phi(-params.max_range / params.sigma)
        assert row.sum() == pytest.approx(1.0, abs=1e-12)
        assert row[-1] == pytest.approx(tail / above, abs=1e-12)
        np.testing.assert_allclose(row, _gaussian_bins(params, params.max_range), rtol=0, atol=1e-12)

    def test_open_space_favours_the_max_range_bin(self, params):
        row = beam_distribution(params, params.max_range).probs

        assert int(np.argmax(row)) == params.n - 1
        assert row[-1] > 0.2

    def test_known_obstacle_density_matches_quadrature(self):
        params = BeamModelParams(sigma=0.3, c_r=0.01, c_d=0.9, n=121, delta_d=0.05)

        row = known_obstacle_density(params, 2.3)

        quadrature = []
        for k in range(params.n - 1):
            x = np.linspace(k * params.delta_d, (k + 1) * params.delta_d, 101)
            density = np.exp(-0.5 * ((x - 2.3) / 0.3) ** 2) / (0.3 * math.sqrt(2.0 * math.pi))
            quadrature.append(simpson(density, x=x))
        assert np.max(np.abs(row[:-1] - quadrature)) < 1e-8
        assert row[-1] < 1e-8


class TestSampling:
    def test_frequencies_follow_the_model(self, params, rng):
        expected = np.full(40000, 2.0)

        measured = sample_measurements(params, expected, rng)

        observed = np.bincount(bins_of(params, measured), minlength=params.n) / measured.size
        model = likelihood_matrix(params, [bin_centers(params)[bins_of(params, 2.0)]])[0]
        np.testing.assert_allclose(observed, model, atol=0.01)


class TestFit:
    TRUE = BeamModelParams.from_range(max_range=5.0, n=64, sigma=0.15, c_r=0.02, c_d=0.85)

    def _pairs(self, count: int, rng: np.random.Generator) -> np.ndarray:
        expected = rng.uniform(0.2, 4.8, count)
        measured = sample_measurements(self.TRUE, expected, rng)
        return np.column_stack([expected, measured])

    def test_recovers_generating_parameters(self, rng):
        fit = fit_parameters(self._pairs(100_000, rng), max_range=5.0, n=64)

        assert fit.pairs == 100_000
        assert fit.params.sigma == pytest.approx(0.15, rel=0.1)
        assert fit.params.c_r == pytest.approx(0.02, rel=0.1)
        assert fit.params.c_d == pytest.approx(0.85, rel=0.1)

    def test_fit_beats_defaults(self, rng):
        pairs = self._pairs(5000, rng)
        fit = fit_parameters(pairs, max_range=5.0, n=64)

        default = BeamModelParams.from_range(max_range=5.0, n=64)
        bins = bins_of(default, pairs)
        rows = likelihood_matrix(default, bin_centers(default)[bins[:, 0]])
        default_nll = -np.log(rows[np.arange(len(pairs)), bins[:, 1]]).sum()
        assert fit.objective < default_nll

    def test_clean_data_pins_reflections_to_zero(self, rng):
        clean = self.TRUE.model_copy(update={"c_r": 0.0})
        expected = rng.uniform(0.2, 4.8, 20000)
        pairs = np.column_stack([expected, sample_measurements(clean, expected, rng)])

        fit = fit_parameters(pairs, max_range=5.0, n=64)

        assert fit.params.c_r < 0.005

    def test_max_range_data_means_nothing_detected(self, rng):
        expected = rng.uniform(0.2, 4.8, 2000)
        pairs = np.column_stack([expected, np.full(2000, 5.0)])

        fit = fit_parameters(pairs, max_range=5.0, n=64)

        assert fit.params.c_d < 0.05

    def test_too_few_pairs(self, rng):
        with pytest.raises(InsufficientDataError):
            fit_parameters(self._pairs(50, rng), max_range=5.0, n=64, min_pairs=100)

    def test_identical_pairs(self):
        with pytest.raises(DegenerateDataError):
            fit_parameters(np.full((20, 2), 1.0), max_range=5.0, n=64, min_pairs=10)

    def test_values_beyond_max_range(self, rng):
        pairs = self._pairs(100, rng)
        pairs[0, 1] = 7.0
        with pytest.raises(SensorModelError):
            fit_parameters(pairs, max_range=5.0, n=64, min_pairs=10)


class TestReadFitPairs:
    def test_header_and_blank_lines(self):
        pairs = read_fit_pairs(io.StringIO("expected_m,measured_m\n1.0,0.9\n\n2.5,5.0\n"))
        assert pairs.tolist() == [[1.0, 0.9], [2.5, 5.0]]

    def test_wrong_column_count(self):
        with pytest.raises(SensorModelError, match="line 2"):
            read_fit_pairs(io.StringIO("1.0,0.9\n1.0,2.0,3.0\n"))

    def test_garbage_after_first_line(self):
        with pytest.raises(SensorModelError, match="line 2"):
            read_fit_pairs(io.StringIO("1.0,0.9\nabc,1.0\n"))
