import io
import math

import numpy as np
import pytest

from estimation.belief import GridGeometry, init_gaussian, init_uniform
from estimation.filters import (
    FilterDecision,
    FilterRecord,
    belief_p_short,
    distance_filter_accept,
    entropy_filter_accept,
    write_filter_log,
)
from world.grid_map import Beam, Pose

GEOMETRY = GridGeometry(10, 10, 4, 0.5)


def _bump(center: tuple[int, int, int]) -> np.ndarray:
    ix, iy, layer = np.meshgrid(*(np.arange(n) for n in GEOMETRY.dims), indexing="ij")
    d2 = (ix - center[0]) ** 2 + (iy - center[1]) ** 2 + (layer - center[2]) ** 2
    return 0.05 + np.exp(-d2 / 2.0)


@pytest.fixture
def confident_belief():
    belief = init_uniform(GEOMETRY, epsilon_fraction=0.0)
    for _ in range(2):
        belief.apply_perception(_bump((2, 2, 1)), 0.1)
    return belief


class TestEntropyFilter:
    def test_confirming_reading_is_accepted(self, confident_belief):
        decision = entropy_filter_accept(confident_belief, _bump((2, 2, 1)), 0.1)
        assert decision.accept
        assert decision.score < 0

    def test_contradicting_reading_is_rejected(self, confident_belief):
        before = confident_belief.values.copy()

        decision = entropy_filter_accept(confident_belief, _bump((8, 7, 3)), 0.1)

        assert not decision.accept
        assert decision.score > 0
        np.testing.assert_array_equal(confident_belief.values, before)

    def test_impossible_reading_is_rejected(self, confident_belief):
        decision = entropy_filter_accept(confident_belief, np.zeros(GEOMETRY.dims), 0.1)
        assert not decision.accept
        assert decision.score == math.inf
        assert decision.reason.startswith("underflow")

    def test_self_confirming_readings_are_always_accepted(self, rng):
        # a likelihood proportional to the belief squares it, which never adds entropy
        for _ in range(20):
            belief = init_uniform(GEOMETRY, epsilon_fraction=0.0)
            for _ in range(int(rng.integers(1, 4))):
                belief.apply_perception(rng.random(GEOMETRY.dims) ** 3 + 1e-3, 0.5)
            likelihood = belief.values / belief.values.max()

            decision = entropy_filter_accept(belief, likelihood, float(likelihood.mean()))

            assert decision.accept
            assert decision.score <= 0


class TestDistanceFilter:
    @pytest.fixture
    def belief(self, box_grid):
        geometry = GridGeometry.from_grid(box_grid, 8)
        return init_gaussian(geometry, Pose(0.75, 0.75, 0.0), 0.0, 0.0, box_grid.free_mask, epsilon_fraction=0.0)

    def test_reading_much_shorter_than_the_wall_is_rejected(self, belief, box_table, params):
        decision = distance_filter_accept(belief, box_table, Beam(0.0, params.max_range), 0.5, gamma=0.99)
        assert not decision.accept
        assert decision.score > 0.99

    def test_reading_at_the_wall_is_accepted(self, belief, box_table, params):
        decision = distance_filter_accept(belief, box_table, Beam(0.0, params.max_range), 2.75, gamma=0.99)
        assert decision.accept
        assert decision.score == pytest.approx(0.4, abs=0.1)

    def test_score_grows_as_readings_shorten(self, belief, box_grid, box_table, params):
        uniform = init_uniform(GridGeometry.from_grid(box_grid, 8), box_grid.free_mask, epsilon_fraction=0.0)
        readings = np.linspace(params.max_range, 0.0, 60)
        for b in (belief, uniform):
            for bearing in (0.0, math.pi / 2, 2.5):
                beam = Beam(bearing, params.max_range)
                scores = [distance_filter_accept(b, box_table, beam, d).score for d in readings]
                assert scores[0] == 0.0
                assert np.all(np.diff(scores) >= -1e-15)

    def test_passive_layers_only_count_on_request(self, box_grid, box_table, params):
        geometry = GridGeometry.from_grid(box_grid, 8)
        belief = init_uniform(geometry, box_grid.free_mask, epsilon_fraction=0.01)
        likelihood = np.full(geometry.dims, 0.01)
        likelihood[:, :, 0] = 1.0
        for _ in range(3):
            belief.apply_perception(likelihood, float(likelihood.mean()))
        assert belief.passive_layers

        source = box_table.beam_likelihood(Beam(0.0, params.max_range), 0.3)

        assert belief_p_short(belief, source, include_passive=True) > belief_p_short(belief, source)


def test_decision_log():
    records = [
        FilterRecord(0.25, 0.0, 1.5, FilterDecision(True, -0.1)),
        FilterRecord(0.25, math.pi, 0.4, FilterDecision(False, 0.995)),
    ]
    stream = io.StringIO()

    write_filter_log(records, stream)

    lines = stream.getvalue().splitlines()
    assert lines[0] == "t,bearing,measured,decision,score"
    assert lines[1].split(",")[3] == "accept"
    assert lines[2].split(",")[3] == "reject"
    assert float(lines[2].split(",")[4]) == 0.995
