import math

import numpy as np
import pytest
from scipy.stats import truncnorm

from estimation.belief import GridGeometry, init_gaussian, init_uniform
from models.motion_model import (
    MotionKernel,
    MotionNoise,
    OdometryReading,
    atomic_steps,
    compose_readings,
    convolve,
    motion_kernel,
    predict,
    quadrature_nodes,
)
from world.grid_map import Pose


class TestComposeReadings:
    def test_turn_then_drive_collapses_to_two_readings(self):
        composed = compose_readings([
            OdometryReading(1.0, 0.0),
            OdometryReading(0.0, math.pi / 2),
            OdometryReading(1.0, 0.0),
        ])

        assert len(composed) == 2
        assert composed[0].delta_trans == pytest.approx(math.sqrt(2))
        assert composed[0].delta_rot == pytest.approx(math.pi / 4)
        assert composed[1] == OdometryReading(0.0, pytest.approx(math.pi / 4))

    def test_backward_motion_keeps_negative_distance(self):
        composed = compose_readings([OdometryReading(-1.0, 0.0), OdometryReading(-1.0, 0.0)])
        assert composed == [OdometryReading(pytest.approx(-2.0), pytest.approx(0.0))]

    def test_zero_and_full_turns_vanish(self):
        assert compose_readings([OdometryReading(0.0, 0.0)]) == []
        assert compose_readings([OdometryReading(0.0, math.pi), OdometryReading(0.0, math.pi)]) == []

    def test_single_reading_is_kept(self):
        reading = OdometryReading(0.3, 0.1)
        assert compose_readings([reading]) == [reading]


def test_atomic_steps_split_long_readings():
    noise = MotionNoise(max_atomic_trans=0.5, max_atomic_rot=math.pi / 4)

    steps = atomic_steps(OdometryReading(1.2, math.pi / 2), noise)

    assert [s.delta_rot for s in steps[:2]] == [pytest.approx(math.pi / 4)] * 2
    assert [s.delta_trans for s in steps[2:]] == [pytest.approx(0.4)] * 3


class TestQuadrature:
    def test_mirror_symmetric_and_normalized(self):
        nodes, weights = quadrature_nodes(sigma=1.0, cutoff=3.0, spacing=0.5, max_half=4)

        assert nodes.size == 9
        np.testing.assert_array_equal(nodes, -nodes[::-1])
        np.testing.assert_array_equal(weights, weights[::-1])
        assert weights.sum() == pytest.approx(1.0)
        assert nodes[-1] < 3.0

    def test_zero_sigma_is_a_single_node(self):
        nodes, weights = quadrature_nodes(0.0, 3.0, 0.1, 4)
        assert nodes.tolist() == [0.0]
        assert weights.tolist() == [1.0]


class TestKernel:
    def test_noiseless_straight_move(self):
        kernel = motion_kernel(MotionNoise.noiseless(), OdometryReading(1.0, 0.0), resolution=0.5, theta_bins=4)

        assert kernel.support(0) == {(2, 0, 0): 1.0}
        offsets, weights = kernel.offsets[1], kernel.weights[1]
        assert tuple(offsets[np.argmax(weights)]) == (0, 2, 0)

    def test_layers_are_normalized(self):
        kernel = motion_kernel(MotionNoise(), [OdometryReading(0.8, 0.3)], resolution=0.2, theta_bins=12)
        for weights in kernel.weights:
            assert weights.sum() == pytest.approx(1.0)

    def test_zero_reading_is_identity(self):
        kernel = motion_kernel(MotionNoise(), OdometryReading(0.0, 0.0), resolution=0.2, theta_bins=6)
        assert all(kernel.support(j) == {(0, 0, 0): 1.0} for j in range(6))

    def test_banana_matches_monte_carlo(self, rng):
        noise = MotionNoise(trans_sigma_per_meter=0.2, rot_sigma_per_meter=0.2, max_atomic_trans=0.5)
        reading = OdometryReading(2.0, 0.0)
        resolution = 0.1

        kernel = motion_kernel(noise, reading, resolution, theta_bins=36)
        offsets, weights = kernel.offsets[0], kernel.weights[0]
        kernel_x = weights @ offsets[:, 0] * resolution
        kernel_y_std = math.sqrt(weights @ (offsets[:, 1] * resolution) ** 2)

        # sampled executions: four 0.5 m steps, each turning by its rotation error first
        samples = 50000
        x = np.zeros(samples)
        y = np.zeros(samples)
        heading = np.zeros(samples)
        for step in atomic_steps(reading, noise):
            sigma_t, sigma_r = noise.sigmas(step)
            heading += truncnorm.rvs(-3, 3, scale=sigma_r, size=samples, random_state=rng)
            distance = step.delta_trans + truncnorm.rvs(-3, 3, scale=sigma_t, size=samples, random_state=rng)
            x += distance * np.cos(heading)
            y += distance * np.sin(heading)

        # the arc bends back: the mean lands short of the commanded 2 m
        assert kernel_x < 1.99
        assert kernel_x == pytest.approx(x.mean(), abs=0.01)
        assert kernel_y_std == pytest.approx(y.std(), rel=0.1)
        assert weights @ offsets[:, 1] == pytest.approx(0.0, abs=1e-6)


class TestConvolve:
    SHIFT = MotionKernel((np.array([[1, 0, 0]]),), (np.ones(1),), 1.0)

    def test_identity_kernel(self, rng):
        values = rng.random((4, 3, 2))
        np.testing.assert_array_equal(convolve(values, MotionKernel.identity(1.0, 2)), values)

    def test_mass_past_the_edge_is_dropped(self):
        values = np.zeros((3, 1, 1))
        values[0, 0, 0] = 0.25
        values[2, 0, 0] = 0.75

        out = convolve(values, self.SHIFT)

        assert out[:, 0, 0].tolist() == [0.0, 0.25, 0.0]

    def test_wrap_turns_the_grid_into_a_torus(self):
        values = np.zeros((3, 1, 1))
        values[2, 0, 0] = 1.0
        assert convolve(values, self.SHIFT, wrap=True)[:, 0, 0].tolist() == [1.0, 0.0, 0.0]

    def test_layer_count_must_match(self):
        with pytest.raises(ValueError):
            convolve(np.zeros((2, 2, 3)), self.SHIFT)


class TestPredict:
    def test_noiseless_move_shifts_the_peak(self):
        geometry = GridGeometry(10, 10, 4, 0.5)
        belief = init_gaussian(geometry, Pose(1.25, 1.25, 0.0), 0.0, 0.0, epsilon_fraction=0.0)

        predict(belief, OdometryReading(1.0, 0.0), MotionNoise.noiseless())

        estimate = belief.max_posterior()
        assert estimate.state == (4, 2, 0)
        assert estimate.probability == pytest.approx(1.0)

    def test_mass_pushed_off_the_map_is_reported(self):
        geometry = GridGeometry(10, 10, 4, 0.5)
        belief = init_uniform(geometry, epsilon_fraction=0.0)

        predict(belief, OdometryReading(0.5, 0.0), MotionNoise.noiseless())

        assert belief.lost_fraction == pytest.approx(0.1, abs=1e-6)
        assert belief.mass() == pytest.approx(1.0)

    def test_noise_spreads_the_belief(self):
        geometry = GridGeometry(20, 20, 8, 0.2)
        belief = init_gaussian(geometry, Pose(1.1, 2.1, 0.0), 0.0, 0.0, epsilon_fraction=0.0)
        before = belief.entropy()

        predict(belief, OdometryReading(1.0, 0.0), MotionNoise())

        assert belief.entropy() > before
        assert belief.max_posterior().state[:2] in ((9, 10), (10, 10), (11, 10))

    def test_torus_conserves_mass_and_never_sharpens(self, rng):
        geometry = GridGeometry(12, 12, 8, 0.25)
        belief = init_uniform(geometry, epsilon_fraction=0.0)
        belief.apply_perception(rng.random(geometry.dims) ** 4 + 1e-4, 0.5)
        readings = [OdometryReading(0.4, 0.3), OdometryReading(0.0, -0.5), OdometryReading(0.7, 0.0)]

        for reading in readings:
            before = belief.entropy()
            predict(belief, reading, MotionNoise(), wrap=True)

            assert belief.lost_fraction == pytest.approx(0.0, abs=1e-9)
            assert belief.mass() == pytest.approx(1.0, abs=1e-9)
            assert belief.entropy() >= before - 1e-9

    def test_matches_exhaustive_convolution(self):
        geometry = GridGeometry(20, 20, 8, 0.25)
        noise = MotionNoise()
        belief = init_gaussian(geometry, Pose(2.625, 2.625, 0.0), 0.0, 0.0, epsilon_fraction=0.0)
        expected = belief.values.copy()
        path = [OdometryReading(0.5, 0.0), OdometryReading(0.0, math.pi / 4), OdometryReading(0.75, 0.2)]

        for reading in path:
            predict(belief, reading, noise)

            kernel = motion_kernel(noise, reading, geometry.resolution, geometry.theta_bins)
            moved = np.zeros_like(expected)
            for x, y, j in zip(*np.nonzero(expected)):
                for (dx, dy, dl), weight in zip(kernel.offsets[j], kernel.weights[j]):
                    tx, ty = x + dx, y + dy
                    if 0 <= tx < 20 and 0 <= ty < 20:
                        moved[tx, ty, (j + dl) % 8] += weight * expected[x, y, j]
            expected = moved / moved.sum()

            np.testing.assert_allclose(belief.values, expected, rtol=0, atol=1e-12)
