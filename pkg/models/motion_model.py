"""
Odometry motion model P(l | a, l').

An odometry reading is executed as a rotation followed by a translation.
Both are disturbed by zero-centered Gaussians whose tails are cut off at
``cutoff`` standard deviations; their spread grows with the length (and,
optionally, the turn) of the motion. Composing several noisy atomic steps
bends the resulting density into the familiar banana shape.

The kernel is computed by deterministic quadrature: each atomic step
multiplies the set of weighted continuous end poses by the quadrature nodes
of both error terms. Only at the very end are end poses deposited onto
integer (dx, dy, dlayer) offsets, split linearly between neighbouring
offsets so sub-cell motion is not rounded away.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import ndtr
from scipy.stats import truncnorm

from config import (
    DEFAULT_MAX_ATOMIC_ROT,
    DEFAULT_MAX_ATOMIC_TRANS,
    DEFAULT_NOISE_CUTOFF,
    DEFAULT_ROT_SIGMA_PER_METER,
    DEFAULT_ROT_SIGMA_PER_RADIAN,
    DEFAULT_TRANS_SIGMA_PER_METER,
)
from errors import EmptyKernelError
from world.grid_map import TWO_PI

logger = logging.getLogger(__name__)

# Lattice used to merge end poses once a kernel grows past MERGE_CAP per layer
SUBDIVISION = 4
MERGE_CAP = 512


# ============================================================================
# READINGS & NOISE
# ============================================================================


@dataclass(frozen=True)
class OdometryReading:
    """Rotate by delta_rot, then drive delta_trans (signed) along the new heading."""

    delta_trans: float
    delta_rot: float

    def is_zero(self) -> bool:
        return self.delta_trans == 0.0 and self.delta_rot == 0.0


def _wrap_pi(angle: float) -> float:
    """Wrap into (-pi, pi]."""
    wrapped = math.remainder(angle, TWO_PI)
    return math.pi if wrapped == -math.pi else wrapped


def compose_readings(readings: Sequence[OdometryReading]) -> list[OdometryReading]:
    """Collapse accumulated odometry into at most two readings with the same net displacement.

    The result rotates toward the end point, drives there and rotates into
    the final heading: [(d, phi1), (0, phi2)]. Backward motion keeps a
    negative distance instead of turning around.
    """
    readings = [r for r in readings if not r.is_zero()]
    if len(readings) <= 1:
        return readings

    x = y = heading = 0.0
    for reading in readings:
        heading += reading.delta_rot
        x += reading.delta_trans * math.cos(heading)
        y += reading.delta_trans * math.sin(heading)

    distance = math.hypot(x, y)
    if distance < 1e-12:
        final = _wrap_pi(heading)
        return [OdometryReading(0.0, final)] if final != 0.0 else []

    first = math.atan2(y, x)
    if abs(first) > math.pi / 2:
        first = _wrap_pi(first - math.pi)
        distance = -distance
    composed = [OdometryReading(distance, first)]
    second = _wrap_pi(heading - first)
    if second != 0.0:
        composed.append(OdometryReading(0.0, second))
    return composed


class MotionNoise(BaseModel):
    """Noise law of the odometry motion model."""

    model_config = ConfigDict(frozen=True)

    trans_sigma_per_meter: float = Field(DEFAULT_TRANS_SIGMA_PER_METER, ge=0)
    rot_sigma_per_meter: float = Field(DEFAULT_ROT_SIGMA_PER_METER, ge=0)
    rot_sigma_per_radian: float = Field(DEFAULT_ROT_SIGMA_PER_RADIAN, ge=0)
    cutoff: float = Field(DEFAULT_NOISE_CUTOFF, gt=0, description="Tail cutoff in standard deviations")
    max_atomic_trans: float = Field(DEFAULT_MAX_ATOMIC_TRANS, gt=0)
    max_atomic_rot: float = Field(DEFAULT_MAX_ATOMIC_ROT, gt=0)
    nodes_per_cell: int = Field(3, ge=1, description="Quadrature nodes per cell of displacement")
    max_half_nodes: int = Field(4, ge=0, description="Quadrature nodes on each side of zero, at most")
    prune_weight: float = Field(0.0, ge=0, description="Kernel entries lighter than this are dropped")

    def sigmas(self, step: OdometryReading) -> tuple[float, float]:
        """(translation sigma, rotation sigma) of one atomic step."""
        trans = abs(step.delta_trans)
        return (
            self.trans_sigma_per_meter * trans,
            self.rot_sigma_per_meter * trans + self.rot_sigma_per_radian * abs(step.delta_rot),
        )

    @classmethod
    def noiseless(cls) -> "MotionNoise":
        return cls(trans_sigma_per_meter=0.0, rot_sigma_per_meter=0.0, rot_sigma_per_radian=0.0)


def atomic_steps(reading: OdometryReading, noise: MotionNoise) -> list[OdometryReading]:
    """Split a reading into pure rotations then pure translations below the atomic maxima."""
    steps = []
    if reading.delta_rot != 0.0:
        count = max(1, math.ceil(abs(reading.delta_rot) / noise.max_atomic_rot))
        steps += [OdometryReading(0.0, reading.delta_rot / count)] * count
    if reading.delta_trans != 0.0:
        count = max(1, math.ceil(abs(reading.delta_trans) / noise.max_atomic_trans))
        steps += [OdometryReading(reading.delta_trans / count, 0.0)] * count
    return steps


def sample_step(
    noise: MotionNoise, step: OdometryReading, rng: np.random.Generator
) -> tuple[float, float]:
    """Draw the executed (translation, rotation) of an atomic step under the noise law."""
    sigma_t, sigma_r = noise.sigmas(step)
    errors = []
    for sigma in (sigma_t, sigma_r):
        if sigma == 0.0:
            errors.append(0.0)
        else:
            errors.append(float(truncnorm.rvs(-noise.cutoff, noise.cutoff, scale=sigma, random_state=rng)))
    return step.delta_trans + errors[0], step.delta_rot + errors[1]


def quadrature_nodes(
    sigma: float, cutoff: float, spacing: float, max_half: int
) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of a truncated zero-mean Gaussian.

    [-cutoff*sigma, cutoff*sigma] is split into 2h+1 equal intervals no wider
    than ``spacing`` (h capped at ``max_half``); each node carries the
    Gaussian mass of its interval. Nodes and weights are exactly mirror
    symmetric.
    """
    if sigma == 0.0:
        return np.zeros(1), np.ones(1)
    half_width = cutoff * sigma
    half = max(0, math.ceil((2.0 * half_width / spacing - 1.0) / 2.0))
    half = min(half, max_half)
    width = 2.0 * half_width / (2 * half + 1)
    k = np.arange(1, half + 1, dtype=np.float64)
    positive = k * width
    upper = ndtr((k + 0.5) * width / sigma)
    lower = ndtr((k - 0.5) * width / sigma)
    side = upper - lower
    center = np.array([2.0 * ndtr(0.5 * width / sigma) - 1.0])
    nodes = np.concatenate([-positive[::-1], [0.0], positive])
    weights = np.concatenate([side[::-1], center, side])
    return nodes, weights / weights.sum()


# ============================================================================
# KERNEL
# ============================================================================


@dataclass(frozen=True, eq=False)
class MotionKernel:
    """Per start layer, integer (dx, dy, dlayer) offsets and their weights."""

    offsets: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    resolution: float

    @property
    def theta_bins(self) -> int:
        return len(self.offsets)

    def support(self, layer: int) -> dict[tuple[int, int, int], float]:
        return {
            tuple(int(v) for v in offset): float(weight)
            for offset, weight in zip(self.offsets[layer], self.weights[layer])
        }

    def target_layers(self, layer: int) -> set[int]:
        return {int(t) for t in (layer + self.offsets[layer][:, 2]) % self.theta_bins}

    @classmethod
    def identity(cls, resolution: float, theta_bins: int) -> "MotionKernel":
        offsets = tuple(np.zeros((1, 3), dtype=np.int64) for _ in range(theta_bins))
        weights = tuple(np.ones(1) for _ in range(theta_bins))
        return cls(offsets, weights, resolution)


def _merge(layer, x, y, rot, w, xy_quantum, rot_quantum):
    """Pool end poses sharing a (layer, x, y, rot) lattice cell; rot snaps to the lattice."""
    keys = np.stack(
        [layer, np.rint(x / xy_quantum), np.rint(y / xy_quantum), np.rint(rot / rot_quantum)], axis=1
    ).astype(np.int64)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    total = np.bincount(inverse, weights=w)
    return (
        unique[:, 0],
        np.bincount(inverse, weights=w * x) / total,
        np.bincount(inverse, weights=w * y) / total,
        unique[:, 3] * rot_quantum,
        total,
    )


def _deposit(values: np.ndarray, weights: np.ndarray):
    """Split continuous offsets (in cells) linearly onto their two neighbouring integers."""
    low = np.floor(values)
    frac = values - low
    return (
        np.concatenate([low, low + 1.0]).astype(np.int64),
        np.concatenate([weights * (1.0 - frac), weights * frac]),
    )


def motion_kernel(
    noise: MotionNoise,
    readings: OdometryReading | Sequence[OdometryReading],
    resolution: float,
    theta_bins: int,
) -> MotionKernel:
    """Discrete P(l | a, l') for every start orientation layer.

    Raises:
        EmptyKernelError: prune_weight removed every kernel entry.
    """
    if isinstance(readings, OdometryReading):
        readings = [readings]
    steps = [step for reading in readings for step in atomic_steps(reading, noise)]
    if not steps:
        return MotionKernel.identity(resolution, theta_bins)

    step_theta = TWO_PI / theta_bins
    longest = max(abs(step.delta_trans) for step in steps)
    rot_spacing = min(step_theta, resolution / longest) if longest > 0 else step_theta
    xy_quantum = resolution / SUBDIVISION
    rot_quantum = rot_spacing / SUBDIVISION

    layer = np.arange(theta_bins, dtype=np.int64)
    x = np.zeros(theta_bins)
    y = np.zeros(theta_bins)
    rot = np.zeros(theta_bins)
    w = np.ones(theta_bins)

    for step in steps:
        sigma_t, sigma_r = noise.sigmas(step)
        trans_nodes, trans_weights = quadrature_nodes(
            sigma_t, noise.cutoff, resolution / noise.nodes_per_cell, noise.max_half_nodes
        )
        rot_nodes, rot_weights = quadrature_nodes(
            sigma_r, noise.cutoff, rot_spacing / noise.nodes_per_cell, noise.max_half_nodes
        )
        new_rot = rot[:, None] + step.delta_rot + rot_nodes[None, :]
        heading = layer[:, None] * step_theta + new_rot
        distance = step.delta_trans + trans_nodes
        shape = (x.size, rot_nodes.size, trans_nodes.size)

        x = (x[:, None, None] + distance[None, None, :] * np.cos(heading)[:, :, None]).ravel()
        y = (y[:, None, None] + distance[None, None, :] * np.sin(heading)[:, :, None]).ravel()
        w = (w[:, None, None] * rot_weights[None, :, None] * trans_weights[None, None, :]).ravel()
        rot = np.broadcast_to(new_rot[:, :, None], shape).ravel()
        layer = np.broadcast_to(layer[:, None, None], shape).ravel()

        if x.size > MERGE_CAP * theta_bins:
            layer, x, y, rot, w = _merge(layer, x, y, rot, w, xy_quantum, rot_quantum)

    # Deposit each end pose onto the 8 surrounding integer offsets
    dx, wx = _deposit(x / resolution, w)
    dy, wxy = _deposit(np.tile(y / resolution, 2), wx)
    dl, wxyl = _deposit(np.tile(rot / step_theta, 4), wxy)
    dx = np.tile(dx, 4)
    dy = np.tile(dy, 2)
    layers = np.tile(layer, 8)

    keys = np.stack([layers, dx, dy, dl], axis=1)
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    weights = np.bincount(inverse.ravel(), weights=wxyl)
    keep = weights > noise.prune_weight
    unique, weights = unique[keep], weights[keep]

    offsets, layer_weights = [], []
    for j in range(theta_bins):
        rows = unique[:, 0] == j
        if not rows.any():
            raise EmptyKernelError(
                f"every kernel entry of layer {j} was pruned; resolution and noise do not match"
            )
        offsets.append(unique[rows, 1:].copy())
        layer_weights.append(weights[rows] / weights[rows].sum())

    kernel = MotionKernel(tuple(offsets), tuple(layer_weights), resolution)
    logger.debug(
        "Motion kernel for %d atomic steps: %d entries in layer 0",
        len(steps), offsets[0].shape[0],
    )
    return kernel


# ============================================================================
# PREDICTION
# ============================================================================


def _shift_add(target: np.ndarray, source: np.ndarray, dx: int, dy: int, weight: float, wrap: bool) -> None:
    if wrap:
        target += weight * np.roll(source, (dx, dy), axis=(0, 1))
        return
    nx, ny = source.shape
    if abs(dx) >= nx or abs(dy) >= ny:
        return
    target[max(dx, 0):nx + min(dx, 0), max(dy, 0):ny + min(dy, 0)] += (
        weight * source[max(-dx, 0):nx - max(dx, 0), max(-dy, 0):ny - max(dy, 0)]
    )


def convolve(
    values: np.ndarray,
    kernel: MotionKernel,
    layers: Sequence[int] | None = None,
    wrap: bool = False,
) -> np.ndarray:
    """Push the mass of the given source layers through the kernel; returns the unnormalized result.

    Mass shifted past the grid edge is dropped unless ``wrap`` makes the
    grid a torus.
    """
    theta_bins = values.shape[2]
    if kernel.theta_bins != theta_bins:
        raise ValueError(f"kernel has {kernel.theta_bins} layers, belief has {theta_bins}")
    out = np.zeros_like(values)
    for j in range(theta_bins) if layers is None else layers:
        source = values[:, :, j]
        if not source.any():
            continue
        for (dx, dy, dl), weight in zip(kernel.offsets[j], kernel.weights[j]):
            _shift_add(out[:, :, (j + dl) % theta_bins], source, int(dx), int(dy), weight, wrap)
    return out


def predict(belief, reading, noise: MotionNoise, wrap: bool = False):
    """Apply the motion model to a belief in place and return it.

    ``reading`` is one OdometryReading or a sequence of them. Off-map mass
    is renormalized away; the lost fraction is available as
    ``belief.lost_fraction``.
    """
    kernel = motion_kernel(noise, reading, belief.geometry.resolution, belief.geometry.theta_bins)
    belief.apply_motion(kernel, reading, noise, wrap=wrap)
    return belief
