"""
Position belief Bel(L) over a regular (x, y, theta) grid.

Values are stored as an (nx, ny, theta_bins) float64 array. Each orientation
layer is one partition for the selective update: while a layer holds a
cell above epsilon it is *active* and updated cell by cell. Once every cell
of a layer drops to epsilon or below the layer turns *passive*: its values
are frozen, perception updates only fold their normalizer into the layer's
beta, and motion is queued as pending odometry. When p_max * beta rises above
epsilon the pending motion is replayed and the layer is restored as
stored values * beta. A passive layer whose beta sinks below BETA_FLOOR
holds no representable mass and is dropped.

With epsilon = 0 no layer ever turns passive and updates reduce to the
plain multiply-and-normalize arithmetic.
"""

import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import IO, Callable, Sequence

import numpy as np
from scipy.special import ndtr, xlogy

from config import DEFAULT_EPSILON_FRACTION, UNDERFLOW_MASS
from errors import BeliefUnderflowError, NoFreeSpaceError, PoseOutOfBoundsError
from models.motion_model import (
    MotionKernel,
    MotionNoise,
    OdometryReading,
    compose_readings,
    convolve,
    motion_kernel,
)
from models.sensor_table import theta_layer
from world.grid_map import TWO_PI, OccupancyGrid, Pose

logger = logging.getLogger(__name__)

LikelihoodSource = Callable[[int], np.ndarray] | np.ndarray

# Lost-mass fraction above which a prediction is reported as a warning
LOST_MASS_WARNING = 1e-3

# A passive layer whose beta falls below this carries no representable mass and is dropped
BETA_FLOOR = 1e-150


# ============================================================================
# GEOMETRY
# ============================================================================


@dataclass(frozen=True)
class GridGeometry:
    """Dimensions and placement of the belief grid."""

    nx: int
    ny: int
    theta_bins: int
    resolution: float
    origin_x: float = 0.0
    origin_y: float = 0.0

    def __post_init__(self):
        if min(self.nx, self.ny, self.theta_bins) < 1:
            raise ValueError(f"grid dimensions must be >= 1, got {self.dims}")
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.theta_bins)

    @property
    def theta_step(self) -> float:
        return TWO_PI / self.theta_bins

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.theta_bins

    @classmethod
    def from_grid(cls, grid: OccupancyGrid, theta_bins: int) -> "GridGeometry":
        return cls(grid.width_cells, grid.height_cells, theta_bins, grid.resolution, grid.origin_x, grid.origin_y)

    def cell_pose(self, ix: int, iy: int, layer: int) -> Pose:
        return Pose(
            self.origin_x + (ix + 0.5) * self.resolution,
            self.origin_y + (iy + 0.5) * self.resolution,
            layer * self.theta_step,
        )

    def state_of(self, pose: Pose) -> tuple[int, int, int]:
        gx = (pose.x - self.origin_x) / self.resolution
        gy = (pose.y - self.origin_y) / self.resolution
        if not (0.0 <= gx < self.nx and 0.0 <= gy < self.ny):
            raise PoseOutOfBoundsError(f"pose ({pose.x:.3f}, {pose.y:.3f}) lies outside the grid")
        return min(int(gx), self.nx - 1), min(int(gy), self.ny - 1), theta_layer(pose.theta, self.theta_bins)


def state_count(width_m: float, height_m: float, cell_size: float, angular_resolution: float) -> int:
    """Number of grid states for a map; angular_resolution in radians."""
    return round(width_m / cell_size) * round(height_m / cell_size) * round(TWO_PI / angular_resolution)


# ============================================================================
# PARTITIONS
# ============================================================================


@dataclass
class PartitionState:
    """Bookkeeping of one orientation layer."""

    id: int
    active: bool = True
    beta: float = 1.0
    p_max: float = 0.0
    pending_motion: list[OdometryReading] = field(default_factory=list)
    stored_sum: float = 0.0
    stored_vlogv: float = 0.0


@dataclass(frozen=True)
class PoseEstimate:
    pose: Pose
    probability: float
    state: tuple[int, int, int]


# ============================================================================
# BELIEF GRID
# ============================================================================


class BeliefGrid:
    """Belief over (x, y, theta) states with selective-update partitions.

    Mutating operations (perception, motion, activity changes) work in place;
    use ``copy`` for side-effect-free experiments.
    """

    def __init__(
        self,
        geometry: GridGeometry,
        values: np.ndarray,
        free_mask: np.ndarray | None = None,
        epsilon: float = 0.0,
    ):
        values = np.array(values, dtype=np.float64)
        if values.shape != geometry.dims:
            raise ValueError(f"values shape {values.shape} does not match grid {geometry.dims}")
        if np.any(values < 0):
            raise ValueError("belief values must be non-negative")
        if free_mask is None:
            free_mask = np.ones(geometry.dims[:2], dtype=bool)
        free_mask = np.asarray(free_mask, dtype=bool)
        if free_mask.shape != geometry.dims[:2]:
            raise ValueError(f"free mask shape {free_mask.shape} does not match grid {geometry.dims[:2]}")
        if epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {epsilon}")

        self.geometry = geometry
        self.values = values * free_mask[:, :, None]
        self.free_mask = free_mask
        self.epsilon = float(epsilon)
        self.partitions = [PartitionState(j) for j in range(geometry.theta_bins)]
        self.lost_fraction = 0.0
        self.noise: MotionNoise | None = None
        self._scratch = np.empty_like(self.values)

    # ------------------------------------------------------------------
    # Bookkeeping
    # ------------------------------------------------------------------

    @property
    def free_states(self) -> int:
        return int(self.free_mask.sum()) * self.geometry.theta_bins

    @property
    def active_layers(self) -> list[int]:
        return [p.id for p in self.partitions if p.active]

    @property
    def passive_layers(self) -> list[int]:
        return [p.id for p in self.partitions if not p.active]

    def copy(self) -> "BeliefGrid":
        other = BeliefGrid.__new__(BeliefGrid)
        other.geometry = self.geometry
        other.values = self.values.copy()
        other.free_mask = self.free_mask
        other.epsilon = self.epsilon
        other.partitions = [
            PartitionState(p.id, p.active, p.beta, p.p_max, list(p.pending_motion), p.stored_sum, p.stored_vlogv)
            for p in self.partitions
        ]
        other.lost_fraction = self.lost_fraction
        other.noise = self.noise
        other._scratch = np.empty_like(self.values)
        return other

    def mass(self) -> float:
        """Total effective mass: active values plus beta-scaled passive layers."""
        total = 0.0
        for p in self.partitions:
            total += float(self.values[:, :, p.id].sum()) if p.active else p.beta * p.stored_sum
        return total

    def active_mass(self) -> float:
        return sum(float(self.values[:, :, j].sum()) for j in self.active_layers)

    def active_fraction(self) -> float:
        """Fraction of free states that are above epsilon in an active layer."""
        active = self.active_layers
        count = int((self.values[:, :, active] > self.epsilon).sum()) if active else 0
        return count / self.free_states

    def effective_values(self) -> np.ndarray:
        """Cell probabilities with passive layers reconstructed as stored * beta."""
        values = self.values.copy()
        for p in self.partitions:
            if not p.active:
                values[:, :, p.id] *= p.beta
        return values

    def _normalize(self, total: float) -> None:
        for p in self.partitions:
            if p.active:
                self.values[:, :, p.id] /= total
            else:
                p.beta /= total
                if p.beta < BETA_FLOOR:
                    self._drop(p)

    def _drop(self, p: PartitionState) -> None:
        logger.debug("Dropped layer %d (beta=%.3g)", p.id, p.beta)
        self.values[:, :, p.id] = 0.0
        p.beta, p.p_max, p.pending_motion = 1.0, 0.0, []
        p.stored_sum = p.stored_vlogv = 0.0

    def _snapshot(self) -> tuple:
        partitions = [replace(p, pending_motion=list(p.pending_motion)) for p in self.partitions]
        return self.values.copy(), partitions, self.lost_fraction, self.noise

    def _restore(self, snapshot: tuple) -> None:
        self.values, self.partitions, self.lost_fraction, self.noise = snapshot

    def _refresh_stored(self, p: PartitionState) -> None:
        layer = self.values[:, :, p.id]
        p.stored_sum = float(layer.sum())
        p.stored_vlogv = float(xlogy(layer, layer).sum())
        p.p_max = float(layer.max())

    def deactivate(self, layer: int) -> None:
        p = self.partitions[layer]
        if not p.active:
            return
        p.active = False
        p.beta = 1.0
        p.pending_motion = []
        self._refresh_stored(p)
        logger.debug("Deactivated layer %d (p_max=%.3g)", layer, p.p_max)

    def reactivate(self, layer: int, wrap: bool = False) -> None:
        """Replay pending motion of a passive layer and restore its values as stored * beta."""
        p = self.partitions[layer]
        if p.active:
            return
        beta, pending = p.beta, compose_readings(p.pending_motion)
        p.active, p.beta, p.p_max, p.pending_motion = True, 1.0, 0.0, []
        p.stored_sum = p.stored_vlogv = 0.0
        logger.debug("Reactivated layer %d (beta=%.3g, %d pending readings)", layer, beta, len(pending))

        if not pending or self.noise is None:
            self.values[:, :, layer] *= beta
            return

        source = np.zeros_like(self.values)
        source[:, :, layer] = self.values[:, :, layer] * beta
        self.values[:, :, layer] = 0.0
        kernel = motion_kernel(self.noise, pending, self.geometry.resolution, self.geometry.theta_bins)
        moved = convolve(source, kernel, layers=[layer], wrap=wrap)
        moved *= self.free_mask[:, :, None]
        self._deposit(moved)
        total = self.mass()
        if not total >= UNDERFLOW_MASS:
            raise BeliefUnderflowError(f"replaying motion of layer {layer} left no belief mass")
        self._normalize(total)

    def _deposit(self, moved: np.ndarray) -> None:
        """Add effective mass; passive targets receive it in stored units (mass / beta)."""
        for p in self.partitions:
            layer = moved[:, :, p.id]
            if not layer.any():
                continue
            if p.active:
                self.values[:, :, p.id] += layer
            else:
                self.values[:, :, p.id] += layer / p.beta
                self._refresh_stored(p)

    def update_activity(self, wrap: bool = False) -> None:
        """Deactivate layers at or below epsilon, then reactivate any with p_max * beta > epsilon."""
        if self.epsilon <= 0.0:
            return
        for j in self.active_layers:
            if self.values[:, :, j].max() <= self.epsilon:
                self.deactivate(j)
        while True:
            wake = [p.id for p in self.partitions if not p.active and p.p_max * p.beta > self.epsilon]
            if not wake:
                break
            for j in wake:
                self.reactivate(j, wrap=wrap)

    # ------------------------------------------------------------------
    # Perception
    # ------------------------------------------------------------------

    def _layer_factor(self, j: int, likelihood: Callable[[int], np.ndarray], p_avg: float) -> np.ndarray:
        values = self.values[:, :, j]
        return np.where(values > self.epsilon, values * (likelihood(j) / p_avg), values)

    def apply_perception(self, likelihood: LikelihoodSource, p_avg: float) -> None:
        """Incorporate one reading; raises BeliefUnderflowError without touching the belief."""
        likelihood = _as_source(likelihood)
        if self.epsilon <= 0.0:
            posterior = self._scratch
            for j in range(self.geometry.theta_bins):
                np.multiply(self.values[:, :, j], likelihood(j), out=posterior[:, :, j])
            total = posterior.sum()
            if not total >= UNDERFLOW_MASS:
                raise BeliefUnderflowError(f"posterior mass {total:.3g} below {UNDERFLOW_MASS:g}")
            posterior /= total
            self.values, self._scratch = posterior, self.values
            return

        if not p_avg > 0:
            raise BeliefUnderflowError(f"reading has zero likelihood in every state (average {p_avg})")
        posterior = self._scratch
        total = 0.0
        for p in self.partitions:
            if p.active:
                posterior[:, :, p.id] = self._layer_factor(p.id, likelihood, p_avg)
                total += float(posterior[:, :, p.id].sum())
            else:
                posterior[:, :, p.id] = self.values[:, :, p.id]
                total += p.beta * p.stored_sum
        if not total >= UNDERFLOW_MASS:
            raise BeliefUnderflowError(f"posterior mass {total:.3g} below {UNDERFLOW_MASS:g}")
        self.values, self._scratch = posterior, self.values
        self._normalize(total)
        self.update_activity()

    def trial_entropy(self, likelihood: LikelihoodSource, p_avg: float) -> float:
        """Entropy the belief would have after apply_perception, without changing it."""
        if self.epsilon > 0.0 and not p_avg > 0:
            raise BeliefUnderflowError(f"reading has zero likelihood in every state (average {p_avg})")
        likelihood = _as_source(likelihood)
        total = 0.0
        plogp = 0.0
        for p in self.partitions:
            if self.epsilon <= 0.0:
                u = self.values[:, :, p.id] * likelihood(p.id)
            elif p.active:
                u = self._layer_factor(p.id, likelihood, p_avg)
            else:
                total += p.beta * p.stored_sum
                plogp += p.beta * p.stored_vlogv + xlogy(p.beta, p.beta) * p.stored_sum
                continue
            total += float(u.sum())
            plogp += float(xlogy(u, u).sum())
        if not total >= UNDERFLOW_MASS:
            raise BeliefUnderflowError(f"trial posterior mass {total:.3g} below {UNDERFLOW_MASS:g}")
        return math.log(total) - plogp / total

    # ------------------------------------------------------------------
    # Motion
    # ------------------------------------------------------------------

    def apply_motion(
        self,
        kernel: MotionKernel,
        readings: OdometryReading | Sequence[OdometryReading],
        noise: MotionNoise,
        wrap: bool = False,
    ) -> None:
        """Shift the belief through a motion kernel built for ``readings``.

        Passive layers that the active layers would push mass into are
        reactivated first; the remaining passive layers queue the readings.
        On BeliefUnderflowError the belief is left as it was before the call.
        """
        readings = [readings] if isinstance(readings, OdometryReading) else list(readings)
        if all(r.is_zero() for r in readings):
            self.lost_fraction = 0.0
            return
        saved = self._snapshot()
        try:
            self._predict(kernel, readings, noise, wrap)
        except BeliefUnderflowError:
            self._restore(saved)
            raise

    def _predict(self, kernel: MotionKernel, readings: list[OdometryReading], noise: MotionNoise, wrap: bool) -> None:
        self.noise = noise

        passive = set(self.passive_layers)
        if passive:
            targets = set()
            for j in self.active_layers:
                targets |= kernel.target_layers(j)
            for j in sorted(targets & passive):
                self.reactivate(j, wrap=wrap)

        active = self.active_layers
        moved = convolve(self.values, kernel, layers=active, wrap=wrap)
        moved *= self.free_mask[:, :, None]
        for j in active:
            self.values[:, :, j] = moved[:, :, j]
            moved[:, :, j] = 0.0
        self._deposit(moved)
        for j in self.passive_layers:
            self.partitions[j].pending_motion.extend(readings)

        total = self.mass()
        if not total >= UNDERFLOW_MASS:
            raise BeliefUnderflowError("all belief mass left the map during prediction")
        self.lost_fraction = max(0.0, 1.0 - total)
        if self.lost_fraction > LOST_MASS_WARNING:
            logger.warning("Prediction pushed %.2f%% of the belief off free space", 100 * self.lost_fraction)
        self._normalize(total)
        self.update_activity(wrap=wrap)

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------

    def entropy(self) -> float:
        """-sum Bel log Bel over effective values, 0 log 0 = 0."""
        plogp = 0.0
        for p in self.partitions:
            if p.active:
                layer = self.values[:, :, p.id]
                plogp += float(xlogy(layer, layer).sum())
            else:
                plogp += p.beta * p.stored_vlogv + xlogy(p.beta, p.beta) * p.stored_sum
        return -plogp

    def max_posterior(self) -> PoseEstimate:
        """Most probable state; ties go to the lowest C-order (x, y, theta) index."""
        effective = self.values if not self.passive_layers else self.effective_values()
        flat = int(np.argmax(effective))
        state = np.unravel_index(flat, effective.shape)
        ix, iy, layer = (int(v) for v in state)
        return PoseEstimate(self.geometry.cell_pose(ix, iy, layer), float(effective[ix, iy, layer]), (ix, iy, layer))

    def xy_projection(self) -> np.ndarray:
        """Per-(x, y) maximum over orientations."""
        return self.effective_values().max(axis=2)


def _as_source(likelihood: LikelihoodSource) -> Callable[[int], np.ndarray]:
    if isinstance(likelihood, np.ndarray):
        array = likelihood
        return lambda j: array[:, :, j]
    return likelihood


# ============================================================================
# CONSTRUCTION
# ============================================================================


def _epsilon(fraction: float, free_states: int) -> float:
    return fraction / free_states


def init_uniform(
    geometry: GridGeometry,
    free_mask: np.ndarray | None = None,
    epsilon_fraction: float = DEFAULT_EPSILON_FRACTION,
) -> BeliefGrid:
    """Equal mass on every free state; epsilon is a fraction of that prior value.

    Raises:
        NoFreeSpaceError: the mask holds no free cell.
    """
    if free_mask is None:
        free_mask = np.ones(geometry.dims[:2], dtype=bool)
    free_mask = np.asarray(free_mask, dtype=bool)
    free_states = int(free_mask.sum()) * geometry.theta_bins
    if free_states == 0:
        raise NoFreeSpaceError("cannot initialize a belief without free cells")
    values = np.broadcast_to(free_mask[:, :, None] / free_states, geometry.dims)
    return BeliefGrid(geometry, values, free_mask, _epsilon(epsilon_fraction, free_states))


def _axis_masses(edges: np.ndarray, mean: float, sigma: float) -> np.ndarray:
    if sigma == 0.0:
        masses = np.zeros(edges.size - 1)
        k = int(np.searchsorted(edges, mean, side="right")) - 1
        masses[min(max(k, 0), masses.size - 1)] = 1.0
        return masses
    return np.diff(ndtr((edges - mean) / sigma))


def init_gaussian(
    geometry: GridGeometry,
    mean: Pose,
    sigma_xy: float,
    sigma_theta: float,
    free_mask: np.ndarray | None = None,
    epsilon_fraction: float = DEFAULT_EPSILON_FRACTION,
) -> BeliefGrid:
    """Separable Gaussian integrated over every cell; the orientation axis wraps around.

    Raises:
        PoseOutOfBoundsError: mean outside the grid.
        NoFreeSpaceError: the Gaussian puts no mass on free space.
    """
    geometry.state_of(mean)
    if sigma_xy < 0 or sigma_theta < 0:
        raise ValueError("sigmas must be >= 0")
    if free_mask is None:
        free_mask = np.ones(geometry.dims[:2], dtype=bool)
    free_mask = np.asarray(free_mask, dtype=bool)

    res = geometry.resolution
    mx = _axis_masses(geometry.origin_x + np.arange(geometry.nx + 1) * res, mean.x, sigma_xy)
    my = _axis_masses(geometry.origin_y + np.arange(geometry.ny + 1) * res, mean.y, sigma_xy)

    step = geometry.theta_step
    if sigma_theta == 0.0:
        mt = np.zeros(geometry.theta_bins)
        mt[theta_layer(mean.theta, geometry.theta_bins)] = 1.0
    else:
        # Offsets of each layer center from the mean, folded into (-pi, pi]
        centers = np.arange(geometry.theta_bins) * step
        offsets = np.remainder(centers - mean.theta + math.pi, TWO_PI) - math.pi
        mt = np.zeros(geometry.theta_bins)
        for wrap in (-TWO_PI, 0.0, TWO_PI):
            lo = (offsets + wrap - step / 2) / sigma_theta
            hi = (offsets + wrap + step / 2) / sigma_theta
            mt += ndtr(hi) - ndtr(lo)

    values = mx[:, None, None] * my[None, :, None] * mt[None, None, :]
    values *= free_mask[:, :, None]
    total = values.sum()
    if not total > 0:
        raise NoFreeSpaceError(f"Gaussian prior at ({mean.x:.2f}, {mean.y:.2f}) puts no mass on free space")
    free_states = int(free_mask.sum()) * geometry.theta_bins
    return BeliefGrid(geometry, values / total, free_mask, _epsilon(epsilon_fraction, free_states))


# ============================================================================
# MODULE-LEVEL OPERATIONS
# ============================================================================


def apply_perception(belief: BeliefGrid, likelihood: LikelihoodSource, p_avg: float) -> BeliefGrid:
    belief.apply_perception(likelihood, p_avg)
    return belief


def entropy(belief: BeliefGrid) -> float:
    return belief.entropy()


def max_posterior_pose(belief: BeliefGrid) -> tuple[Pose, float]:
    estimate = belief.max_posterior()
    return estimate.pose, estimate.probability


# ============================================================================
# SNAPSHOTS
# ============================================================================


def write_snapshot(belief: BeliefGrid, image: IO[bytes], cells: IO[str], top_k: int = 20) -> None:
    """Dump the (x, y) max-over-theta projection as a binary PGM (darker = more likely) and the top-k states as CSV."""
    projection = belief.xy_projection()
    peak = projection.max()
    scaled = projection / peak if peak > 0 else projection
    # Image rows run from maximum y down to minimum y
    pixels = np.rint(255.0 * (1.0 - scaled.T[::-1])).astype(np.uint8)
    height, width = pixels.shape
    image.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
    image.write(pixels.tobytes())

    effective = belief.effective_values()
    flat = effective.ravel()
    order = np.lexsort((np.arange(flat.size), -flat))[:top_k]
    cells.write("rank,x,y,theta,prob\n")
    for rank, index in enumerate(order, start=1):
        ix, iy, layer = (int(v) for v in np.unravel_index(index, effective.shape))
        pose = belief.geometry.cell_pose(ix, iy, layer)
        cells.write(f"{rank},{pose.x:.4f},{pose.y:.4f},{pose.theta:.6f},{flat[index]:.9g}\n")


def snapshot_bytes(belief: BeliefGrid, top_k: int = 20) -> tuple[bytes, str]:
    image, cells = io.BytesIO(), io.StringIO()
    write_snapshot(belief, image, cells, top_k)
    return image.getvalue(), cells.getvalue()
