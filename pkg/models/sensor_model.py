"""
Beam model for proximity sensors.

A measurement d_i given the expected distance o_l is explained by two
competing reflections, evaluated bin by bin from the sensor outward:
- the mapped obstacle, detected with probability c_d, with Gaussian noise
  (P_m, known_obstacle_density)
- an unmapped obstacle, hit with probability c_r per range bin
  (P_u, unknown_obstacle_mass)

Whatever mass is left after bin n-1 is the probability of a max-range
reading. The model is fitted to (expected, measured) pairs by coordinate
descent on the negative log-likelihood.

Discretization: bins 0..n-2 cover [k*delta_d, (k+1)*delta_d) and bin n-1 means
"at or beyond max_range", so max_range = (n - 1) * delta_d.
"""

import csv
import logging
from dataclasses import dataclass
from typing import IO, Iterable

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import minimize_scalar
from scipy.special import ndtr

from config import (
    DEFAULT_C_D,
    DEFAULT_C_R,
    DEFAULT_MAX_RANGE,
    DEFAULT_RANGE_BINS,
    DEFAULT_SIGMA_BINS,
    MIN_FIT_PAIRS,
)
from errors import DegenerateDataError, InsufficientDataError, SensorModelError

logger = logging.getLogger(__name__)

# Probabilities are floored here before taking logs in the fit objective
LOG_FLOOR = 1e-300

FIT_MAX_SWEEPS = 50
FIT_TOLERANCE = 1e-10

# ============================================================================
# PARAMETERS & DISCRETIZATION
# ============================================================================


class BeamModelParams(BaseModel):
    """Parameters of the discretized beam model."""

    model_config = ConfigDict(frozen=True)

    sigma: float = Field(..., gt=0, description="Std. dev. of the known-obstacle Gaussian (m)")
    c_r: float = Field(..., ge=0, le=1, description="Unknown-obstacle reflection probability per bin")
    c_d: float = Field(..., ge=0, le=1, description="Probability of detecting the mapped obstacle")
    n: int = Field(..., ge=2, description="Number of range bins")
    delta_d: float = Field(..., gt=0, description="Bin width (m)")

    @property
    def max_range(self) -> float:
        return (self.n - 1) * self.delta_d

    @classmethod
    def from_range(
        cls,
        max_range: float = DEFAULT_MAX_RANGE,
        n: int = DEFAULT_RANGE_BINS,
        sigma: float | None = None,
        c_r: float = DEFAULT_C_R,
        c_d: float = DEFAULT_C_D,
    ) -> "BeamModelParams":
        """Build params from a maximal range; sigma defaults to two bins."""
        if n < 2:
            raise ValueError(f"n must be >= 2, got {n}")
        delta_d = max_range / (n - 1)
        return cls(
            sigma=sigma if sigma is not None else DEFAULT_SIGMA_BINS * delta_d,
            c_r=c_r,
            c_d=c_d,
            n=n,
            delta_d=delta_d,
        )


def bins_of(params: BeamModelParams, distances) -> np.ndarray:
    """Range bin (0-based) of each distance; anything >= max_range lands in bin n-1."""
    distances = np.asarray(distances, dtype=np.float64)
    bins = np.floor(distances / params.delta_d).astype(np.int64)
    bins = np.clip(bins, 0, params.n - 2)
    return np.where(distances >= params.max_range, params.n - 1, bins)


def bin_of(params: BeamModelParams, distance: float) -> int:
    return int(bins_of(params, distance))


def bin_centers(params: BeamModelParams) -> np.ndarray:
    """Representative distance of each bin; the max-range bin maps to max_range."""
    centers = (np.arange(params.n, dtype=np.float64) + 0.5) * params.delta_d
    centers[-1] = params.max_range
    return centers


def bin_center(params: BeamModelParams, k: int) -> float:
    return float(bin_centers(params)[k])


# ============================================================================
# MODEL COMPONENTS
# ============================================================================


@dataclass(frozen=True)
class BeamDistribution:
    """P(d_i | o_l) over the n range bins."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or np.any(probs < 0) or np.any(probs > 1):
            raise ValueError("probs must be a vector of probabilities")
        object.__setattr__(self, "probs", probs)


def _check_expected(params: BeamModelParams, distances: np.ndarray) -> None:
    bad = (distances < 0) | (distances > params.max_range * (1 + 1e-12))
    if np.any(bad):
        raise SensorModelError(
            f"expected distance outside [0, {params.max_range}]: {distances[bad][:3].tolist()}"
        )


def unknown_obstacle_mass(params: BeamModelParams) -> np.ndarray:
    """Geometric law of the first unknown-obstacle reflection: c_r (1 - c_r)^k."""
    return params.c_r * (1.0 - params.c_r) ** np.arange(params.n, dtype=np.float64)


def known_obstacle_matrix(params: BeamModelParams, distances) -> np.ndarray:
    """Rows of P_m(d_i | o_l) for each expected distance, shape (len(distances), n).

    Each bin holds the Gaussian mass over its interval and the mass below
    zero is dropped by renormalization. The last bin stands for readings of
    at least max_range, so it takes everything from max_range upward: a
    mapped obstacle detected past the range reads as max_range. Mixing never
    visits that bin; the final bin of likelihood_matrix is the residual.
    """
    distances = np.atleast_1d(np.asarray(distances, dtype=np.float64))
    _check_expected(params, distances)
    edges = np.arange(params.n + 1, dtype=np.float64) * params.delta_d
    z = (edges[None, :] - distances[:, None]) / params.sigma
    cdf = ndtr(z)
    cdf[:, -1] = 1.0
    masses = np.diff(cdf, axis=1)
    above_zero = 1.0 - cdf[:, :1]
    return masses / above_zero


def known_obstacle_density(params: BeamModelParams, o_l: float) -> np.ndarray:
    """P_m(d_i | l): the discretized Gaussian centred on the expected distance."""
    return known_obstacle_matrix(params, [o_l])[0]


def likelihood_matrix(params: BeamModelParams, distances) -> np.ndarray:
    """P(d_i | o_l) rows for many expected distances at once.

    Evaluated incrementally from the first bin: a bin fires if the beam was
    not stopped by an unknown obstacle and the mapped obstacle answers there,
    or if nothing answered yet and an unknown obstacle reflects. A bin never
    takes more than the mass still unassigned; the final bin receives the rest.
    """
    p_m = known_obstacle_matrix(params, distances)
    p_u = unknown_obstacle_mass(params)
    probs = np.zeros_like(p_m)
    cum_u = 0.0
    cum_p = np.zeros(p_m.shape[0])
    for k in range(params.n - 1):
        a = (1.0 - cum_u) * params.c_d * p_m[:, k]
        b = (1.0 - cum_p) * params.c_r
        p = 1.0 - (1.0 - a) * (1.0 - b)
        p = np.clip(p, 0.0, np.maximum(1.0 - cum_p, 0.0))
        probs[:, k] = p
        cum_u += p_u[k]
        cum_p = cum_p + p
    probs[:, -1] = np.maximum(1.0 - cum_p, 0.0)
    return probs


def beam_distribution(params: BeamModelParams, o_l: float) -> BeamDistribution:
    """P(d_i | l) for a single expected distance."""
    return BeamDistribution(likelihood_matrix(params, [o_l])[0])


def short_matrix(params: BeamModelParams, distances) -> np.ndarray:
    """P_short(d_i | o_l) = sum_{j > i} P_m(d_j | o_l), one row per expected distance."""
    p_m = known_obstacle_matrix(params, distances)
    tail = np.cumsum(p_m[:, ::-1], axis=1)[:, ::-1]
    short = np.zeros_like(p_m)
    short[:, :-1] = tail[:, 1:]
    return short


def sample_measurements(
    params: BeamModelParams,
    expected,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw measured distances (bin representatives) for each expected distance.

    Expected distances are quantized to their bin centers, as the lookup
    table does.
    """
    expected = np.atleast_1d(np.asarray(expected, dtype=np.float64))
    _check_expected(params, expected)
    rows = likelihood_matrix(params, bin_centers(params))
    cdf = np.cumsum(rows, axis=1)
    k = bins_of(params, expected)
    u = rng.random(expected.shape[0])
    measured_bins = np.minimum((cdf[k] < u[:, None]).sum(axis=1), params.n - 1)
    return bin_centers(params)[measured_bins]


# ============================================================================
# PARAMETER FITTING
# ============================================================================


class SensorFit(BaseModel):
    """Result of fitting the beam model to (expected, measured) pairs."""

    params: BeamModelParams
    objective: float = Field(..., description="Negative log-likelihood of the data")
    sweeps: int = Field(..., description="Coordinate-descent sweeps performed")
    pairs: int = Field(..., description="Number of pairs used")


def read_fit_pairs(stream: IO[str]) -> np.ndarray:
    """Parse "expected_m,measured_m" lines; a non-numeric first line is a header."""
    pairs = []
    for line_number, row in enumerate(csv.reader(stream), start=1):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 2:
            raise SensorModelError(f"line {line_number}: expected 2 columns, got {len(row)}")
        try:
            pairs.append((float(row[0]), float(row[1])))
        except ValueError:
            if line_number == 1:
                continue
            raise SensorModelError(f"line {line_number}: unparsable values {row}") from None
    return np.array(pairs, dtype=np.float64).reshape(-1, 2)


def fit_parameters(
    pairs: Iterable[tuple[float, float]] | np.ndarray,
    max_range: float = DEFAULT_MAX_RANGE,
    n: int = DEFAULT_RANGE_BINS,
    min_pairs: int = MIN_FIT_PAIRS,
) -> SensorFit:
    """Fit (sigma, c_r, c_d) to observed (expected o_l, measured d) pairs.

    The pairs are binned into an expected-by-measured histogram and the
    negative log-likelihood of that histogram under likelihood_matrix is
    minimized one coordinate at a time with a bounded scalar search (bounds
    included as candidates), until a sweep stops improving.

    Args:
        pairs: Array-like of shape (N, 2) in meters.
        max_range: Sensor maximal range; sets the discretization with n.
        n: Number of range bins.
        min_pairs: Minimum accepted sample size.

    Returns:
        SensorFit with the fitted params and the achieved objective.

    Raises:
        InsufficientDataError: fewer than min_pairs pairs.
        DegenerateDataError: all pairs identical.
        SensorModelError: values outside [0, max_range].
    """
    data = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    if data.shape[0] < min_pairs:
        raise InsufficientDataError(f"need at least {min_pairs} pairs, got {data.shape[0]}")
    if np.all(data == data[0]):
        raise DegenerateDataError("all pairs are identical; nothing to fit")
    template = BeamModelParams.from_range(max_range, n)
    if np.any(data < 0) or np.any(data > max_range * (1 + 1e-9)):
        raise SensorModelError(f"pair values must lie within [0, {max_range}]")

    counts = np.zeros((n, n))
    np.add.at(counts, (bins_of(template, data[:, 0]), bins_of(template, data[:, 1])), 1.0)
    rows = np.nonzero(counts.sum(axis=1))[0]
    counts = counts[rows]
    centers = bin_centers(template)[rows]

    def objective(values: dict[str, float]) -> float:
        params = template.model_copy(update=values)
        probs = likelihood_matrix(params, centers)
        return float(-(counts * np.log(np.maximum(probs, LOG_FLOOR))).sum())

    bounds = {
        "sigma": (template.delta_d / 4.0, max_range / 2.0),
        "c_r": (0.0, 1.0),
        "c_d": (0.0, 1.0),
    }
    current = {"sigma": template.sigma, "c_r": template.c_r, "c_d": template.c_d}
    best = objective(current)

    sweeps = 0
    for sweeps in range(1, FIT_MAX_SWEEPS + 1):
        previous = best
        for name, (low, high) in bounds.items():
            result = minimize_scalar(
                lambda value: objective({**current, name: value}),
                bounds=(low, high),
                method="bounded",
                options={"xatol": 1e-7 * (high - low)},
            )
            for candidate in (float(result.x), low, high):
                value = objective({**current, name: candidate})
                if value < best:
                    best = value
                    current[name] = candidate
        if previous - best <= FIT_TOLERANCE * max(1.0, abs(best)):
            break

    fitted = template.model_copy(update=current)
    logger.info(
        "Fitted beam model on %d pairs: sigma=%.4f c_r=%.4f c_d=%.4f (nll=%.2f, %d sweeps)",
        data.shape[0], fitted.sigma, fitted.c_r, fitted.c_d, best, sweeps,
    )
    return SensorFit(params=fitted, objective=best, sweeps=sweeps, pairs=int(data.shape[0]))
