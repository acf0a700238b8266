"""
Measurement filters for dynamic environments.

People standing around the robot produce readings that are shorter than the
map predicts. Two per-beam tests decide whether a reading is incorporated:

- entropy filter: accept only readings that do not increase the belief's
  entropy (they confirm what the robot already believes)
- distance filter: reject readings that are, averaged over the belief,
  almost surely shorter than the mapped obstacle (P_short > gamma)

Both are pure: they never change the belief they look at.
"""

import csv
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable

from pydantic import BaseModel, ConfigDict, Field

from config import DEFAULT_GAMMA
from errors import BeliefUnderflowError
from estimation.belief import BeliefGrid, LikelihoodSource
from models.sensor_table import BeamLikelihood, SensorTable
from world.grid_map import Beam

# Floating tolerance on "entropy did not increase"
ENTROPY_TOLERANCE = 1e-12


class FilterKind(str, Enum):
    NONE = "none"
    ENTROPY = "entropy"
    DISTANCE = "distance"


class FilterConfig(BaseModel):
    """Which filter runs and its threshold."""

    model_config = ConfigDict(frozen=True)

    kind: FilterKind = FilterKind.NONE
    gamma: float = Field(DEFAULT_GAMMA, gt=0, lt=1, description="Distance filter threshold")
    include_passive: bool = Field(
        False, description="Let passive layers contribute to P_short (exact, slower)"
    )


@dataclass(frozen=True)
class FilterDecision:
    """Outcome for one beam; score is delta-H (entropy) or P_short (distance)."""

    accept: bool
    score: float
    reason: str = ""


# ============================================================================
# ENTROPY FILTER
# ============================================================================


def entropy_filter_accept(
    belief: BeliefGrid,
    likelihood: LikelihoodSource,
    p_avg: float,
    tolerance: float = ENTROPY_TOLERANCE,
) -> FilterDecision:
    """Accept iff H(L | s) - H(L) <= 0 for a trial update with this reading."""
    try:
        posterior = belief.trial_entropy(likelihood, p_avg)
    except BeliefUnderflowError as e:
        return FilterDecision(False, float("inf"), f"underflow: {e}")
    delta = posterior - belief.entropy()
    return FilterDecision(delta <= tolerance, delta)


# ============================================================================
# DISTANCE FILTER
# ============================================================================


def belief_p_short(belief: BeliefGrid, source: BeamLikelihood, include_passive: bool = False) -> float:
    """P_short(d_i) = sum_l P_short(d_i | l) Bel(l)."""
    total = 0.0
    for p in belief.partitions:
        if p.active:
            total += float((source.short(p.id) * belief.values[:, :, p.id]).sum())
        elif include_passive:
            total += p.beta * float((source.short(p.id) * belief.values[:, :, p.id]).sum())
    return total


def distance_filter_accept(
    belief: BeliefGrid,
    table: SensorTable,
    beam: Beam,
    measured: float,
    gamma: float = DEFAULT_GAMMA,
    include_passive: bool = False,
) -> FilterDecision:
    """Reject iff the belief-averaged probability that the reading is short exceeds gamma."""
    p_short = belief_p_short(belief, table.beam_likelihood(beam, measured), include_passive)
    return FilterDecision(p_short <= gamma, p_short)


# ============================================================================
# DECISION LOG
# ============================================================================


@dataclass(frozen=True)
class FilterRecord:
    timestamp: float
    bearing: float
    measured: float
    decision: FilterDecision


FILTER_LOG_HEADER = ["t", "bearing", "measured", "decision", "score"]


def write_filter_log(records: Iterable[FilterRecord], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(FILTER_LOG_HEADER)
    for record in records:
        writer.writerow([
            repr(float(record.timestamp)),
            repr(float(record.bearing)),
            repr(float(record.measured)),
            "accept" if record.decision.accept else "reject",
            repr(float(record.decision.score)),
        ])
