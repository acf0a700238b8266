"""
Sensor log format: one event per line.

    ODOM <t> <dtrans_m> <drot_rad>
    SCAN <t> <k> <bearing_rad> <range_m> ... (k pairs)

Blank lines and lines starting with '#' are ignored. Timestamps must not
decrease.
"""

import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator

from errors import LogFormatError, TimestampRegressionError
from models.motion_model import OdometryReading


@dataclass(frozen=True)
class RangeScan:
    """(bearing, measured range) pairs of one scan."""

    beams: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class SensorLogEvent:
    timestamp: float
    payload: OdometryReading | RangeScan

    @property
    def is_scan(self) -> bool:
        return isinstance(self.payload, RangeScan)


def _floats(fields: list[str], line_number: int) -> list[float]:
    try:
        values = [float(v) for v in fields]
    except ValueError:
        raise LogFormatError(f"non-numeric field in {' '.join(fields)!r}", line_number) from None
    if not all(math.isfinite(v) for v in values):
        raise LogFormatError(f"non-finite field in {' '.join(fields)!r}", line_number)
    return values


def parse_event(line: str, line_number: int) -> SensorLogEvent | None:
    """Parse one log line; returns None for blank and comment lines."""
    fields = line.split()
    if not fields or fields[0].startswith("#"):
        return None
    tag = fields[0]
    if tag == "ODOM":
        if len(fields) != 4:
            raise LogFormatError(f"ODOM takes 3 fields, got {len(fields) - 1}", line_number)
        t, trans, rot = _floats(fields[1:], line_number)
        return SensorLogEvent(t, OdometryReading(trans, rot))
    if tag == "SCAN":
        if len(fields) < 3:
            raise LogFormatError("SCAN needs a timestamp and a beam count", line_number)
        t = _floats(fields[1:2], line_number)[0]
        try:
            count = int(fields[2])
        except ValueError:
            raise LogFormatError(f"beam count {fields[2]!r} is not an integer", line_number) from None
        if count < 0 or len(fields) != 3 + 2 * count:
            raise LogFormatError(
                f"SCAN declares {count} beams but carries {len(fields) - 3} values", line_number
            )
        values = _floats(fields[3:], line_number)
        if any(r < 0 for r in values[1::2]):
            raise LogFormatError("negative range reading", line_number)
        return SensorLogEvent(t, RangeScan(tuple(zip(values[0::2], values[1::2]))))
    raise LogFormatError(f"unknown event tag {tag!r}", line_number)


def read_log(stream: IO[str] | Iterable[str]) -> Iterator[SensorLogEvent]:
    """Stream events, rejecting malformed lines and timestamp regressions."""
    last = float("-inf")
    for line_number, line in enumerate(stream, start=1):
        event = parse_event(line, line_number)
        if event is None:
            continue
        if event.timestamp < last:
            raise TimestampRegressionError(
                f"timestamp {event.timestamp} precedes {last}", line_number
            )
        last = event.timestamp
        yield event


def _num(value: float) -> str:
    return repr(float(value))


def format_event(event: SensorLogEvent) -> str:
    payload = event.payload
    t = _num(event.timestamp)
    if isinstance(payload, OdometryReading):
        return f"ODOM {t} {_num(payload.delta_trans)} {_num(payload.delta_rot)}"
    pairs = " ".join(f"{_num(bearing)} {_num(measured)}" for bearing, measured in payload.beams)
    return f"SCAN {t} {len(payload.beams)} {pairs}".rstrip()


def write_log(events: Iterable[SensorLogEvent], stream: IO[str]) -> None:
    for event in events:
        stream.write(format_event(event) + "\n")
