import json
import logging
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Sequence

from pydantic import ValidationError

from .core import HandJointError
from .landmark_filter import LandmarkObservation
from .models.observation import ObservationRecord

logger = logging.getLogger(__name__)


class ObservationParser:
    """Parser for observation JSON Lines, one record per frame."""

    @staticmethod
    def parse_line(line: str, line_number: int) -> ObservationRecord:
        """Parse a single JSONL line into an ObservationRecord"""
        try:
            data = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRecordError(f"invalid JSON: {e.msg}", line_number)
        if not isinstance(data, dict):
            raise MalformedRecordError(f"expected an object, got {type(data).__name__}", line_number)
        try:
            return ObservationRecord.model_validate(data)
        except ValidationError as e:
            details = "; ".join(
                f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}"
                for error in e.errors()
            )
            raise MalformedRecordError(details, line_number)

    @staticmethod
    def iter_records(lines: Iterable[str]) -> Iterator[ObservationRecord]:
        """Yield records in order; blank lines are skipped.

        Timestamps must not decrease from one record to the next.
        """
        last_t: Optional[float] = None
        for line_number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            record = ObservationParser.parse_line(line, line_number)
            if last_t is not None and record.t < last_t:
                raise MalformedRecordError(
                    f"timestamp {record.t} is before previous timestamp {last_t}", line_number
                )
            last_t = record.t
            yield record

    @staticmethod
    def iter_file(path: str | Path) -> Iterator[ObservationRecord]:
        try:
            with open(path, "r", encoding="utf-8") as f:
                yield from ObservationParser.iter_records(f)
        except OSError as e:
            raise MalformedRecordError(f"cannot read {path}: {e}", 0)

    @staticmethod
    def iter_frames(
        records: Iterable[ObservationRecord],
    ) -> Iterator[tuple[float, list[LandmarkObservation]]]:
        for record in records:
            yield record.t, record.to_observations()


def write_observations(
    frames: Iterable[tuple[float, Sequence[LandmarkObservation]]], stream: IO[str]
) -> int:
    """Write frames as observation JSONL; returns the number of records."""
    count = 0
    for t, observations in frames:
        stream.write(ObservationRecord.from_observations(t, observations).model_dump_json())
        stream.write("\n")
        count += 1
    return count


class MalformedRecordError(HandJointError):
    """Raised when an observation record cannot be parsed; carries its 1-based line number."""

    def __init__(self, message: str, line_number: int):
        prefix = f"line {line_number}: " if line_number > 0 else ""
        super().__init__(prefix + message)
        self.line_number = line_number
