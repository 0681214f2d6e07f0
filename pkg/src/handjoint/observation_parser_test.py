import io
import json

import numpy as np
import pytest

from src.handjoint.landmark_filter import LandmarkObservation
from src.handjoint.models.observation import ObservationRecord
from src.handjoint.observation_parser import MalformedRecordError, ObservationParser, write_observations


def line(t, landmarks):
    return json.dumps({"t": t, "landmarks": landmarks})


def test_parse_line():
    record = ObservationParser.parse_line(
        line(0.5, [{"id": 8, "pos": [0.1, 0.2, 0.3], "vis": 0.9}, {"id": 4, "pos": [0, 0, 0.5]}]), 1
    )
    assert record.t == 0.5
    assert [landmark.id for landmark in record.landmarks] == [8, 4]
    assert record.landmarks[1].vis == 1.0
    observations = record.to_observations()
    assert isinstance(observations[0], LandmarkObservation)
    np.testing.assert_allclose(observations[0].pos, [0.1, 0.2, 0.3])


@pytest.mark.parametrize(
    "text, message",
    [
        ("{not json", "invalid JSON"),
        ("[1, 2]", "expected an object"),
        (line(0.0, [{"id": 21, "pos": [0, 0, 0]}]), "landmarks.0.id"),
        (line(0.0, [{"id": 3, "pos": [0, 0]}]), "landmarks.0.pos"),
        (line(0.0, [{"id": 3, "pos": [0, 0, 0], "vis": 1.2}]), "landmarks.0.vis"),
        (line(0.0, [{"id": 3, "pos": [0, 0, 0]}, {"id": 3, "pos": [1, 0, 0]}]), "duplicate"),
        (json.dumps({"landmarks": []}), "t"),
        (json.dumps({"t": 0.0, "landmarks": [], "frame": 3}), "frame"),
    ],
)
def test_malformed_lines(text, message):
    with pytest.raises(MalformedRecordError, match=message) as excinfo:
        ObservationParser.parse_line(text, 7)
    assert excinfo.value.line_number == 7
    assert str(excinfo.value).startswith("line 7: ")


def test_iter_records_reports_line_number_and_skips_blank_lines():
    lines = [line(0.0, []), "", line(0.1, []), "oops"]
    records = ObservationParser.iter_records(lines)
    assert next(records).t == 0.0
    assert next(records).t == 0.1
    with pytest.raises(MalformedRecordError) as excinfo:
        next(records)
    assert excinfo.value.line_number == 4


def test_timestamps_must_not_decrease():
    lines = [line(0.2, []), line(0.2, []), line(0.1, [])]
    with pytest.raises(MalformedRecordError, match="line 3: timestamp 0.1"):
        list(ObservationParser.iter_records(lines))


def test_missing_file():
    with pytest.raises(MalformedRecordError, match="cannot read"):
        list(ObservationParser.iter_file("/nonexistent/observations.jsonl"))


def test_write_then_read_frames(tmp_path):
    frames = [
        (0.0, [LandmarkObservation(0.0, 5, (0.1, 0.0, 0.5), 0.8)]),
        (1 / 30, [LandmarkObservation(1 / 30, 5, (0.1, 0.001, 0.5), 0.003), LandmarkObservation(1 / 30, 9, (0.0, 0.0, 0.5))]),
    ]
    path = tmp_path / "observations.jsonl"
    with open(path, "w", encoding="utf-8") as f:
        assert write_observations(frames, f) == 2
    parsed = list(ObservationParser.iter_frames(ObservationParser.iter_file(path)))
    assert [t for t, _ in parsed] == [0.0, 1 / 30]
    second = parsed[1][1]
    assert [(o.id, o.vis) for o in second] == [(5, 0.003), (9, 1.0)]
    np.testing.assert_array_equal(second[0].pos, [0.1, 0.001, 0.5])


def test_record_from_observations_is_one_json_line():
    record = ObservationRecord.from_observations(0.5, [LandmarkObservation(0.5, 1, (0.0, 0.0, 0.5))])
    stream = io.StringIO()
    stream.write(record.model_dump_json())
    assert "\n" not in stream.getvalue()
    assert json.loads(stream.getvalue())["landmarks"][0]["id"] == 1
