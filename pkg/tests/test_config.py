import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from casecollab.collaboration import CaseStage
from casecollab.config import (
    ScenarioConfig,
    Strategy,
    default_config_path,
    format_config,
    load_config,
    loads_config,
    parse_duration,
    parse_rate,
)
from casecollab.errors import MissingUnit, ParseError, ValidationError


def test_minimal_config_uses_latency_defaults():
    cfg = loads_config("{}")
    assert cfg.feedback_latency == 15.0
    assert cfg.validation_latency == 1440.0


def test_minutes_normalize_to_seconds():
    assert loads_config("feedback_latency: 0.25 min").feedback_latency == 15.0


@pytest.mark.parametrize("text,seconds", [
    ("90 s", 90), ("1.5 min", 90), ("2 h", 7200), ("1 d", 86400), ("0 s", 0),
    ("24 min", 1440),
])
def test_duration_units(text, seconds):
    assert parse_duration(text, "k") == seconds


def test_rates():
    assert parse_rate("1 per d", "k") == pytest.approx(1 / 86400)
    assert parse_rate("6 per h", "k") == pytest.approx(6 / 3600)


def test_negative_horizon_names_key():
    with pytest.raises(ValidationError) as info:
        loads_config("horizon: -1 d")
    assert info.value.key == "horizon"


@pytest.mark.parametrize("text,key", [
    ("horizon: 5", "horizon"),
    ("validation_latency: 1440", "validation_latency"),
    ("arrival: {rate: 2}", "arrival.rate"),
])
def test_bare_numbers_need_units(text, key):
    with pytest.raises(MissingUnit) as info:
        loads_config(text)
    assert info.value.key == key


@pytest.mark.parametrize("text,key", [
    ("bogus: 1 s", "bogus"),
    ("feedback_latency: 3 weeks", "feedback_latency"),
    ("p_flag: 1.5", "p_flag"),
    ("strategy: Carrier pigeon", "strategy"),
    ("transitions: {InformationGathering: {Diagnosis: 0.5, IteratingSolutions: 0.2}}",
     "transitions"),
])
def test_validation_errors_name_the_key(text, key):
    with pytest.raises(ValidationError) as info:
        loads_config(text)
    assert info.value.key == key


def test_malformed_document():
    with pytest.raises(ParseError):
        loads_config("horizon: [")
    with pytest.raises(ParseError):
        loads_config("- just\n- a list\n")


def test_missing_file(tmp_path):
    with pytest.raises(ParseError):
        load_config(tmp_path / "nope.yaml")


def test_shipped_default_matches_builtin_defaults():
    cfg = load_config(default_config_path())
    assert cfg == ScenarioConfig()
    assert cfg.digest == ScenarioConfig().digest
    assert cfg.strategy is Strategy.VCS_MODEL
    assert cfg.stage_resources() == {CaseStage.DIAGNOSIS: "diagnostics",
                                     CaseStage.TREATMENT_ASSESSMENT: "oncology_clinic"}


def test_digest_tracks_content():
    a = ScenarioConfig()
    assert a.digest == ScenarioConfig().digest
    assert a.digest != a.replace(seed=2).digest
    assert len(a.digest) == 64
    json.dumps(a.to_dict())  # JSON-safe


def test_format_config_lists_latencies_in_seconds():
    text = format_config(ScenarioConfig())
    assert "feedback_latency: 15 s" in text
    assert "validation_latency: 1440 s" in text
    assert ScenarioConfig().digest in text


def test_arrival_times_list():
    cfg = loads_config("arrival: {times: [0 s, 1 h]}")
    assert cfg.arrival_times == (0.0, 3600.0) and cfg.arrival_rate is None


@given(st.floats(0, 1e6, allow_nan=False), st.sampled_from([("s", 1), ("min", 60),
                                                            ("h", 3600), ("d", 86400)]))
def test_duration_roundtrip(n, unit):
    name, factor = unit
    assert parse_duration(f"{n!r} {name}", "k") == pytest.approx(n * factor)
