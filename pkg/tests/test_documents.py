import os

import orjson
import pytest

from msrd.services.documents import (
    REFERENCE_NETWORK,
    ConfigSyntaxError,
    load_config_file,
    load_network_file,
    parse_config,
    parse_network,
    serialize_network,
)
from msrd.services.model import NetworkValidationError

MINIMAL = {
    "name": "minimal",
    "reactions": [
        {"class": "FastC", "gamma_c": 1, "rate": {"terms": [{"coefficient": 1.0}]}},
        {"class": "SlowD", "gamma_d": -1, "rate": {"terms": [{"coefficient": 0.5, "e_d": 1}]}},
    ],
}


def test_bundled_network():
    spec = load_network_file()
    assert spec.name == "reference"
    assert len(spec.reactions) == 6
    assert spec.kernel.variant == "RaisedCosine"
    assert os.path.exists(REFERENCE_NETWORK)


def test_minimal_network():
    spec = parse_network(orjson.dumps(MINIMAL))
    assert spec.name == "minimal"
    assert spec.reactions[1].rate.terms[0].e_d == 1
    assert spec.kernel.variant == "ConstantBox"


def test_class_constraint_violation():
    data = {"reactions": [{"class": "FastMixed", "gamma_c": 1, "gamma_d": 1,
                           "rate": {"terms": [{"coefficient": 1.0, "e_d": 1}]}}]}
    with pytest.raises(NetworkValidationError) as info:
        parse_network(orjson.dumps(data))
    assert any("FastMixed must have gamma_d = 0" in v for v in info.value.violations)


def test_schema_violation_names_the_field():
    data = {"reactions": [{"class": "Sideways", "rate": {"terms": []}}]}
    with pytest.raises(NetworkValidationError) as info:
        parse_network(orjson.dumps(data))
    assert info.value.violations[0].startswith("network.reactions.0.class")


def test_syntax_error_position():
    text = '{\n  "reactions": [\n    {"class": "FastC",,}\n  ]\n}\n'
    with pytest.raises(ConfigSyntaxError) as info:
        parse_network(text, source="broken.json")
    assert info.value.line == 3
    assert info.value.column > 1
    assert str(info.value).startswith("broken.json:3:")


def test_serialized_network_parses_back(reference_spec):
    text = serialize_network(reference_spec)
    assert b'"class": "FastC"' in text
    assert parse_network(text) == reference_spec


class TestRunDocuments:
    def test_bare_network(self):
        config, spec = parse_config(orjson.dumps(MINIMAL))
        assert spec.name == "minimal"
        assert config.n_sites == 8

    def test_defaults_to_bundled_network(self):
        config, spec = parse_config(b'{"run": {"n_sites": 4, "mu": 16}}')
        assert spec.name == "reference"
        assert (config.n_sites, config.mu) == (4, 16.0)

    def test_inline_network(self):
        config, spec = parse_config(orjson.dumps({"run": {"seed": 3}, "network": MINIMAL}))
        assert spec.name == "minimal"
        assert config.seed == 3

    def test_relative_network_path(self, tmp_path):
        (tmp_path / "net.json").write_bytes(orjson.dumps(MINIMAL))
        run = tmp_path / "run.json"
        run.write_bytes(orjson.dumps({"network": "net.json", "run": {"t_end": 0.5}}))
        config, spec = load_config_file(str(run))
        assert spec.name == "minimal"
        assert config.network == os.path.join(str(tmp_path), "net.json")
        assert config.t_end == 0.5

    def test_run_section_violation(self):
        with pytest.raises(NetworkValidationError) as info:
            parse_config(b'{"run": {"n_sites": 0}}')
        assert info.value.violations[0].startswith("run.n_sites")

    def test_top_level_must_be_an_object(self):
        with pytest.raises(NetworkValidationError):
            parse_config(b"[1, 2]")

    def test_missing_network_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parse_config(b'{"network": "absent.json"}', base_dir=str(tmp_path))
