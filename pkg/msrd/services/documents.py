"""Network and run documents: JSON parsing, validation and serialization"""
import os
from typing import Any, Dict, Optional, Tuple

import orjson
from pydantic import ValidationError

from msrd.schemas.network import NetworkSpec
from msrd.schemas.run import RunConfig
from msrd.services.model import NetworkValidationError, validate_network

DATA_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data")
REFERENCE_NETWORK = os.path.join(DATA_DIR, "reference_network.json")


class ConfigSyntaxError(ValueError):
    """Malformed document, with the 1-based position of the failure"""

    def __init__(self, message: str, line: int, column: int, source: str = "<config>"):
        self.line = line
        self.column = column
        self.source = source
        super().__init__(f"{source}:{line}:{column}: {message}")


def _load_json(text, source: str) -> Any:
    try:
        return orjson.loads(text)
    except orjson.JSONDecodeError as e:
        raise ConfigSyntaxError(e.msg, e.lineno, e.colno, source) from e


def _pydantic_violations(error: ValidationError, section: str) -> list:
    violations = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        violations.append(f"{section}.{location}: {item['msg']}" if location else f"{section}: {item['msg']}")
    return violations


def network_from_data(data: Any, source: str = "network") -> NetworkSpec:
    """
    Build and validate a NetworkSpec from decoded JSON.

    Raises:
        NetworkValidationError: schema errors or violated class constraints
    """
    if not isinstance(data, dict):
        raise NetworkValidationError([f"{source}: expected an object"])
    try:
        spec = NetworkSpec.model_validate(data)
    except ValidationError as e:
        raise NetworkValidationError(_pydantic_violations(e, source)) from e
    violations = validate_network(spec)
    if violations:
        raise NetworkValidationError(violations)
    return spec


def parse_network(text, source: str = "<network>") -> NetworkSpec:
    return network_from_data(_load_json(text, source), source="network")


def load_network_file(path: Optional[str] = None) -> NetworkSpec:
    """Read a network document; the bundled reference network when path is None"""
    path = path or REFERENCE_NETWORK
    with open(path, "rb") as f:
        return parse_network(f.read(), source=path)


def serialize_network(spec: NetworkSpec) -> bytes:
    """Canonical JSON: aliased field names, sorted keys, two-space indent"""
    return orjson.dumps(
        spec.model_dump(mode="json", by_alias=True),
        option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS,
    )


def parse_config(text, source: str = "<config>", base_dir: Optional[str] = None) -> Tuple[RunConfig, NetworkSpec]:
    """
    Parse a run document into its configuration and validated network.

    The document is a JSON object with an optional ``run`` section (RunConfig
    fields) and a ``network`` entry that is either an inline network object or
    a path to a network document, relative to ``base_dir``. Without a
    ``network`` entry the bundled reference network is used. A bare network
    object (top-level ``reactions``) is accepted as well.

    Args:
        text: Document text or bytes
        source: Name used in error positions
        base_dir: Directory for relative network paths

    Returns:
        (RunConfig, NetworkSpec)

    Raises:
        ConfigSyntaxError: malformed JSON, with line and column
        NetworkValidationError: schema errors or violated constraints
    """
    data = _load_json(text, source)
    if not isinstance(data, dict):
        raise NetworkValidationError([f"{source}: expected an object at top level"])

    if "reactions" in data:
        return RunConfig(), network_from_data(data)

    run_data: Dict[str, Any] = dict(data.get("run") or {})
    network = data.get("network")
    if isinstance(network, str):
        path = network if os.path.isabs(network) or base_dir is None else os.path.join(base_dir, network)
        run_data.setdefault("network", path)
        spec = load_network_file(path)
    elif network is None:
        spec = load_network_file(run_data.get("network"))
    else:
        spec = network_from_data(network)

    try:
        config = RunConfig.model_validate(run_data)
    except ValidationError as e:
        raise NetworkValidationError(_pydantic_violations(e, "run")) from e
    return config, spec


def load_config_file(path: str) -> Tuple[RunConfig, NetworkSpec]:
    with open(path, "rb") as f:
        return parse_config(f.read(), source=path, base_dir=os.path.dirname(os.path.abspath(path)))
