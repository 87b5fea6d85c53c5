import hashlib
import json
import os
from typing import Any, Dict, Optional, Union

from .errors import ConfigError
from .versions import OUTPUT_SCHEMA_VERSION, PACKAGE_VERSION

THREADS_ENV = "CVQKD_THREADS"
SIGNIFICANT_DIGITS = 12


def read_file(file) -> str:
    with open(file, "r", encoding="utf-8") as f:
        return f.read()


def is_json(data) -> bool:
    try:
        text = str(data).strip()
        if not (text.startswith("{") or text.startswith("[")):
            return False
        json.loads(text)
        return True
    except json.JSONDecodeError:
        return False


def format_number(value: Any) -> str:
    """Render a CSV cell: 12 significant digits for floats, empty for None."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value + 0.0:.{SIGNIFICANT_DIGITS}g}"
    return str(value)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def stable_hash(data: Any) -> str:
    """Short content hash of a JSON-serializable value."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()[:16]


def resolve_threads(value: Optional[Union[int, str]] = None) -> int:
    """
    Number of workers from an explicit value, ``CVQKD_THREADS``, or 1.

    ``"auto"`` means one worker per CPU.
    """
    if value is None:
        value = os.environ.get(THREADS_ENV) or 1
    if isinstance(value, str):
        text = value.strip().lower()
        if text == "auto":
            return os.cpu_count() or 1
        try:
            value = int(text)
        except ValueError:
            raise ConfigError(f"threads must be a positive integer or 'auto', got {value!r}")
    if isinstance(value, bool) or int(value) < 1:
        raise ConfigError(f"threads must be a positive integer or 'auto', got {value!r}")
    return int(value)


def build_metadata(kind: str, params: Dict[str, Any], inputs: Dict[str, Any]) -> Dict[str, Any]:
    """
    Provenance block embedded in every JSON output.

    Holds no timestamps, so identical runs serialize identically.
    """
    return {
        "kind": kind,
        "tool_version": PACKAGE_VERSION,
        "schema_version": OUTPUT_SCHEMA_VERSION,
        "params_hash": stable_hash({"kind": kind, "params": params, "inputs": inputs}),
        "params": params,
        "inputs": inputs,
    }
