"""
Run configuration for the command-line tool.

A run is configured from three layers, later layers winning: built-in
defaults, a config file, and command-line flags. Config files are either INI
text or a JSON document previously written by the tool (its embedded
``config`` object is loaded), told apart by content.

Example INI file::

    [params]
    V_mod = 4
    distance_km = 10
    n_onus = 4
    epsilon_segments = 0.05

    [sweep]
    distances_km = 0:30:1
    onu_counts = 2:64:1

    [output]
    csv = sweep.csv
"""

import configparser
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

from .analysis import (
    DEFAULT_BRACKET,
    DEFAULT_DISTANCES_KM,
    DEFAULT_EPS_MAX,
    DEFAULT_ONU_COUNTS,
)
from .errors import ConfigError, CVQKDError
from .protocol import ProtocolParams
from .utils import is_json, read_file

logger = logging.getLogger(__name__)

COMMANDS = ("keyrate", "sweep", "tolerance", "compare", "optimize", "mc")

FLOAT_PARAMS = ("V", "V_mod", "beta", "eta_d", "eta_e", "alpha_db_per_km", "distance_km")


def parse_float_list(text: str, name: str = "value") -> Tuple[float, ...]:
    """
    Parse ``"1, 2, 4"`` or an inclusive ``"start:stop:step"`` range.

    Raises:
        ConfigError: On malformed input or a non-positive step.
    """
    text = str(text).strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ValueError(text)
            start, stop, step = parts
            if step <= 0:
                raise ConfigError(f"{name}: range step must be > 0, got {step}")
            count = int(round((stop - start) / step)) + 1
            values = [start + k * step for k in range(count)]
            return tuple(v for v in values if v <= stop + 1e-9 * step)
        return tuple(float(p) for p in text.split(",") if p.strip())
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"{name}: expected a comma list or start:stop:step, got {text!r}")


def parse_int_list(text: str, name: str = "value") -> Tuple[int, ...]:
    values = parse_float_list(text, name)
    if any(v != int(v) for v in values):
        raise ConfigError(f"{name}: expected integers, got {text!r}")
    return tuple(int(v) for v in values)


@dataclass(frozen=True)
class GridBlock:
    """Axes shared by the sweep, tolerance and optimize commands."""

    distances_km: Tuple[float, ...] = DEFAULT_DISTANCES_KM
    onu_counts: Tuple[int, ...] = DEFAULT_ONU_COUNTS
    eps_max: float = DEFAULT_EPS_MAX
    bracket: Tuple[float, float] = DEFAULT_BRACKET


@dataclass(frozen=True)
class CompareBlock:
    fiber_loss_db: Tuple[float, ...] = (4.0, 8.0, 10.0, 12.0)
    onu_counts: Tuple[int, ...] = (1, 2, 4, 8, 16, 32, 64)


@dataclass(frozen=True)
class McBlock:
    n_samples: int = 100_000
    moment_sigmas: float = 5.0
    estimate_sigmas: float = 3.0
    key_rate_bits: float = 0.01
    key_rate_sigmas: float = 3.0


Block = Union[None, GridBlock, CompareBlock, McBlock]

OPTIMIZE_DISTANCES_KM = (5.0, 10.0, 20.0, 30.0)
OPTIMIZE_ONU_COUNTS = (2, 4, 8, 16, 32, 64)


def default_block(command: str) -> Block:
    if command in ("sweep", "tolerance"):
        return GridBlock()
    if command == "optimize":
        return GridBlock(OPTIMIZE_DISTANCES_KM, OPTIMIZE_ONU_COUNTS)
    if command == "compare":
        return CompareBlock()
    if command == "mc":
        return McBlock()
    return None


@dataclass(frozen=True)
class OutputSpec:
    csv: Optional[str] = None
    json: Optional[str] = None
    plot: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    """
    Everything one subcommand needs.

    ``block`` holds the settings of the active subcommand only.
    """

    command: str
    params: ProtocolParams = field(default_factory=ProtocolParams)
    block: Block = None
    output: OutputSpec = field(default_factory=OutputSpec)
    seed: int = 0
    threads: Optional[str] = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"Unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.block is None:
            object.__setattr__(self, "block", default_block(self.command))
        if isinstance(self.seed, bool) or not 0 <= int(self.seed) < 1 << 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Apply non-None command-line values (csv, json, plot, seed, threads)."""
        output = self.output
        for key in ("csv", "json", "plot"):
            if overrides.get(key) is not None:
                output = dataclasses.replace(output, **{key: overrides[key]})
        changes: Dict[str, Any] = {"output": output}
        if overrides.get("seed") is not None:
            changes["seed"] = overrides["seed"]
        if overrides.get("threads") is not None:
            changes["threads"] = str(overrides["threads"])
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        block = dataclasses.asdict(self.block) if self.block is not None else None
        if block is not None:
            block = {k: list(v) if isinstance(v, tuple) else v for k, v in block.items()}
        return {
            "command": self.command,
            "params": self.params.to_dict(),
            "block": block,
            "output": dataclasses.asdict(self.output),
            "seed": self.seed,
            "threads": self.threads,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        try:
            command = data["command"]
            params = ProtocolParams.from_dict(data.get("params") or {})
            block = _block_from_mapping(command, data.get("block") or {})
            output = OutputSpec(**(data.get("output") or {}))
        except (KeyError, TypeError) as e:
            raise ConfigError(f"Malformed config document: {e}")
        return cls(
            command=command,
            params=params,
            block=block,
            output=output,
            seed=int(data.get("seed", 0)),
            threads=data.get("threads"),
        )


def _block_from_mapping(command: str, values: Dict[str, Any]) -> Block:
    """Build the active block from strings (INI) or JSON values."""
    block = default_block(command)
    if block is None:
        return None

    def floats(key: str) -> Tuple[float, ...]:
        value = values[key]
        if isinstance(value, (list, tuple)):
            return tuple(float(v) for v in value)
        return parse_float_list(value, key)

    def ints(key: str) -> Tuple[int, ...]:
        value = values[key]
        if isinstance(value, (list, tuple)):
            return tuple(int(v) for v in value)
        return parse_int_list(value, key)

    known = {f.name for f in dataclasses.fields(block)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in [{command}]: {', '.join(unknown)}")

    changes: Dict[str, Any] = {}
    try:
        for key in values:
            if key in ("distances_km", "fiber_loss_db"):
                changes[key] = floats(key)
            elif key == "onu_counts":
                changes[key] = ints(key)
            elif key == "bracket":
                bracket = floats(key)
                if len(bracket) != 2:
                    raise ConfigError(f"bracket needs two values, got {values[key]!r}")
                changes[key] = bracket
            elif key == "n_samples":
                changes[key] = int(values[key])
            else:
                changes[key] = float(values[key])
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Invalid value in [{command}]: {e}")
    return dataclasses.replace(block, **changes)


def _params_from_section(section: Dict[str, str]) -> ProtocolParams:
    data: Dict[str, Any] = {}
    for key, raw in section.items():
        text = raw.strip()
        try:
            if key in FLOAT_PARAMS:
                data[key] = float(text)
            elif key == "n_onus":
                data[key] = int(text)
            elif key == "epsilon_segments":
                data[key] = parse_float_list(text, key)
            elif key == "eta_odn":
                data[key] = None if text.lower() in ("", "none") else float(text)
            elif key == "trusted_detector":
                data[key] = configparser.ConfigParser.BOOLEAN_STATES[text.lower()]
            else:
                data[key] = text
        except (ValueError, KeyError):
            raise ConfigError(f"Invalid value for {key} in [params]: {raw!r}")
    return ProtocolParams.from_dict(data)


def _from_ini(text: str, command: str) -> RunConfig:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # type: ignore[assignment]
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"Malformed config file: {e}")

    params = ProtocolParams()
    if parser.has_section("params"):
        params = _params_from_section(dict(parser["params"]))
    block_values = dict(parser[command]) if parser.has_section(command) else {}
    seed = block_values.pop("seed", None) if command == "mc" else None

    output_values = dict(parser["output"]) if parser.has_section("output") else {}
    seed = output_values.pop("seed", seed)
    threads = output_values.pop("threads", None)
    unknown = sorted(set(output_values) - {"csv", "json", "plot"})
    if unknown:
        raise ConfigError(f"Unknown key(s) in [output]: {', '.join(unknown)}")

    try:
        seed_value = int(seed) if seed is not None else 0
    except ValueError:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    return RunConfig(
        command=command,
        params=params,
        block=_block_from_mapping(command, block_values),
        output=OutputSpec(**{k: v or None for k, v in output_values.items()}),
        seed=seed_value,
        threads=threads,
    )


def load_config(path: Optional[str], command: str) -> RunConfig:
    """
    Load the configuration for ``command``.

    Args:
        path: INI or JSON file, or None for built-in defaults.
        command: Active subcommand; only its block is read.

    Raises:
        ConfigError: If the file is missing, malformed, or its values are invalid.
    """
    if path is None:
        return RunConfig(command=command)
    try:
        text = read_file(path)
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}")

    try:
        if is_json(text):
            document = json.loads(text)
            data = document.get("config", document) if isinstance(document, dict) else None
            if not isinstance(data, dict):
                raise ConfigError(f"{path} holds no config object")
            recorded = data.get("command")
            if recorded != command:
                raise ConfigError(f"{path} was recorded for {recorded!r}, not {command!r}")
            # Output paths of the recorded run are not reused
            config = dataclasses.replace(RunConfig.from_dict(data), output=OutputSpec())
        else:
            config = _from_ini(text, command)
    except ConfigError:
        raise
    except (CVQKDError, ValueError, TypeError) as e:
        raise ConfigError(f"{path}: {e}")
    logger.info("Loaded %s config from %s", command, path)
    return config


def check_output_paths(config: RunConfig, config_path: Optional[str]) -> None:
    """Reject output paths that point at the config file."""
    if not config_path:
        return
    source = os.path.abspath(config_path)
    for target in (config.output.csv, config.output.json, config.output.plot):
        if target and os.path.abspath(target) == source:
            raise ConfigError(f"Output path {target} would overwrite the config file")


def describe(config: RunConfig) -> List[str]:
    """Human-readable summary lines, used in debug logs."""
    return [f"{key} = {value}" for key, value in config.to_dict().items()]
