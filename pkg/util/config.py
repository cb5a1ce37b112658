"""
Configuration loading.

A system config is a flat KEY=VALUE file (``#`` starts a comment) read with
python-dotenv. Process defaults (config path, log level) come from the
environment or a ``.env`` file.
"""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from components.errors import ConfigParseError
from components.pointer_tagging import tag_width_for
from components.safe_heap import DEFAULT_HEAP_SIZE, RunMode, RuntimeConfig
from workloads.cost_model import COST_KEYS, CostModel, InvalidCostWeight
from workloads.generator import WorkloadSpec

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
DEFAULT_CONFIG_PATH = "heapsafe.cfg"

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass(frozen=True)
class SystemConfig:
    n: int = 1
    mt_size: int = 256
    mode: RunMode = RunMode.HEAPSAFE
    tbi: bool = False
    heap_size: int = DEFAULT_HEAP_SIZE
    seed: int = 0
    drain_interval: int = 8
    require_machine_mode: bool = False
    privileged: bool = True
    total_ops: int = 2000
    cost: CostModel = field(default_factory=CostModel)

    @property
    def tag_width(self) -> int:
        return tag_width_for(self.mt_size)

    def runtime_config(self, hart_id: int = 0, mode: Optional[RunMode] = None) -> RuntimeConfig:
        return RuntimeConfig(mode=RunMode(mode or self.mode), tbi=self.tbi, heap_size=self.heap_size,
                             hart_id=hart_id, mt_size=self.mt_size, drain_interval=self.drain_interval,
                             privileged=self.privileged, require_machine_mode=self.require_machine_mode)

    def workload_spec(self, heap_fraction: float = 0.5, total_ops: Optional[int] = None) -> WorkloadSpec:
        return WorkloadSpec(total_ops=self.total_ops if total_ops is None else total_ops,
                            heap_fraction=heap_fraction, seed=self.seed)


def _int(value: str) -> int:
    return int(value, 0)


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _at_least(lo: int) -> Callable[[str], int]:
    def parse(value: str) -> int:
        v = _int(value)
        if v < lo:
            raise ValueError(f"must be >= {lo}, got {v}")
        return v
    return parse


def _mt_size(value: str) -> int:
    v = _int(value)
    tag_width_for(v)
    return v


def _heap_size(value: str) -> int:
    v = _int(value)
    if v <= 0 or v % 8:
        raise ValueError(f"must be a positive multiple of 8, got {v}")
    return v


# File key -> (SystemConfig field, parser)
CONFIG_KEYS: Dict[str, Tuple[str, Callable[[str], Any]]] = {
    "n": ("n", _at_least(1)),
    "mtSize": ("mt_size", _mt_size),
    "mode": ("mode", RunMode),
    "tbi": ("tbi", _bool),
    "heapSize": ("heap_size", _heap_size),
    "seed": ("seed", _at_least(0)),
    "drainInterval": ("drain_interval", _at_least(1)),
    "requireMachineMode": ("require_machine_mode", _bool),
    "privileged": ("privileged", _bool),
    "totalOps": ("total_ops", _at_least(0)),
}
COST_PREFIX = "cost."
COST_FIELD_KEYS = {name: key for key, name in COST_KEYS.items()}


def _line_numbers(path: str) -> Dict[str, int]:
    """1-based line of each key's last assignment; malformed lines raise."""
    lines: Dict[str, int] = {}
    with open(path, "r") as file:
        for lineno, text in enumerate(file, start=1):
            stripped = text.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if stripped.startswith("export "):
                stripped = stripped[len("export "):]
            key, sep, _ = stripped.partition("=")
            if not sep or not key.strip():
                raise ConfigParseError(f"expected KEY=VALUE, got {stripped!r}", line=lineno, path=path)
            lines[key.strip()] = lineno
    return lines


def parse_config(values: Dict[str, Optional[str]], lines: Optional[Dict[str, int]] = None,
                 path: Optional[str] = None) -> SystemConfig:
    """
    Build a SystemConfig from raw key/value strings.

    Raises:
        ConfigParseError: unknown key, missing value, or a value that does
            not parse or is out of range
    """
    lines = lines or {}
    settings: Dict[str, Any] = {}
    cost: Dict[str, int] = {}
    for key, raw in values.items():
        line = lines.get(key)
        if raw is None or raw.strip() == "":
            raise ConfigParseError("missing value", key=key, line=line, path=path)
        try:
            if key.startswith(COST_PREFIX):
                name = key[len(COST_PREFIX):]
                if name not in COST_KEYS:
                    raise ConfigParseError("unknown cost weight", key=key, line=line, path=path)
                cost[name] = _at_least(0)(raw)
            elif key in CONFIG_KEYS:
                attr, parse = CONFIG_KEYS[key]
                settings[attr] = parse(raw.strip())
            else:
                raise ConfigParseError("unknown key", key=key, line=line, path=path)
        except ValueError as e:
            raise ConfigParseError(f"invalid value {raw!r}: {e}", key=key, line=line, path=path) from None

    if cost:
        try:
            settings["cost"] = CostModel.with_overrides(cost)
        except InvalidCostWeight as e:
            key = COST_PREFIX + COST_FIELD_KEYS[e.field]
            raise ConfigParseError(str(e), key=key, line=lines.get(key), path=path) from None
    return SystemConfig(**settings)


def load_system_config(path: Optional[str] = None) -> SystemConfig:
    """
    Load a flat configuration file.

    Args:
        path: Config file; HEAPSAFE_CONFIG or ``heapsafe.cfg`` when None.
            A missing default file yields the built-in defaults.

    Returns:
        Parsed SystemConfig
    """
    explicit = path is not None
    path = path or default_config_path()
    if not os.path.exists(path):
        if explicit:
            raise ConfigParseError("config file not found", path=path)
        logger.info("no config file at %s, using defaults", path)
        return SystemConfig()
    lines = _line_numbers(path)
    values = dotenv_values(path, interpolate=False)
    config = parse_config(dict(values), lines, path)
    logger.info("loaded config %s: n=%d mtSize=%d mode=%s", path, config.n, config.mt_size, config.mode.value)
    return config


def with_overrides(config: SystemConfig, mode: Optional[str] = None, seed: Optional[int] = None) -> SystemConfig:
    """Apply command-line overrides on top of a loaded config."""
    changes: Dict[str, Any] = {}
    if mode is not None:
        changes["mode"] = RunMode(mode)
    if seed is not None:
        changes["seed"] = seed
    return replace(config, **changes) if changes else config


def default_config_path() -> str:
    load_dotenv()
    return os.getenv("HEAPSAFE_CONFIG", DEFAULT_CONFIG_PATH)


def default_log_level() -> str:
    load_dotenv()
    return os.getenv("HEAPSAFE_LOG_LEVEL", "WARNING")


def setup_logging(level: Optional[str] = None) -> None:
    level = (level or default_log_level()).upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format=LOG_FORMAT, force=True)

