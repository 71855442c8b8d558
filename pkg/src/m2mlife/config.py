"""INI configuration files for simulation runs.

A file has a ``[sim]`` section whose keys are :class:`~m2mlife.sim.SimConfig`
field names and an optional ``[plots]`` section (``bins``). Missing keys
keep their defaults; unknown keys are rejected so typos do not pass silently.
"""

import configparser
import dataclasses
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

from .sim import ConfigError, SimConfig

DEFAULT_BINS = 30
_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}


def _convert(name: str, raw: str) -> Any:
    kind = _FIELDS[name].type
    text = raw.strip()
    if kind in (int, "int"):
        return int(text)
    if kind in (float, "float"):
        return float(text)
    if kind in (str, "str"):
        return text
    # Optional[str] objective: empty or "none" means unset
    return None if text.lower() in ("", "none") else text


def parse_sim_section(items: Mapping[str, str]) -> Dict[str, Any]:
    out = {}
    for key, raw in items.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown [sim] key {key!r}")
        try:
            out[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return out


def default_config_path() -> Path:
    return Path(str(resources.files("m2mlife").joinpath("data/table1.ini")))


def load_config(path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> Tuple[SimConfig, int]:
    """Read ``path`` (the bundled reference table when ``None``).

    Returns the simulation config with ``overrides`` applied on top, and the
    histogram bin count.
    """
    parser = configparser.ConfigParser(interpolation=None)
    path = Path(path) if path is not None else default_config_path()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    unknown = set(parser.sections()) - {"sim", "plots"}
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    values = parse_sim_section(parser["sim"]) if parser.has_section("sim") else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "initial_energy" not in values:
        raise ConfigError("initial_energy must be set")
    try:
        cfg = SimConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    bins = parser.getint("plots", "bins", fallback=DEFAULT_BINS)
    if bins < 1:
        raise ConfigError("plots.bins must be positive")
    return cfg, bins


def config_hash(cfg: SimConfig) -> str:
    """Short stable digest of every field except the seed."""
    d = dataclasses.asdict(cfg)
    d.pop("seed")
    blob = json.dumps(d, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
