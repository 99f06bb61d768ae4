"""Scenario loading: YAML profiles, scenario files and dotted overrides."""

import copy
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

import yaml
from pydantic import ValidationError

from app.errors import ConfigurationError
from app.schemas import ScenarioConfig

logger = logging.getLogger(__name__)

PROFILE_DIR = Path(__file__).resolve().parent.parent / "configs"
PROFILES = ("desk", "full")


def _merge(base: Dict[str, Any], update: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; values from update win."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"{path}: not valid YAML ({e})")
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping of sections")
    return data


def profile_data(name: str) -> Dict[str, Any]:
    """Raw section mapping of a named profile."""
    if name not in PROFILES:
        raise ConfigurationError(f"unknown profile {name!r}, expected one of {', '.join(PROFILES)}", field="profile")
    return _read_yaml(PROFILE_DIR / f"{name}.yaml")


def parse_override(text: str) -> Dict[str, Any]:
    """Turn 'section.key=value' into a nested mapping; the value is a YAML scalar."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} must look like section.key=value")
    dotted, raw = text.split("=", 1)
    parts = [p for p in dotted.strip().split(".") if p]
    if len(parts) < 2:
        raise ConfigurationError(f"override key {dotted!r} must name a section and a key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigurationError(f"override {text!r}: unparseable value ({e})")
    nested: Dict[str, Any] = {parts[-1]: value}
    for part in reversed(parts[:-1]):
        nested = {part: nested}
    return nested


def validate_scenario(data: Dict[str, Any]) -> ScenarioConfig:
    """Build a ScenarioConfig, re-raising pydantic errors with the offending field."""
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        raise ConfigurationError(f"{field or 'config'}: {first['msg']}", field=field or None)


def load_scenario(path: Optional[Union[str, Path]] = None, profile: str = "desk",
                  overrides: Iterable[Union[str, Dict[str, Any]]] = ()) -> ScenarioConfig:
    """Load a scenario.

    Args:
        path: Optional YAML file merged over the profile
        profile: Base profile name (desk or full)
        overrides: 'section.key=value' strings or nested mappings applied last

    Returns:
        Validated ScenarioConfig
    """
    data = profile_data(profile)
    if path is not None:
        data = _merge(data, _read_yaml(path))
    for item in overrides:
        data = _merge(data, parse_override(item) if isinstance(item, str) else item)
    cfg = validate_scenario(data)
    logger.debug(f"Loaded scenario profile={profile} path={path}")
    return cfg


def dotted_overrides(mapping: Dict[str, Any]) -> Dict[str, Any]:
    """Expand {'env.m_dt': 5} into {'env': {'m_dt': 5}}."""
    out: Dict[str, Any] = {}
    for key, value in mapping.items():
        parts = key.split(".")
        if len(parts) < 2:
            raise ConfigurationError(f"override key {key!r} must name a section and a key")
        nested: Dict[str, Any] = {parts[-1]: value}
        for part in reversed(parts[:-1]):
            nested = {part: nested}
        out = _merge(out, nested)
    return out


def dump_scenario(cfg: ScenarioConfig) -> str:
    """YAML text of the effective configuration."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)
