"""Run configuration and its flat `key = value` text form."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .integrator import IntegratorSettings
from .scenarios import OVERRIDE_KEYS, ScenarioSpec, flat_settings, get_scenario, override
from .states import FieldProfile, PacketParams

OUT_DIR_ENV = "ZIGZAG_OUT"


class ConfigError(ValueError):
    pass


def _annotations() -> dict[str, str]:
    out = {}
    for cls in (ScenarioSpec, PacketParams, FieldProfile, IntegratorSettings):
        for f in fields(cls):
            out.setdefault(f.name, str(f.type))
    return out


_TYPES = _annotations()


def parse_value(key: str, text: str):
    """Convert the text of setting `key` to its declared type."""
    if key not in OVERRIDE_KEYS:
        raise ConfigError(f"unknown setting {key!r}")
    kind = _TYPES[key]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "complex":
            return complex(text.replace(" ", ""))
        if kind.startswith("tuple"):
            return tuple(float(v) for v in text.strip("()").split(",") if v.strip())
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {kind}") from None


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, complex):
        return repr(value).strip("()")
    return repr(value) if isinstance(value, float) else str(value)


@dataclass
class RunConfig:
    """Scenario id plus overrides; `spec` resolves them against the catalog entry."""

    scenario: str
    overrides: dict = field(default_factory=dict)
    max_failures: int = 0

    def spec(self) -> ScenarioSpec:
        try:
            base = get_scenario(self.scenario)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        try:
            return override(base, self.overrides)
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"invalid override: {exc}") from None

    def to_text(self) -> str:
        lines = [f"scenario = {self.scenario}", f"max_failures = {self.max_failures}"]
        for key, value in flat_settings(self.spec()).items():
            lines.append(f"{key} = {format_value(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> RunConfig:
        scenario, max_failures, overrides = None, 0, {}
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                if key == "scenario":
                    scenario = value
                elif key == "max_failures":
                    max_failures = int(value)
                else:
                    overrides[key] = parse_value(key, value)
            except (ConfigError, ValueError) as exc:
                raise ConfigError(f"{source}:{n}: {exc}") from None
        if scenario is None:
            raise ConfigError(f"{source}: missing 'scenario'")
        cfg = cls(scenario, overrides, max_failures)
        cfg.spec()
        return cfg
