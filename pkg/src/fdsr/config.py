"""Run configuration: a flat ``section.key = value`` text file plus overrides.

Example::

    # comments start with '#'
    fdsr.base_channels = 8
    fdsr.dilations = 1,2
    train.initial_lr = 0.002
    train.max_steps = none
    metrics.edge_threshold = 0.012

Sections are ``fdsr`` (network), ``train`` (optimisation) and ``metrics``
(evaluation thresholds). Unknown sections or keys are errors. Values are
parsed according to the field type of the matching dataclass.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Union

from .metrics import MetricConfig
from .net import FdsrConfig
from .train import TrainConfig

SECTIONS = {"fdsr": FdsrConfig, "train": TrainConfig, "metrics": MetricConfig}


class ConfigError(ValueError):
    pass


# Named starting points; a --config file and flags are applied on top.
PRESETS: Dict[str, Dict[str, str]] = {
    "default": {},
    # single-sample memorisation check on a 128x128 scene
    "overfit": {
        "fdsr.base_channels": "8",
        "fdsr.guide_channels": "32",
        "train.initial_lr": "0.008",
        "train.beta2": "0.99",
        "train.halve_every": "1500",
        "train.max_steps": "2000",
        "train.batch": "1",
        "train.patch": "0",
        "train.flip": "false",
        "train.val_every": "250",
    },
    # desk-scale training on a few dozen synthetic scenes
    "small": {
        "fdsr.base_channels": "16",
        "fdsr.guide_channels": "16",
        "train.initial_lr": "0.002",
        "train.halve_every": "2500",
        "train.max_steps": "5000",
        "train.batch": "4",
        "train.patch": "64",
        "train.val_every": "1000",
    },
}


@dataclass
class RunConfig:
    fdsr: FdsrConfig = field(default_factory=FdsrConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    def to_text(self) -> str:
        """Serialise every field, one ``section.key = value`` line each (sorted)."""
        lines = []
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                lines.append(f"{section}.{f.name} = {_format(getattr(obj, f.name))}")
        return "\n".join(sorted(lines)) + "\n"


def _format(v: Any) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_format(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(raw: str, hint: Any, key: str) -> Any:
    raw = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is Union:
        if raw.lower() == "none" and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _parse(raw, inner[0], key)
    if origin in (tuple, typing.Tuple):
        return tuple(_parse(x, args[0], key) for x in raw.split(",") if x.strip())
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {hint.__name__}") from None
    return raw


def _split_key(key: str) -> tuple:
    if "." not in key:
        raise ConfigError(f"key {key!r} must be of the form section.name")
    section, name = key.split(".", 1)
    if section not in SECTIONS:
        raise ConfigError(f"unknown config section {section!r} (expected one of {sorted(SECTIONS)})")
    hints = typing.get_type_hints(SECTIONS[section])
    names = {f.name for f in dataclasses.fields(SECTIONS[section])}
    if name not in names:
        raise ConfigError(f"unknown config key {key!r}")
    return section, name, hints[name]


def parse_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Raw ``key -> value`` strings from config text; duplicate keys are errors."""
    out: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        _split_key(key)
        out[key] = value
    return out


def resolve(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
    base: Optional[RunConfig] = None,
    preset: str = "default",
) -> RunConfig:
    """Defaults (or ``base``) <- preset <- config file <- overrides, then validate.

    Override values may be strings (parsed like file values) or typed values;
    ``None`` overrides are ignored.
    """
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r} (expected one of {sorted(PRESETS)})")
    values: Dict[str, Any] = dict(PRESETS[preset])
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        values.update(parse_text(p.read_text(), str(p)))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    base = base or RunConfig()
    parts: Dict[str, Dict[str, Any]] = {s: dataclasses.asdict(getattr(base, s)) for s in SECTIONS}
    for key, v in values.items():
        section, name, hint = _split_key(key)
        parts[section][name] = _parse(v, hint, key) if isinstance(v, str) else v
    try:
        fdsr = FdsrConfig.from_dict(parts["fdsr"])
        fdsr.validate()
        return RunConfig(fdsr=fdsr, train=TrainConfig(**parts["train"]), metrics=MetricConfig(**parts["metrics"]))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def write_resolved(cfg: RunConfig, out_dir: Union[str, Path], name: str = "resolved_config.txt") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = out / name
    p.write_text(cfg.to_text())
    return p


def keys() -> Iterable[str]:
    for section, cls in SECTIONS.items():
        for f in dataclasses.fields(cls):
            yield f"{section}.{f.name}"
