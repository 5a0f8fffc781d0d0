"""INI experiment configuration with a fixed schema.

Sections and keys::

    [data]        source (synthetic|geolife|csv), root, csv, modes, bbox, window
    [synthetic]   any field of SyntheticConfig
    [model]       kind, flow hyperparameters, gmm_* and lof_* settings
    [experiment]  scenario, variants, models, seeds, train_ratio
    [run]         seed, out

Lists are comma separated.  Unknown sections or keys are rejected before any
work starts.
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

from .evaluation import MODELS, SCENARIOS, VARIANTS, ModelSettings
from .flows import FlowConfig
from .geolife import BEIJING, MODES, BoundingBox
from .synthetic import SyntheticConfig

SOURCES = ("synthetic", "geolife", "csv")


class ConfigError(ValueError):
    pass


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in _str_list(text))


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in _str_list(text))


def _optional(conv: Callable) -> Callable:
    return lambda text: None if text.strip().lower() in ("", "none") else conv(text)


def _length(text: str):
    parts = _int_list(text)
    if len(parts) == 1:
        return parts[0]
    if len(parts) == 2:
        return parts
    raise ValueError("length is N or LO,HI")


@dataclass
class DataConfig:
    source: str = "synthetic"
    root: str | None = None
    csv: str | None = None
    modes: tuple[str, ...] | None = None  # None: both modes of the scenario
    bbox: BoundingBox = BEIJING
    window: int = 10


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    model: str = "maf"
    settings: ModelSettings = field(default_factory=lambda: ModelSettings(flow=FlowConfig(epochs=50, init="gaussian")))
    scenario: str = "car_vs_bus"
    variants: tuple[str, ...] = VARIANTS
    models: tuple[str, ...] = ("maf", "gmm", "lof")
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    seed: int = 1
    out: str = "out"

    def validate(self) -> "ExperimentConfig":
        d = self.data
        if d.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}, got {d.source!r}")
        if d.source == "geolife" and not d.root:
            raise ConfigError("data.root is required for the geolife source")
        if d.source == "csv" and not d.csv:
            raise ConfigError("data.csv is required for the csv source")
        if d.window < 1:
            raise ConfigError("data.window must be >= 1")
        for m in d.modes or ():
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}")
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}")
        for m in (self.model, *self.models):
            if m not in MODELS:
                raise ConfigError(f"unknown model {m!r}")
        if not self.variants or not self.models or not self.seeds:
            raise ConfigError("variants, models and seeds must be non-empty")
        if not 0.0 < self.settings.train_ratio < 1.0:
            raise ConfigError("train_ratio must lie in (0, 1)")
        if self.settings.lof_rd_variant not in ("standard", "paper"):
            raise ConfigError("lof_rd_variant must be 'standard' or 'paper'")
        return self

    @property
    def scenario_modes(self) -> tuple[str, str]:
        return SCENARIOS[self.scenario]

    def to_dict(self) -> dict:
        out = {
            "data": {**asdict(self.data), "bbox": str(self.data.bbox)},
            "model": self.model,
            "settings": asdict(self.settings),
            "scenario": self.scenario,
            "variants": list(self.variants),
            "models": list(self.models),
            "seeds": list(self.seeds),
            "seed": self.seed,
        }
        if self.data.source == "synthetic":
            out["synthetic"] = asdict(self.synthetic)
        return out


_DATA_KEYS = {
    "source": str, "root": _optional(str), "csv": _optional(str),
    "modes": _optional(_str_list), "bbox": BoundingBox.parse, "window": int,
}
_FLOW_KEYS = {
    "n_flows": int, "hidden": _int_list, "epochs": int, "batch_size": int, "lr": float,
    "beta1": float, "beta2": float, "eps": float, "scale_bound": float, "init": str,
}
_SETTINGS_KEYS = {
    "gmm_components": _int_list, "gmm_cov_types": _str_list, "gmm_folds": int,
    "lof_ks": _int_list, "lof_rd_variant": str, "max_train_segments": _optional(int),
}
_EXPERIMENT_KEYS = {
    "scenario": str, "variants": _str_list, "models": _str_list, "seeds": _int_list,
    "train_ratio": float,
}
_RUN_KEYS = {"seed": int, "out": str}


def _synthetic_converter(name: str, default) -> Callable:
    if name == "length":
        return _length
    if name == "bus_speed":
        return _optional(float)
    if name == "bus_route_bearings":
        return _optional(_float_list)
    if isinstance(default, bool):
        return lambda t: t.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return _float_list
    raise ConfigError(f"synthetic.{name} cannot be set from a config file")


_SYNTHETIC_DEFAULTS = SyntheticConfig()
_SYNTHETIC_KEYS = {f.name: _synthetic_converter(f.name, getattr(_SYNTHETIC_DEFAULTS, f.name))
                   for f in fields(SyntheticConfig)}
_SCHEMA = {
    "data": _DATA_KEYS,
    "synthetic": _SYNTHETIC_KEYS,
    "model": {"kind": str, **_FLOW_KEYS, **_SETTINGS_KEYS},
    "experiment": _EXPERIMENT_KEYS,
    "run": _RUN_KEYS,
}


def _convert(section: str, key: str, text: str):
    try:
        return _SCHEMA[section][key](text)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key} = {text!r}: {exc}") from exc


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values.setdefault(section, {})[key] = _convert(section, key, raw)
    return build_config(values)


def build_config(values: dict[str, dict]) -> ExperimentConfig:
    """Assemble a validated config from already-typed section dictionaries."""
    cfg = ExperimentConfig()
    data = replace(cfg.data, **values.get("data", {}))
    synthetic = replace(cfg.synthetic, **values.get("synthetic", {}))
    model_vals = dict(values.get("model", {}))
    kind = model_vals.pop("kind", cfg.model)
    flow_vals = {k: v for k, v in model_vals.items() if k in _FLOW_KEYS}
    settings_vals = {k: v for k, v in model_vals.items() if k in _SETTINGS_KEYS}
    exp = dict(values.get("experiment", {}))
    if "train_ratio" in exp:
        settings_vals["train_ratio"] = exp.pop("train_ratio")
    try:
        flow = replace(cfg.settings.flow, **flow_vals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    settings = replace(cfg.settings, flow=flow, **settings_vals)
    run = values.get("run", {})
    out = replace(cfg, data=data, synthetic=synthetic, model=kind, settings=settings, **exp, **run)
    return out.validate()


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig().validate()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
