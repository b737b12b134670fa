"""Flat ``key = value`` pipeline configuration.

Every key has a default; unknown keys and unparsable values raise
:class:`ConfigError` naming the offending key.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .ga import PER_BIT, PER_GENOME, GaParams
from .oracle import OracleConfig
from .trees import BEST_EXHAUSTIVE, EXTRA_RANDOM, ForestParams


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def _floats(text: str) -> tuple[float, ...]:
    items = [t for t in text.replace(",", " ").split() if t]
    if not items:
        raise ValueError("empty list")
    return tuple(float(t) for t in items)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _rt_scale(text: str):
    t = text.strip().lower()
    return "auto" if t == "auto" else float(t)


def _choice(*options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


# key -> (parser, default)
SCHEMA = {
    # structure / oracle
    "grid_nx": (int, 8),
    "grid_ny": (int, 5),
    "grid_nz": (int, 2),
    "lx": (float, 0.5),
    "ly": (float, 0.25),
    "lz": (float, 0.05),
    "n_modes": (int, 12),
    "damping": (float, 0.02),
    # pipeline
    "seed": (int, 42),
    "seed_freq": (float, 100.0),
    "target_freqs": (_floats, (50.0, 70.0, 98.0, 102.0, 120.0, 150.0)),
    "rt_list": (_floats, (0.8, 0.7, 0.5, 0.3)),
    "rt_scale": (_rt_scale, "auto"),
    "random_trials": (int, 10),
    "knn_k": (int, 5),
    "write_predictions": (_bool, True),
    # GA
    "ga_population": (int, 24),
    "ga_generations": (int, 40),
    "ga_keep_ratio": (float, 0.4),
    "ga_random_ratio": (float, 0.1),
    "ga_mutation": (float, 0.02),
    "ga_mutation_mode": (_choice(PER_GENOME, PER_BIT), PER_GENOME),
    "ga_density": (float, 0.5),
    "ga_holdout": (int, 5000),
    "fitness_trees": (int, 20),
    # final forest
    "forest_trees": (int, 100),
    "forest_m_try": (int, 8),
    "forest_n_min": (int, 2),
    "forest_bootstrap": (_bool, True),
    "forest_split": (_choice(EXTRA_RANDOM, BEST_EXHAUSTIVE), EXTRA_RANDOM),
}


@dataclass(frozen=True)
class PipelineConfig:
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: default for k, (_, default) in SCHEMA.items()}
        for k, v in self.values.items():
            if k not in SCHEMA:
                raise ConfigError(k, "unknown key")
            merged[k] = v
        object.__setattr__(self, "values", merged)
        self.validate()

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def with_overrides(self, **kw) -> PipelineConfig:
        return PipelineConfig({**self.values, **kw})

    def validate(self) -> None:
        v = self.values
        if not v["seed_freq"] > 0:
            raise ConfigError("seed_freq", "must be positive")
        if any(not f > 0 for f in v["target_freqs"]):
            raise ConfigError("target_freqs", "frequencies must be positive")
        if any(not r > 0 for r in v["rt_list"]):
            raise ConfigError("rt_list", "tolerances must be positive")
        if v["rt_scale"] != "auto" and not v["rt_scale"] > 0:
            raise ConfigError("rt_scale", "must be positive or 'auto'")
        if v["random_trials"] < 3:
            raise ConfigError("random_trials", "must be >= 3")
        if v["seed"] < 0:
            raise ConfigError("seed", "must be non-negative")
        try:
            self.oracle().validate()
        except ValueError as exc:
            raise ConfigError("grid/oracle", str(exc)) from exc
        try:
            self.forest_params().validate()
            self.ga_params(rt=1.0).validate()
        except ValueError as exc:
            raise ConfigError("forest/ga", str(exc)) from exc

    def oracle(self) -> OracleConfig:
        v = self.values
        return OracleConfig(
            nx=v["grid_nx"], ny=v["grid_ny"], nz=v["grid_nz"],
            lx=v["lx"], ly=v["ly"], lz=v["lz"],
            n_modes=v["n_modes"], damping=v["damping"], seed=v["seed"],
        )

    def forest_params(self, seed: int = 0) -> ForestParams:
        v = self.values
        return ForestParams(
            n_trees=v["forest_trees"], m_try=v["forest_m_try"], n_min=v["forest_n_min"],
            bootstrap=v["forest_bootstrap"], split=v["forest_split"], seed=seed,
        )

    def ga_params(self, rt: float, seed: int = 0) -> GaParams:
        v = self.values
        return GaParams(
            population=v["ga_population"],
            generations=v["ga_generations"],
            keep_ratio=v["ga_keep_ratio"],
            random_ratio=v["ga_random_ratio"],
            mutation=v["ga_mutation"],
            mutation_mode=v["ga_mutation_mode"],
            rt=rt,
            density=v["ga_density"],
            holdout=v["ga_holdout"],
            fitness_forest=ForestParams(
                n_trees=v["fitness_trees"], m_try=v["forest_m_try"], n_min=v["forest_n_min"],
                bootstrap=v["forest_bootstrap"], split=v["forest_split"],
            ),
            seed=seed,
        )

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(key or f"line {lineno}", f"{source}:{lineno}: expected 'key = value'")
        if key not in SCHEMA:
            raise ConfigError(key, f"{source}:{lineno}: unknown key")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(value.strip())
        except ValueError as exc:
            raise ConfigError(key, f"{source}:{lineno}: {exc}") from exc
    return PipelineConfig(values)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path))


def render_config(cfg: PipelineConfig) -> str:
    out = []
    for k, v in cfg.values.items():
        if isinstance(v, tuple):
            v = ", ".join(repr(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"


__all__ = ["ConfigError", "PipelineConfig", "SCHEMA", "load_config", "parse_config", "render_config"]
