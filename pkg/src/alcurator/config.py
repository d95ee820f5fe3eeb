"""Experiment configuration: parsing, validation, canonical digest.

Config files are flat "key = value" lines with dotted key prefixes grouping
related settings; '#' starts a comment and lists are comma-separated. Every
field is validated individually, and errors name the offending key. The
canonical serialization of the effective (post-default) configuration is
hashed into a short digest that tags every output row, so results can always
be traced back to the exact configuration that produced them.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Optional, TypeVar

from .acquire import POW_VARIANTS, SCHEDULE_KINDS, STRATEGY_IDS, BatchSchedule
from .gp import (
    DEFAULT_BOUNDS_FACTOR,
    DEFAULT_RESTARTS,
    MAX_EXACT_TRAIN,
    NOISE_GRID,
    GpHyperparams,
)
from .moldata import SynthSpec

T = TypeVar("T")

DATASET_SOURCES = ("synthetic", "xyz", "features")
ORACLE_MODES = ("precomputed", "deferred")


class ConfigError(ValueError):
    """A configuration problem; the message begins with the field name."""


@dataclass(frozen=True)
class DatasetSettings:
    source: str
    name: str
    xyz_path: Optional[str] = None
    features_path: Optional[str] = None
    labels_path: Optional[str] = None
    synth: Optional[SynthSpec] = None
    synth_seed: int = 0


@dataclass(frozen=True)
class DescriptorSettings:
    elements: Optional[tuple[str, ...]] = None
    grid_min: float = 0.0
    grid_max: float = 1.2
    grid_n: int = 100
    sigma: float = 0.02
    weight_scale: float = 0.5
    cache_path: Optional[str] = None


@dataclass(frozen=True)
class GpSettings:
    hyper: GpHyperparams
    optimize: bool = True
    restarts: int = DEFAULT_RESTARTS
    bounds_factor: float = DEFAULT_BOUNDS_FACTOR
    max_exact_train: int = MAX_EXACT_TRAIN
    reoptimize_each_iteration: bool = True


@dataclass(frozen=True)
class TargetSettings:
    fraction: Optional[float] = None
    epsilon: Optional[float] = None

    @property
    def present(self) -> bool:
        return self.fraction is not None or self.epsilon is not None


@dataclass(frozen=True)
class OracleSettings:
    mode: str = "precomputed"
    request_path: Optional[str] = None
    response_path: Optional[str] = None


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSettings
    descriptor: DescriptorSettings
    gp: GpSettings
    strategy: str
    schedule: BatchSchedule
    target: TargetSettings
    seeds: tuple[int, ...]
    n_test: Optional[int] = None
    max_train: Optional[int] = None
    oracle: OracleSettings = OracleSettings()
    noise_levels: tuple[float, ...] = NOISE_GRID
    noise_grid_n_train: Optional[int] = None


def parse_config_text(text: str) -> dict[str, str]:
    """Split config text into a raw key -> value map."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(
                f"line {lineno}: expected 'key = value', got {line.strip()!r}"
            )
        key, value = stripped.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in raw:
            raise ConfigError(f"{key}: duplicated (line {lineno})")
        raw[key] = value
    return raw


def _parse_int(value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"expected an integer, got {value!r}") from None


def _parse_float(value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ValueError(f"expected a number, got {value!r}") from None


def _parse_bool(value: str) -> bool:
    if value == "true":
        return True
    if value == "false":
        return False
    raise ValueError(f"expected true or false, got {value!r}")


def _parse_str(value: str) -> str:
    if not value:
        raise ValueError("expected a non-empty value")
    return value


def _split_list(value: str) -> list[str]:
    parts = [p.strip() for p in value.split(",")]
    if any(not p for p in parts):
        raise ValueError(f"malformed list {value!r}")
    return parts


def _parse_int_list(value: str) -> tuple[int, ...]:
    return tuple(_parse_int(p) for p in _split_list(value))


def _parse_float_list(value: str) -> tuple[float, ...]:
    return tuple(_parse_float(p) for p in _split_list(value))


def _parse_str_list(value: str) -> tuple[str, ...]:
    return tuple(_split_list(value))


class _Schema:
    """Tracks which raw keys were consumed and wraps errors with key names."""

    def __init__(self, raw: dict[str, str]):
        self.raw = raw
        self.seen: set[str] = set()

    def get(
        self,
        key: str,
        parser: Callable[[str], T],
        default: Optional[T] = None,
        required: bool = False,
    ) -> Optional[T]:
        self.seen.add(key)
        if key not in self.raw:
            if required:
                raise ConfigError(f"{key}: required but not set")
            return default
        try:
            return parser(self.raw[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def has(self, key: str) -> bool:
        return key in self.raw

    def forbid(self, key: str, reason: str) -> None:
        self.seen.add(key)
        if key in self.raw:
            raise ConfigError(f"{key}: {reason}")

    def check_unknown(self) -> None:
        unknown = sorted(set(self.raw) - self.seen)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unrecognized key")


def _enum_parser(allowed: tuple[str, ...]) -> Callable[[str], str]:
    def parse(value: str) -> str:
        if value not in allowed:
            raise ValueError(
                f"must be one of {', '.join(allowed)}; got {value!r}"
            )
        return value

    return parse


def config_from_raw(raw: dict[str, str]) -> ExperimentConfig:
    s = _Schema(raw)
    source = s.get(
        "dataset.source", _enum_parser(DATASET_SOURCES), required=True
    )

    synth: Optional[SynthSpec] = None
    synth_seed = 0
    xyz_path = features_path = labels_path = None
    if source == "synthetic":
        for key in ("dataset.xyz_path", "dataset.features_path"):
            s.forbid(key, "not applicable when dataset.source = synthetic")
        s.forbid(
            "dataset.labels_path",
            "not applicable when dataset.source = synthetic",
        )
        label_mode = s.get(
            "synth.label_mode",
            _enum_parser(("unimodal", "bimodal")),
            default="bimodal",
        )
        n_modes = 1 if label_mode == "unimodal" else 2
        default_centers = (-9.0,) if n_modes == 1 else (-8.5, -10.5)
        default_widths = (1.0,) if n_modes == 1 else (0.4, 0.4)
        pool_size = s.get("synth.pool_size", _parse_int, required=True)
        if pool_size < 1:
            raise ConfigError("synth.pool_size: must be positive")
        feature_dim = s.get("synth.feature_dim", _parse_int, default=3)
        if feature_dim < 1:
            raise ConfigError("synth.feature_dim: must be positive")
        mode_centers = s.get(
            "synth.mode_centers", _parse_float_list, default=default_centers
        )
        if len(mode_centers) != n_modes:
            raise ConfigError(
                f"synth.mode_centers: {label_mode} needs {n_modes} values, "
                f"got {len(mode_centers)}"
            )
        mode_widths = s.get(
            "synth.mode_widths", _parse_float_list, default=default_widths
        )
        if len(mode_widths) != n_modes:
            raise ConfigError(
                f"synth.mode_widths: {label_mode} needs {n_modes} values, "
                f"got {len(mode_widths)}"
            )
        if any(w <= 0 for w in mode_widths):
            raise ConfigError("synth.mode_widths: widths must be positive")
        noise_sd = s.get("synth.noise_sd", _parse_float, default=0.1)
        if noise_sd < 0:
            raise ConfigError("synth.noise_sd: must be non-negative")
        synth = SynthSpec(
            pool_size=pool_size,
            feature_dim=feature_dim,
            label_mode=label_mode,
            mode_centers=mode_centers,
            mode_widths=mode_widths,
            noise_sd=noise_sd,
            name=s.get("dataset.name", _parse_str, default="synthetic"),
        )
        synth_seed = s.get("synth.seed", _parse_int, default=0)
        if synth_seed < 0:
            raise ConfigError("synth.seed: must be non-negative")
        name = synth.name
    else:
        for key in (
            "synth.pool_size",
            "synth.feature_dim",
            "synth.label_mode",
            "synth.mode_centers",
            "synth.mode_widths",
            "synth.noise_sd",
            "synth.seed",
        ):
            s.forbid(key, "only applicable when dataset.source = synthetic")
        if source == "xyz":
            xyz_path = s.get("dataset.xyz_path", _parse_str, required=True)
            s.forbid(
                "dataset.features_path",
                "not applicable when dataset.source = xyz",
            )
            labels_path = s.get("dataset.labels_path", _parse_str)
            name = s.get("dataset.name", _parse_str, default=xyz_path)
        else:
            features_path = s.get(
                "dataset.features_path", _parse_str, required=True
            )
            s.forbid(
                "dataset.xyz_path", "not applicable when dataset.source = features"
            )
            labels_path = s.get("dataset.labels_path", _parse_str, required=True)
            name = s.get("dataset.name", _parse_str, default=features_path)

    dataset = DatasetSettings(
        source=source,
        name=name,
        xyz_path=xyz_path,
        features_path=features_path,
        labels_path=labels_path,
        synth=synth,
        synth_seed=synth_seed,
    )

    descriptor_applicable = source == "xyz"
    if not descriptor_applicable:
        for key in (
            "descriptor.elements",
            "descriptor.grid_min",
            "descriptor.grid_max",
            "descriptor.grid_n",
            "descriptor.sigma",
            "descriptor.weight_scale",
            "descriptor.cache_path",
        ):
            s.forbid(
                key,
                f"only applicable when dataset.source = xyz "
                f"(features are precomputed for {source})",
            )
        descriptor = DescriptorSettings()
    else:
        descriptor = DescriptorSettings(
            elements=s.get("descriptor.elements", _parse_str_list),
            grid_min=s.get("descriptor.grid_min", _parse_float, default=0.0),
            grid_max=s.get("descriptor.grid_max", _parse_float, default=1.2),
            grid_n=s.get("descriptor.grid_n", _parse_int, default=100),
            sigma=s.get("descriptor.sigma", _parse_float, default=0.02),
            weight_scale=s.get(
                "descriptor.weight_scale", _parse_float, default=0.5
            ),
            cache_path=s.get("descriptor.cache_path", _parse_str),
        )
        if descriptor.grid_min >= descriptor.grid_max:
            raise ConfigError("descriptor.grid_min: must lie below descriptor.grid_max")
        if descriptor.grid_n < 2:
            raise ConfigError("descriptor.grid_n: must be at least 2")
        if descriptor.sigma <= 0:
            raise ConfigError("descriptor.sigma: must be positive")
        if descriptor.weight_scale < 0:
            raise ConfigError("descriptor.weight_scale: must be non-negative")

    length_scale = s.get("gp.length_scale", _parse_float, default=700.0)
    if length_scale <= 0:
        raise ConfigError("gp.length_scale: must be positive")
    signal_variance = s.get("gp.signal_variance", _parse_float, default=20.0)
    if signal_variance <= 0:
        raise ConfigError("gp.signal_variance: must be positive")
    noise = s.get("gp.noise", _parse_float, default=1e-10)
    if noise < 0:
        raise ConfigError("gp.noise: must be non-negative")
    hyper = GpHyperparams(
        length_scale=length_scale, signal_variance=signal_variance, noise=noise
    )
    gp_settings = GpSettings(
        hyper=hyper,
        optimize=s.get("gp.optimize", _parse_bool, default=True),
        restarts=s.get("gp.restarts", _parse_int, default=DEFAULT_RESTARTS),
        bounds_factor=s.get(
            "gp.bounds_factor", _parse_float, default=DEFAULT_BOUNDS_FACTOR
        ),
        max_exact_train=s.get(
            "gp.max_exact_train", _parse_int, default=MAX_EXACT_TRAIN
        ),
        reoptimize_each_iteration=s.get(
            "loop.reoptimize_each_iteration", _parse_bool, default=True
        ),
    )
    if gp_settings.restarts < 0:
        raise ConfigError("gp.restarts: must be non-negative")
    if gp_settings.bounds_factor <= 1.0:
        raise ConfigError("gp.bounds_factor: must exceed 1")
    if gp_settings.max_exact_train < 1:
        raise ConfigError("gp.max_exact_train: must be positive")

    strategy = s.get("strategy", _enum_parser(STRATEGY_IDS), required=True)

    n_const = s.get("schedule.n_const", _parse_int, default=1000)
    if n_const < 1:
        raise ConfigError("schedule.n_const: must be positive")
    n_init = s.get("schedule.n_init", _parse_int, default=1000)
    if n_init < 1:
        raise ConfigError("schedule.n_init: must be positive")
    schedule = BatchSchedule(
        kind=s.get("schedule.kind", _enum_parser(SCHEDULE_KINDS), default="POW"),
        n_const=n_const,
        n_init=n_init,
        pow_variant=s.get(
            "schedule.pow_variant", _enum_parser(POW_VARIANTS), default="literal"
        ),
    )

    target = TargetSettings(
        fraction=s.get("target.fraction", _parse_float),
        epsilon=s.get("target.epsilon", _parse_float),
    )
    if target.fraction is not None and not 0.0 < target.fraction < 1.0:
        raise ConfigError("target.fraction: must lie in (0, 1)")
    if strategy == "property_search" and not target.present:
        raise ConfigError(
            "target.epsilon: required for strategy = property_search "
            "(set target.epsilon or target.fraction)"
        )

    seeds = s.get("run.seeds", _parse_int_list, required=True)
    assert seeds is not None
    if len(seeds) == 0:
        raise ConfigError("run.seeds: needs at least one seed")
    if any(seed < 0 for seed in seeds):
        raise ConfigError("run.seeds: seeds must be non-negative")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("run.seeds: seeds must be distinct")

    n_test = s.get("pool.n_test", _parse_int)
    if n_test is not None and n_test < 0:
        raise ConfigError("pool.n_test: must be non-negative")
    max_train = s.get("run.max_train", _parse_int)
    if max_train is not None and max_train < 1:
        raise ConfigError("run.max_train: must be positive")

    oracle = OracleSettings(
        mode=s.get("oracle.mode", _enum_parser(ORACLE_MODES), default="precomputed"),
        request_path=s.get("oracle.request_path", _parse_str),
        response_path=s.get("oracle.response_path", _parse_str),
    )

    noise_levels = s.get(
        "noise_grid.levels", _parse_float_list, default=NOISE_GRID
    )
    assert noise_levels is not None
    if any(level < 0 for level in noise_levels):
        raise ConfigError("noise_grid.levels: levels must be non-negative")
    if len(noise_levels) == 0:
        raise ConfigError("noise_grid.levels: needs at least one level")
    noise_grid_n_train = s.get("noise_grid.n_train", _parse_int)
    if noise_grid_n_train is not None and noise_grid_n_train < 1:
        raise ConfigError("noise_grid.n_train: must be positive")

    s.check_unknown()
    return ExperimentConfig(
        dataset=dataset,
        descriptor=descriptor,
        gp=gp_settings,
        strategy=strategy,
        schedule=schedule,
        target=target,
        seeds=tuple(seeds),
        n_test=n_test,
        max_train=max_train,
        oracle=oracle,
        noise_levels=tuple(noise_levels),
        noise_grid_n_train=noise_grid_n_train,
    )


def config_from_text(text: str) -> ExperimentConfig:
    return config_from_raw(parse_config_text(text))


def read_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    return config_from_text(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def effective_key_values(cfg: ExperimentConfig) -> dict[str, str]:
    """The full post-default configuration as raw key -> value strings.

    Round-trips: parsing the rendered text reproduces an equal config.
    Unset optional fields are omitted.
    """
    out: dict[str, str] = {}

    def put(key: str, value) -> None:
        if value is not None:
            out[key] = _fmt(value)

    d = cfg.dataset
    put("dataset.source", d.source)
    put("dataset.name", d.name)
    put("dataset.xyz_path", d.xyz_path)
    put("dataset.features_path", d.features_path)
    put("dataset.labels_path", d.labels_path)
    if d.synth is not None:
        put("synth.pool_size", d.synth.pool_size)
        put("synth.feature_dim", d.synth.feature_dim)
        put("synth.label_mode", d.synth.label_mode)
        put("synth.mode_centers", d.synth.mode_centers)
        put("synth.mode_widths", d.synth.mode_widths)
        put("synth.noise_sd", d.synth.noise_sd)
        put("synth.seed", d.synth_seed)
    if cfg.dataset.source == "xyz":
        ds = cfg.descriptor
        put("descriptor.elements", ds.elements)
        put("descriptor.grid_min", ds.grid_min)
        put("descriptor.grid_max", ds.grid_max)
        put("descriptor.grid_n", ds.grid_n)
        put("descriptor.sigma", ds.sigma)
        put("descriptor.weight_scale", ds.weight_scale)
        put("descriptor.cache_path", ds.cache_path)
    g = cfg.gp
    put("gp.length_scale", g.hyper.length_scale)
    put("gp.signal_variance", g.hyper.signal_variance)
    put("gp.noise", g.hyper.noise)
    put("gp.optimize", g.optimize)
    put("gp.restarts", g.restarts)
    put("gp.bounds_factor", g.bounds_factor)
    put("gp.max_exact_train", g.max_exact_train)
    put("loop.reoptimize_each_iteration", g.reoptimize_each_iteration)
    put("strategy", cfg.strategy)
    put("schedule.kind", cfg.schedule.kind)
    put("schedule.n_const", cfg.schedule.n_const)
    put("schedule.n_init", cfg.schedule.n_init)
    put("schedule.pow_variant", cfg.schedule.pow_variant)
    put("target.fraction", cfg.target.fraction)
    put("target.epsilon", cfg.target.epsilon)
    put("pool.n_test", cfg.n_test)
    put("run.seeds", cfg.seeds)
    put("run.max_train", cfg.max_train)
    put("oracle.mode", cfg.oracle.mode)
    put("oracle.request_path", cfg.oracle.request_path)
    put("oracle.response_path", cfg.oracle.response_path)
    put("noise_grid.levels", cfg.noise_levels)
    put("noise_grid.n_train", cfg.noise_grid_n_train)
    return out


def render_config(cfg: ExperimentConfig) -> str:
    pairs = effective_key_values(cfg)
    return "\n".join(f"{k} = {v}" for k, v in sorted(pairs.items())) + "\n"


def config_digest(cfg: ExperimentConfig) -> str:
    """Short stable hash of the effective configuration."""
    return hashlib.sha256(render_config(cfg).encode()).hexdigest()[:12]
