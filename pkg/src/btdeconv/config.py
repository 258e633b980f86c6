"""Pipeline configuration: defaults, TOML loading and overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .exceptions import DimensionError
from .hrf import check_identifiable
from .solver import SolverConfig


@dataclass(frozen=True)
class PipelineConfig:
    fs: float = 4.0
    filter_length: int = 41
    stack_depth: int | None = None
    n_lags: int | None = None
    n_starts: int = 20
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    cost_tolerance: float = 1e-12
    truncation_fraction: float = 0.90
    cluster_cut: float = 0.5
    m_regions: int = 3
    n_reps: int = 20
    stim_duration: float = 4.0
    rest_range: tuple = (10.0, 15.0)
    snr_db: float = 0.0
    snr_list: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0)
    mc_iterations: int = 30
    seed: int = 0
    n_jobs: int = 1
    baseline_pl: float = 2.0
    baseline_fwhm: float = 2.9
    fano_window: float = 10.0
    peak_min_separation: float = 10.0
    output_dir: str = "out"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        order = self.filter_length - 1
        if self.stack_depth is None:
            object.__setattr__(self, "stack_depth", 2 * order)
        if self.n_lags is None:
            object.__setattr__(self, "n_lags", order + 1)
        object.__setattr__(self, "rest_range", tuple(float(v) for v in self.rest_range))
        object.__setattr__(self, "snr_list", tuple(float(v) for v in self.snr_list))
        if self.filter_length < 2:
            raise DimensionError("filter_length must be >= 2")
        check_identifiable(self.m_regions, order, self.stack_depth)
        if self.n_lags < 1:
            raise DimensionError("n_lags must be >= 1")

    @property
    def filter_order(self) -> int:
        return self.filter_length - 1

    @property
    def dt(self) -> float:
        return 1.0 / self.fs

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            max_iterations=self.max_iterations,
            gradient_tolerance=self.gradient_tolerance,
            cost_tolerance=self.cost_tolerance,
            n_starts=self.n_starts,
            seed=self.seed,
            filter_length=self.filter_length,
            dt=self.dt,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d

    def hash(self) -> str:
        """Short digest of every numeric setting (output location excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("n_jobs")
        blob = json.dumps(d, sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def provenance(self) -> dict:
        return {"config_hash": self.hash(), "seed": self.seed}

    def with_overrides(self, **overrides) -> "PipelineConfig":
        known = {f.name: f for f in fields(self)}
        clean = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in known:
                raise KeyError(f"unknown config key {key!r}")
            clean[key] = _coerce(value, getattr(self, key))
        stack_free = "filter_length" in clean and "stack_depth" not in clean
        lags_free = "filter_length" in clean and "n_lags" not in clean
        if stack_free:
            clean["stack_depth"] = None
        if lags_free:
            clean["n_lags"] = None
        return replace(self, **clean)


def _coerce(value, current):
    if isinstance(value, str) and current is not None and not isinstance(current, str):
        if isinstance(current, tuple):
            return tuple(float(v) for v in value.split(",") if v.strip())
        if isinstance(current, bool):
            return value.lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(value)
        if isinstance(current, float):
            return float(value)
    if isinstance(value, str) and current is None:
        return int(value)
    return value


def load_config(path=None, **overrides) -> PipelineConfig:
    """Defaults, updated by a TOML file (flat or under ``[pipeline]``), then by overrides."""
    cfg = PipelineConfig()
    if path is not None:
        with open(Path(path), "rb") as fh:
            data = tomllib.load(fh)
        data = data.get("pipeline", data)
        cfg = cfg.with_overrides(**data)
    return cfg.with_overrides(**overrides)
