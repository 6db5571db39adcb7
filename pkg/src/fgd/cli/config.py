"""Run configuration: layering, validation and content hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..guidance import PRESETS
from ..samplers import INITS, SAMPLERS, VARIANCES
from ..denoisers import TEMPLATE_KINDS

PRIORS = ("gaussian", "templates", "synthetic")


class ConfigError(ValueError):
    """Bad configuration or missing input file (exit status 1)."""


@dataclass
class RunConfig:
    preset: str | None = None
    # schedule
    train_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    steps: int = 50
    # sampler
    sampler: str = "ddpm"
    eta: float = 0.0
    variance: str = "beta"
    seed: int = 0
    init: str = "noise"
    strength: float | None = None
    # guidance
    filter: str = "bilateral"
    t_start: int = 50
    t_stop: int = 25
    delta: float = 0.2
    sigma_spatial: float = 5.0
    sigma_value: float = 0.35
    # data
    prior: str = "synthetic"
    prior_std: float = 0.2
    templates: str | None = None
    synthetic_kind: str = "blobs"
    template_count: int = 4
    template_seed: int = 0
    guide: str | None = None
    guide_synthetic: str | None = None
    guide_seed: int = 123
    size: int = 16
    channels: int = 3
    # structure-distance metric (fixed so rows of a sweep stay comparable)
    metric_sigma_spatial: float = 5.0
    metric_sigma_value: float = 0.35
    dump_steps: bool = False
    # sweeps
    deltas: list[float] = field(default_factory=lambda: [0.05, 0.2, 0.5])
    seeds: list[int] = field(default_factory=lambda: [0])

    @property
    def guided(self) -> bool:
        return self.filter != "none"

    @property
    def ilvr_factor(self) -> int | None:
        if self.filter.startswith("ilvr-"):
            return int(self.filter.split("-", 1)[1])
        return None

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.preset is None or self.preset in PRESETS, f"unknown preset {self.preset!r}")
        need(self.sampler in SAMPLERS, f"sampler must be one of {SAMPLERS}")
        need(self.init in INITS, f"init must be one of {INITS}")
        need(self.variance in VARIANCES, f"variance must be one of {VARIANCES}")
        need(1 <= self.steps <= self.train_steps, "steps must lie in 1..train_steps")
        need(0 <= self.eta <= 1, "eta must lie in [0, 1]")
        need(self.seed >= 0, "seed must be non-negative")
        if self.init == "sdedit":
            need(self.strength is not None and 0 < self.strength <= 1, "sdedit needs --strength in (0, 1]")
        else:
            need(self.strength is None, "--strength only applies to sdedit init")
        need(self.filter in ("bilateral", "none") or self._ilvr_ok(), "filter must be bilateral, ilvr-N or none")
        need(self.delta > 0, "delta must be positive")
        need(self.t_stop <= self.t_start, "t_stop must not exceed t_start")
        need(self.sigma_spatial > 0 and self.sigma_value > 0, "sigmas must be positive")
        need(self.prior in PRIORS, f"prior must be one of {PRIORS}")
        need(self.synthetic_kind in TEMPLATE_KINDS, f"synthetic kind must be one of {TEMPLATE_KINDS}")
        need(self.guide_synthetic is None or self.guide_synthetic in TEMPLATE_KINDS,
             f"guide-synthetic must be one of {TEMPLATE_KINDS}")
        need(self.size >= 1 and self.channels >= 1 and self.template_count >= 1, "sizes must be positive")
        if self.prior == "templates":
            need(self.templates is not None, "prior 'templates' needs --templates DIR")
            need(Path(self.templates).is_dir(), f"templates directory {self.templates} does not exist")
        if self.guide is not None:
            need(Path(self.guide).is_file(), f"guide image {self.guide} does not exist")
        needs_guide = self.guided or self.init != "noise"
        need(not needs_guide or self.guide is not None or self.guide_synthetic is not None,
             "guidance and sdedit/ddim_inverted init need --guide or --guide-synthetic")
        need(len(self.deltas) > 0 and len(self.seeds) > 0, "sweep lists must be non-empty")
        return self

    def _ilvr_ok(self):
        try:
            return self.filter.startswith("ilvr-") and self.ilvr_factor >= 1
        except ValueError:
            return False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def run_key(self) -> dict:
        """Fields that determine a single run's output (sweep lists excluded)."""
        d = self.to_dict()
        d.pop("deltas")
        d.pop("seeds")
        return d


FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(data, dict) and "config" in data and isinstance(data["config"], dict):
        data = data["config"]  # a run manifest
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    unknown = set(data) - FIELDS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return data


def preset_values(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    return {
        "preset": name, "sampler": p.sampler, "steps": p.steps, "t_start": p.t_start,
        "t_stop": p.t_stop, "delta": p.delta, "sigma_spatial": p.sigma_spatial,
        "sigma_value": p.sigma_value, "init": p.init, "strength": p.strength,
    }


def resolve(flags: dict, config_path=None) -> RunConfig:
    """Layer defaults < preset < config file < explicit flags (``None`` flags are unset)."""
    file_values = load_config_file(config_path) if config_path else {}
    flags = {k: v for k, v in flags.items() if v is not None}
    preset = flags.get("preset", file_values.get("preset"))
    values = {}
    if preset is not None:
        values.update(preset_values(preset))
    values.update(file_values)
    values.update(flags)
    if "init" in flags and flags["init"] != "sdedit" and "strength" not in flags:
        values["strength"] = None
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg.validate()


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def input_digests(cfg: RunConfig) -> dict:
    out = {}
    if cfg.guide:
        out["guide"] = _file_digest(cfg.guide)
    if cfg.prior == "templates" and cfg.templates:
        h = hashlib.sha256()
        for p in sorted(Path(cfg.templates).iterdir()):
            if p.is_file():
                h.update(p.name.encode() + b"\0" + p.read_bytes())
        out["templates"] = h.hexdigest()
    return out


def config_hash(cfg: RunConfig) -> str:
    payload = {"config": cfg.run_key(), "inputs": input_digests(cfg)}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
