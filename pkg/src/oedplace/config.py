"""Run configuration.

A run is described by a small versioned YAML document with sections for the
forward problem, the prior, the candidate sensors, the noise model, the
low-rank sketch, the design search, the MAP solver, and the evaluation stage.
Unknown keys are rejected (typos should fail loudly, not silently fall back
to defaults), relative file paths are resolved against the directory of the
config file, and every stochastic choice is driven by the single ``seed``.

Command-line overrides use dotted paths, e.g. ``design.r=8`` or
``problem.grid.nx=32``; values are parsed as YAML scalars.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ValidationError

__all__ = [
    "SCHEMA_VERSION",
    "GridConfig",
    "PriorConfig",
    "ProblemConfig",
    "CandidateConfig",
    "NoiseConfig",
    "LowRankConfig",
    "DesignConfig",
    "SolverConfig",
    "EvaluateConfig",
    "RunConfig",
    "load_config",
    "parse_overrides",
    "dump_config",
]

SCHEMA_VERSION = 1

PROBLEM_KINDS = ("advection-diffusion", "lognormal-diffusion", "matrix-file")
MODES = ("linear-lowrank", "la-fixed-map", "la-prior-sample", "la-map")
SEARCH_METHODS = ("swapping", "standard", "both")
LEVERAGE_COMBINES = ("matrix-sum", "score-sum")

#: Modes that require a (linearizable) forward model rather than a bare
#: precomputed Hessian.
_MODEL_MODES = ("la-fixed-map", "la-prior-sample", "la-map")


@dataclass(frozen=True)
class GridConfig:
    nx: int = 16
    ny: int = 16

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValidationError("grid sizes must be positive")


@dataclass(frozen=True)
class PriorConfig:
    """Matern-like field prior; ``theta1/theta2/alpha`` parameterize the
    anisotropy tensor by its eigenvalues and rotation angle."""

    gamma: float = 0.1
    delta: float = 0.5
    theta1: float = 1.0
    theta2: float = 1.0
    alpha: float = 0.0
    mean: float = 0.0
    robin_beta: float | None = None

    def __post_init__(self):
        if self.gamma <= 0 or self.delta <= 0:
            raise ValidationError("prior gamma and delta must be positive")
        if self.theta1 <= 0 or self.theta2 <= 0:
            raise ValidationError("anisotropy eigenvalues must be positive")


@dataclass(frozen=True)
class ProblemConfig:
    kind: str = "advection-diffusion"
    grid: GridConfig = field(default_factory=GridConfig)
    # advection-diffusion
    diffusion: float = 1e-3
    n_steps: int = 40
    t_final: float = 4.0
    velocity_amplitude: float = 1.0
    velocity_csv: str | None = None
    # matrix-file: either a forward map or a precomputed whitened Hessian
    matrix_csv: str | None = None
    hessian_csv: str | None = None
    prior_cov_csv: str | None = None

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ValidationError(
                f"problem kind must be one of {PROBLEM_KINDS}, got {self.kind!r}"
            )
        if self.kind == "matrix-file":
            if (self.matrix_csv is None) == (self.hessian_csv is None):
                raise ValidationError(
                    "matrix-file problems need exactly one of matrix_csv "
                    "(a forward map) or hessian_csv (a precomputed Hessian)"
                )
        elif self.matrix_csv or self.hessian_csv or self.prior_cov_csv:
            raise ValidationError("matrix/hessian files only apply to matrix-file runs")
        if self.diffusion <= 0:
            raise ValidationError("diffusion coefficient must be positive")
        if self.n_steps < 1 or self.t_final <= 0:
            raise ValidationError("need n_steps >= 1 and t_final > 0")


@dataclass(frozen=True)
class CandidateConfig:
    """Candidate sensors: a gx-by-gy interior lattice, or explicit points."""

    gx: int = 3
    gy: int = 3
    points: tuple | None = None
    observation_times: tuple | None = None

    def __post_init__(self):
        if self.points is not None:
            pts = tuple(tuple(float(c) for c in p) for p in self.points)
            if not pts or any(len(p) != 2 for p in pts):
                raise ValidationError("candidate points must be (x, y) pairs")
            object.__setattr__(self, "points", pts)
        elif self.gx < 1 or self.gy < 1:
            raise ValidationError("candidate lattice sizes must be positive")
        if self.observation_times is not None:
            times = tuple(int(t) for t in self.observation_times)
            if not times:
                raise ValidationError("observation_times cannot be empty")
            object.__setattr__(self, "observation_times", times)


@dataclass(frozen=True)
class NoiseConfig:
    sigma: float = 0.05
    relative: float | None = None

    def __post_init__(self):
        if self.relative is None and self.sigma <= 0:
            raise ValidationError("noise sigma must be positive")
        if self.relative is not None and self.relative <= 0:
            raise ValidationError("relative noise level must be positive")


@dataclass(frozen=True)
class LowRankConfig:
    k: int = 20
    p: int = 10

    def __post_init__(self):
        if self.k < 1 or self.p < 0:
            raise ValidationError("need sketch rank k >= 1 and oversampling p >= 0")


@dataclass(frozen=True)
class DesignConfig:
    r: int = 4
    method: str = "both"
    max_sweeps: int = 10
    combine: str = "matrix-sum"
    brute_force: bool = False
    n_random: int = 0

    def __post_init__(self):
        if self.r < 1:
            raise ValidationError("design size r must be positive")
        if self.method not in SEARCH_METHODS:
            raise ValidationError(f"search method must be one of {SEARCH_METHODS}")
        if self.combine not in LEVERAGE_COMBINES:
            raise ValidationError(f"combine must be one of {LEVERAGE_COMBINES}")
        if self.max_sweeps < 1 or self.n_random < 0:
            raise ValidationError("need max_sweeps >= 1 and n_random >= 0")


@dataclass(frozen=True)
class SolverConfig:
    max_newton: int = 50
    grad_rtol: float = 1e-8
    cg_max: int = 200


@dataclass(frozen=True)
class EvaluateConfig:
    criteria: tuple = ()
    n_random: int = 0
    designs_json: str | None = None
    dlmc_outer: int = 0
    dlmc_inner: int = 0
    variance_fields: bool = False

    def __post_init__(self):
        object.__setattr__(self, "criteria", tuple(self.criteria))
        for name in self.criteria:
            if name not in MODES:
                raise ValidationError(f"unknown evaluation criterion {name!r}")
        if (self.dlmc_outer > 0) != (self.dlmc_inner > 0):
            raise ValidationError("set both dlmc_outer and dlmc_inner (or neither)")
        if self.n_random < 0:
            raise ValidationError("n_random cannot be negative")


_SECTIONS = {
    "problem": (ProblemConfig, ("kind", "grid", "diffusion", "n_steps", "t_final",
                                "velocity_amplitude", "velocity_csv", "matrix_csv",
                                "hessian_csv", "prior_cov_csv")),
    "prior": (PriorConfig, ("gamma", "delta", "theta1", "theta2", "alpha", "mean",
                            "robin_beta")),
    "candidates": (CandidateConfig, ("gx", "gy", "points", "observation_times")),
    "noise": (NoiseConfig, ("sigma", "relative")),
    "lowrank": (LowRankConfig, ("k", "p")),
    "design": (DesignConfig, ("r", "method", "max_sweeps", "combine", "brute_force",
                              "n_random")),
    "solver": (SolverConfig, ("max_newton", "grad_rtol", "cg_max")),
    "evaluate": (EvaluateConfig, ("criteria", "n_random", "designs_json",
                                  "dlmc_outer", "dlmc_inner", "variance_fields")),
}

_TOP_LEVEL = ("schema", "mode", "n_samples", "seed", "output_dir") + tuple(_SECTIONS)

#: Config fields holding file paths, resolved against the config directory.
_PATH_FIELDS = ("velocity_csv", "matrix_csv", "hessian_csv", "prior_cov_csv",
                "designs_json")


@dataclass(frozen=True)
class RunConfig:
    mode: str
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    candidates: CandidateConfig = field(default_factory=CandidateConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    lowrank: LowRankConfig = field(default_factory=LowRankConfig)
    design: DesignConfig = field(default_factory=DesignConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    n_samples: int = 4
    seed: int = 0
    output_dir: str = "oedplace-run"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "linear-lowrank" and self.problem.kind == "lognormal-diffusion":
            raise ValidationError(
                "linear-lowrank mode needs a linear model or a matrix file; "
                "the log-normal problem requires a Laplace mode"
            )
        if self.mode in _MODEL_MODES and self.problem.hessian_csv is not None:
            raise ValidationError(
                f"mode {self.mode!r} needs a forward model, but the problem "
                "only supplies a precomputed Hessian"
            )
        if self.n_samples < 1:
            raise ValidationError("n_samples must be positive")
        if (self.candidates.observation_times is not None
                and self.problem.kind != "advection-diffusion"):
            raise ValidationError("observation_times only apply to the "
                                  "time-dependent problem")

    @classmethod
    def from_dict(cls, raw: dict, base_dir=None) -> "RunConfig":
        raw = copy.deepcopy(dict(raw))
        unknown = set(raw) - set(_TOP_LEVEL)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        schema = raw.pop("schema", None)
        if schema != SCHEMA_VERSION:
            raise ValidationError(
                f"config must declare 'schema: {SCHEMA_VERSION}' (got {schema!r})"
            )
        if "mode" not in raw:
            raise ValidationError("config must set a 'mode'")

        kwargs = {}
        for name in ("mode", "n_samples", "seed", "output_dir"):
            if name in raw:
                kwargs[name] = raw.pop(name)
        for name, (section_cls, allowed) in _SECTIONS.items():
            sub = raw.pop(name, None)
            if sub is None:
                continue
            if not isinstance(sub, dict):
                raise ValidationError(f"config section {name!r} must be a mapping")
            extra = set(sub) - set(allowed)
            if extra:
                raise ValidationError(f"unknown keys in {name!r}: {sorted(extra)}")
            if name == "problem" and isinstance(sub.get("grid"), dict):
                sub = dict(sub, grid=GridConfig(**sub["grid"]))
            _resolve_paths(sub, base_dir)
            try:
                kwargs[name] = section_cls(**sub)
            except TypeError as exc:  # e.g. grid given as a scalar
                raise ValidationError(f"bad {name!r} section: {exc}") from exc
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {"schema": SCHEMA_VERSION, "mode": self.mode,
               "n_samples": self.n_samples, "seed": self.seed,
               "output_dir": self.output_dir}
        for name in _SECTIONS:
            section = asdict(getattr(self, name))
            if name == "candidates":
                if section.get("points") is not None:
                    section["points"] = [list(p) for p in section["points"]]
                if section.get("observation_times") is not None:
                    section["observation_times"] = list(section["observation_times"])
            if name == "evaluate":
                section["criteria"] = list(section["criteria"])
            out[name] = section
        return out


def _resolve_paths(section: dict, base_dir):
    for key in _PATH_FIELDS:
        value = section.get(key)
        if value is None:
            continue
        path = Path(value)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if not path.exists():
            raise ValidationError(f"{key} does not exist: {path}")
        section[key] = str(path)


def parse_overrides(pairs) -> dict:
    """Turn ``["design.r=8", "noise.sigma=0.1"]`` into a nested dict."""
    tree: dict = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ValidationError(f"override must look like key.path=value: {pair!r}")
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValidationError(f"conflicting overrides under {key!r}")
        try:
            node[parts[-1]] = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ValidationError(f"cannot parse override value {value!r}") from exc
    return tree


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path, overrides=()) -> RunConfig:
    """Read a YAML config file and apply dotted-path overrides."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValidationError(f"config root must be a mapping: {path}")
    if overrides:
        raw = _deep_merge(raw, parse_overrides(overrides))
    return RunConfig.from_dict(raw, base_dir=path.parent)


def dump_config(config: RunConfig, path):
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
