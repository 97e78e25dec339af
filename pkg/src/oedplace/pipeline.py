"""Offline/online pipeline.

``run_offline`` does every operator-heavy step (prior samples, synthetic
data, optional MAP solves, randomized low-rank builds) and persists the
results as flat CSV/JSON artifacts.  ``run_online`` loads those artifacts and
searches for designs using only the persisted low-rank data - the operator
action counters are asserted to stay untouched.  ``run_evaluate`` scores
design lists with any subset of the criteria (plus a nested-MC reference and
posterior-variance fields) for cross-validation runs.

Artifact layout under ``config.output_dir``::

    config.yaml                     resolved configuration echo
    offline/offline.json            stage metadata, counters, convergence
    offline/noise_sigma.csv         per-row noise standard deviations
    offline/sample_###_parameter.csv, sample_###_data.csv
    offline/map_###_parameter.csv   (la-fixed-map only)
    offline/lowrank_###_{eigenvalues,basis}.csv + _meta.json
    offline/prior_terms.csv
    online/report.json              RunReport (see below)
    online/design_<method>.json, trace_<method>.csv
    evaluate/values.csv             one row per design, one column per criterion
    evaluate/summary.json           Pearson correlations between columns
    evaluate/variance_###.csv       posterior pointwise-variance fields

All randomness is derived from ``config.seed`` via fixed integer tags, so a
rerun with the same config is bit-identical.
"""

from __future__ import annotations

import contextlib
import csv
import json
import time
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from . import backend
from .config import RunConfig, dump_config
from .criteria import (
    TrainingSample,
    gain_gap_bound,
    information_gain_lowrank,
    laplace_information_gain,
    nested_mc_information_gain,
    posterior_pointwise_variance,
)
from .errors import CapabilityError, StateError, ValidationError
from .lowrank import LowRankHessian, build_data_hessian_lowrank
from .mapsolver import NewtonSettings, find_map
from .mesh import Grid2D
from .models import (
    AdvectionDiffusionModel,
    LogNormalDiffusionModel,
    MatrixModel,
    NoiseModel,
    RecirculatingVelocity,
    SensorArray,
    capped_bump_parameter,
    load_velocity_csv,
)
from .models.matrixfile import load_matrix_csv
from .prior import DensePrior, PriorOperator, rotated_anisotropy
from .selection import (
    LowRankGainCriterion,
    SampleAverageGainCriterion,
    brute_force_search,
    random_designs,
    standard_greedy,
    swapping_greedy,
)

__all__ = [
    "Problem",
    "OfflineArtifacts",
    "RunReport",
    "EvaluateResult",
    "build_problem",
    "run_offline",
    "load_artifacts",
    "run_online",
    "run_evaluate",
]

# Seed tags: every generator is seeded with (config.seed, tag[, index]) so
# stages can be rerun independently without sharing streams.
_TAG_SAMPLE = 11
_TAG_DATA_NOISE = 12
_TAG_SKETCH = 13
_TAG_ONLINE_RANDOM = 14
_TAG_DLMC = 15
_TAG_REFERENCE = 16
_TAG_EVAL_RANDOM = 17
_TAG_VARIANCE = 18

#: Cap on forward solves a single nested-MC evaluation may request.
DLMC_SOLVE_LIMIT = 100_000


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng((int(seed),) + tuple(int(t) for t in tags))


@contextlib.contextmanager
def _stage(name: str):
    """Re-raise pipeline errors tagged with the stage that failed."""
    try:
        yield
    except (ValueError, RuntimeError) as exc:
        if getattr(exc, "_stage_tagged", False):
            raise
        err = type(exc)(f"{name} stage: {exc}")
        err._stage_tagged = True
        raise err from exc


# ---------------------------------------------------------------------------
# problem assembly
# ---------------------------------------------------------------------------


@dataclass
class Problem:
    """Everything the stages need: model/prior/noise plus bookkeeping."""

    config: RunConfig
    d: int
    model: object | None
    prior: object | None
    noise: NoiseModel | None
    grid: Grid2D | None = None
    sensors: SensorArray | None = None
    hessian: np.ndarray | None = None

    @property
    def k_effective(self) -> int:
        return min(self.config.lowrank.k, self.d)

    @property
    def p_effective(self) -> int:
        return min(self.config.lowrank.p, self.d - self.k_effective)


def _reference_parameter(config: RunConfig, grid, prior) -> np.ndarray:
    """Deterministic parameter used to scale relative noise."""
    if config.problem.kind == "advection-diffusion":
        return capped_bump_parameter(grid)
    return prior.sample(_rng(config.seed, _TAG_REFERENCE))


def _build_noise(config: RunConfig, model, reference: np.ndarray) -> NoiseModel:
    if config.noise.relative is not None:
        return NoiseModel.relative_to_signal(model.predict(reference),
                                             rel=config.noise.relative)
    return NoiseModel(np.full(model.d, float(config.noise.sigma)))


def build_problem(config: RunConfig) -> Problem:
    """Instantiate grid, prior, model and noise for a configuration."""
    with _stage("setup"):
        if config.problem.kind == "matrix-file":
            problem = _build_matrix_problem(config)
        else:
            problem = _build_pde_problem(config)
        if config.design.r > problem.d:
            raise ValidationError(
                f"design size r={config.design.r} exceeds the "
                f"{problem.d} candidate rows"
            )
        return problem


def _build_pde_problem(config: RunConfig) -> Problem:
    grid = Grid2D(config.problem.grid.nx, config.problem.grid.ny)
    theta = rotated_anisotropy(config.prior.theta1, config.prior.theta2,
                               config.prior.alpha)
    prior = PriorOperator(grid, config.prior.gamma, config.prior.delta,
                          theta=theta, mean=config.prior.mean,
                          beta=config.prior.robin_beta)

    times = config.candidates.observation_times
    if config.candidates.points is not None:
        sensors = SensorArray(grid, np.asarray(config.candidates.points),
                              observation_times=times)
    else:
        sensors = SensorArray.lattice(grid, config.candidates.gx,
                                      config.candidates.gy,
                                      observation_times=times)

    if config.problem.kind == "advection-diffusion":
        if config.problem.velocity_csv is not None:
            velocity = load_velocity_csv(config.problem.velocity_csv, grid)
        else:
            velocity = RecirculatingVelocity(config.problem.velocity_amplitude)
        model = AdvectionDiffusionModel(
            grid, sensors, diffusion=config.problem.diffusion,
            velocity=velocity, n_steps=config.problem.n_steps,
            t_final=config.problem.t_final,
        )
    else:
        model = LogNormalDiffusionModel(grid, sensors)

    reference = _reference_parameter(config, grid, prior)
    noise = _build_noise(config, model, reference)
    return Problem(config=config, d=model.d, model=model, prior=prior,
                   noise=noise, grid=grid, sensors=sensors)


def _build_matrix_problem(config: RunConfig) -> Problem:
    if config.problem.hessian_csv is not None:
        hessian = load_matrix_csv(config.problem.hessian_csv)
        if hessian.ndim != 2 or hessian.shape[0] != hessian.shape[1]:
            raise ValidationError("precomputed Hessian must be square")
        if not np.allclose(hessian, hessian.T, atol=1e-10):
            raise ValidationError("precomputed Hessian must be symmetric")
        return Problem(config=config, d=hessian.shape[0], model=None,
                       prior=None, noise=None, hessian=hessian)

    forward = load_matrix_csv(config.problem.matrix_csv)
    model = MatrixModel(forward)
    if config.problem.prior_cov_csv is not None:
        cov = load_matrix_csv(config.problem.prior_cov_csv)
        prior = DensePrior(np.zeros(model.n), cov)
    else:
        prior = DensePrior(np.zeros(model.n), np.eye(model.n))
    reference = prior.sample(_rng(config.seed, _TAG_REFERENCE))
    noise = _build_noise(config, model, reference)
    return Problem(config=config, d=model.d, model=model, prior=prior,
                   noise=noise)


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------


def _write_columns(path, header: str, *columns) -> None:
    table = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")


def _read_column(path, column: int = -1) -> np.ndarray:
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return table[:, column]


def _write_parameter_field(path, problem: Problem, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=float)
    if problem.grid is not None:
        coords = problem.grid.coords
        _write_columns(path, "vertex,x,y,value",
                       np.arange(values.size), coords[:, 0], coords[:, 1], values)
    else:
        _write_columns(path, "index,value", np.arange(values.size), values)


def _operator_action_total(counters: dict) -> int:
    return int(sum(counters.values()))


# ---------------------------------------------------------------------------
# offline stage
# ---------------------------------------------------------------------------


@dataclass
class OfflineArtifacts:
    """In-memory view of the persisted offline products."""

    mode: str
    d: int
    lowranks: list
    prior_terms: np.ndarray
    counters: dict
    meta: dict
    samples: list = field(default_factory=list)
    problem: Problem | None = None

    @property
    def prior_mean_term(self) -> float:
        return float(np.mean(self.prior_terms)) if self.prior_terms.size else 0.0


def _offline_dir(config: RunConfig) -> Path:
    return Path(config.output_dir) / "offline"


def _synthesize_sample(problem: Problem, config: RunConfig, index: int):
    """Draw one prior sample and its full-candidate noisy data."""
    m = problem.prior.sample(_rng(config.seed, _TAG_SAMPLE, index))
    clean = problem.model.predict(m)
    noise = problem.noise.sample(_rng(config.seed, _TAG_DATA_NOISE, index))
    return m, clean + noise


def _prior_half_norm(prior, point) -> float:
    return 0.5 * prior.precision_norm_sq(np.asarray(point) - prior.mean)


def run_offline(config: RunConfig, problem: Problem | None = None) -> OfflineArtifacts:
    """Heavy stage: samples, data, optional MAP solves, low-rank builds."""
    if config.mode == "la-map":
        raise ValidationError(
            "la-map re-solves the MAP per candidate design and has no "
            "offline/online split; use run_evaluate for that mode"
        )
    t0 = time.perf_counter()
    problem = problem or build_problem(config)
    out = _offline_dir(config)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, Path(config.output_dir) / "config.yaml")

    base = problem.model.counters.snapshot() if problem.model else None
    k, p = problem.k_effective, problem.p_effective
    meta = {
        "schema": 1,
        "mode": config.mode,
        "d": problem.d,
        "k": k,
        "p": p,
        "n_samples": config.n_samples,
        "backend": backend.BACKEND,
        "converged": True,
        "map_solves": [],
        "lowrank_prefixes": [],
        "sample_files": [],
    }
    if problem.noise is not None:
        _write_columns(out / "noise_sigma.csv", "row,sigma",
                       np.arange(problem.d), problem.noise.sigma)

    lowranks: list = []
    samples: list = []
    prior_terms = np.zeros(0)

    with _stage("offline"):
        if config.mode == "linear-lowrank":
            lowranks.append(_offline_linear(problem, config, out, meta, k, p))
        else:
            samples, lowranks, prior_terms = _offline_laplace(
                problem, config, out, meta, k, p
            )

    if problem.model is not None:
        counters = problem.model.counters.as_dict()
        if base is not None:
            counters = {key: counters[key] - getattr(base, key) for key in counters}
    else:
        counters = {}
    meta["counters"] = counters
    meta["wall_time"] = time.perf_counter() - t0
    (out / "offline.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    return OfflineArtifacts(mode=config.mode, d=problem.d, lowranks=lowranks,
                            prior_terms=prior_terms, counters=counters,
                            meta=meta, samples=samples, problem=problem)


def _offline_linear(problem: Problem, config: RunConfig, out: Path,
                    meta: dict, k: int, p: int) -> LowRankHessian:
    if problem.hessian is not None:
        lowrank = LowRankHessian.from_dense(problem.hessian, k)
    else:
        lin = problem.model.linearize(problem.prior.mean)
        lowrank = build_data_hessian_lowrank(
            lin, problem.prior, problem.noise, k, p=p,
            seed=(config.seed, _TAG_SKETCH, 0),
        )
    prefix = out / "lowrank_000"
    lowrank.save(prefix)
    meta["lowrank_prefixes"].append(prefix.name)
    return lowrank


def _offline_laplace(problem: Problem, config: RunConfig, out: Path,
                     meta: dict, k: int, p: int):
    settings = NewtonSettings(max_newton=config.solver.max_newton,
                              grad_rtol=config.solver.grad_rtol,
                              cg_max=config.solver.cg_max)
    samples, lowranks, terms = [], [], []
    for i in range(config.n_samples):
        m, data = _synthesize_sample(problem, config, i)
        _write_parameter_field(out / f"sample_{i:03d}_parameter.csv", problem, m)
        _write_columns(out / f"sample_{i:03d}_data.csv", "row,value",
                       np.arange(problem.d), data)
        meta["sample_files"].append(f"sample_{i:03d}")

        if config.mode == "la-fixed-map":
            result = find_map(problem.model, problem.prior, problem.noise,
                              data, settings=settings)
            meta["map_solves"].append({
                "sample": i,
                "converged": result.converged,
                "newton_iterations": result.newton_iterations,
                "cg_iterations": result.cg_iterations,
                "objective": result.objective,
                "gradient_norm": result.gradient_norm,
            })
            meta["converged"] = meta["converged"] and result.converged
            point = result.parameter
            _write_parameter_field(out / f"map_{i:03d}_parameter.csv", problem, point)
        else:  # la-prior-sample: linearize at the draw itself, no MAP solve
            point = m

        lin = problem.model.linearize(point)
        lowrank = build_data_hessian_lowrank(
            lin, problem.prior, problem.noise, k, p=p,
            seed=(config.seed, _TAG_SKETCH, i),
        )
        prefix = out / f"lowrank_{i:03d}"
        lowrank.save(prefix)
        meta["lowrank_prefixes"].append(prefix.name)

        term = _prior_half_norm(problem.prior, point)
        terms.append(term)
        lowranks.append(lowrank)
        samples.append(TrainingSample(parameter=m, data=data,
                                      lowrank=lowrank, prior_term=term))
    prior_terms = np.asarray(terms)
    _write_columns(out / "prior_terms.csv", "sample,prior_term",
                   np.arange(len(terms)), prior_terms)
    return samples, lowranks, prior_terms


def load_artifacts(config: RunConfig) -> OfflineArtifacts:
    """Reload persisted offline artifacts (no operator actions)."""
    out = _offline_dir(config)
    meta_path = out / "offline.json"
    if not meta_path.exists():
        raise StateError(
            f"offline artifacts not found in {out}; run the offline stage first "
            f"(oedplace offline --config <config>)"
        )
    meta = json.loads(meta_path.read_text())
    if meta["mode"] != config.mode:
        raise StateError(
            f"artifacts were built in mode {meta['mode']!r} but the config "
            f"says {config.mode!r}; rerun the offline stage"
        )
    lowranks = [LowRankHessian.load(out / name) for name in meta["lowrank_prefixes"]]
    samples = []
    if meta["sample_files"]:
        prior_terms = _read_column(out / "prior_terms.csv")
        for name, lowrank, term in zip(meta["sample_files"], lowranks, prior_terms):
            parameter = _read_column(out / f"{name}_parameter.csv")
            data = _read_column(out / f"{name}_data.csv")
            samples.append(TrainingSample(parameter=parameter, data=data,
                                          lowrank=lowrank, prior_term=float(term)))
    else:
        prior_terms = np.zeros(0)
    return OfflineArtifacts(mode=meta["mode"], d=meta["d"], lowranks=lowranks,
                            prior_terms=prior_terms, counters=meta["counters"],
                            meta=meta, samples=samples, problem=None)


# ---------------------------------------------------------------------------
# online stage
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    """Summary of one online run; JSON round-trips exactly."""

    mode: str
    d: int
    r: int
    backend: str
    designs: dict
    values: dict
    gap_bound: float | None
    spectra: list
    counters: dict
    baselines: dict
    wall_times: dict
    converged: bool

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "d": self.d, "r": self.r,
            "backend": self.backend, "designs": self.designs,
            "values": self.values, "gap_bound": self.gap_bound,
            "spectra": self.spectra, "counters": self.counters,
            "baselines": self.baselines, "wall_times": self.wall_times,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunReport":
        return cls(**{name: raw[name] for name in (
            "mode", "d", "r", "backend", "designs", "values", "gap_bound",
            "spectra", "counters", "baselines", "wall_times", "converged")})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2,
                                         sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _make_criterion(artifacts: OfflineArtifacts):
    """Criterion to rank designs by, plus the design-independent shift that
    turns ranking values into full criterion values."""
    if artifacts.mode == "linear-lowrank":
        return LowRankGainCriterion(artifacts.lowranks[0]), 0.0
    return SampleAverageGainCriterion(artifacts.lowranks), artifacts.prior_mean_term


def _write_trace_csv(path, method: str, trace) -> None:
    if method == "standard":
        names = ["step", "added", "value"]
        rows = [{"step": i + 1, **step} for i, step in enumerate(trace.steps)]
    else:
        names = ["sweep", "position", "removed", "added", "value"]
        rows = trace.steps
    with open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=names)
        writer.writeheader()
        writer.writerows(rows)


def run_online(config: RunConfig, artifacts: OfflineArtifacts | None = None) -> RunReport:
    """Light stage: greedy searches over the persisted low-rank data."""
    if config.mode == "la-map":
        raise ValidationError("la-map has no online stage; use run_evaluate")
    t0 = time.perf_counter()
    if artifacts is None:
        artifacts = load_artifacts(config)
    out = Path(config.output_dir) / "online"
    out.mkdir(parents=True, exist_ok=True)

    model = artifacts.problem.model if artifacts.problem else None
    action_base = _operator_action_total(model.counters.as_dict()) if model else 0

    d, r = artifacts.d, config.design.r
    if r > d:
        raise ValidationError(f"design size r={r} exceeds the {d} candidate rows")
    criterion, shift = _make_criterion(artifacts)
    bases = [lr.basis for lr in artifacts.lowranks]

    designs: dict = {}
    values: dict = {}
    evaluations: dict = {}
    converged = bool(artifacts.meta.get("converged", True))

    with _stage("online"):
        methods = (("swapping", "standard") if config.design.method == "both"
                   else (config.design.method,))
        for method in methods:
            if method == "swapping":
                design, trace = swapping_greedy(
                    criterion, d, r, init_bases=bases,
                    combine=config.design.combine,
                    max_sweeps=config.design.max_sweeps,
                )
                converged = converged and not trace.hit_max_sweeps
            else:
                design, trace = standard_greedy(criterion, d, r)
            designs[method] = sorted(design.indices)
            values[method] = float(trace.final_value) + shift
            evaluations[method] = trace.evaluations
            _write_trace_csv(out / f"trace_{method}.csv", method, trace)
            (out / f"design_{method}.json").write_text(json.dumps({
                "method": method, "d": d, "indices": sorted(design.indices),
                "value": values[method],
            }, indent=2) + "\n")

        baselines: dict = {"n_random": config.design.n_random}
        if config.design.n_random > 0:
            picks = random_designs(d, r, config.design.n_random,
                                   seed=(config.seed, _TAG_ONLINE_RANDOM))
            random_values = criterion.many(np.asarray(picks, dtype=np.intp))
            evaluations["random"] = len(picks)
            best = int(np.argmax(random_values))
            baselines["random_best_value"] = float(random_values[best]) + shift
            baselines["random_best_design"] = list(picks[best])
        if config.design.brute_force:
            ranked = brute_force_search(criterion, d, r)
            evaluations["brute_force"] = len(ranked)
            baselines["brute_force_best_value"] = ranked[0][1] + shift
            baselines["brute_force_best_design"] = list(ranked[0][0])
            lookup = {des: pos + 1 for pos, (des, _) in enumerate(ranked)}
            for method in designs:
                baselines[f"brute_force_rank_{method}"] = lookup[
                    tuple(designs[method])
                ]

    online_actions = (_operator_action_total(model.counters.as_dict()) - action_base
                      if model else 0)
    if online_actions != 0:
        raise StateError(
            f"online stage performed {online_actions} operator actions; "
            "the offline/online contract requires zero"
        )

    gap = None
    if artifacts.mode == "linear-lowrank":
        lowrank = artifacts.lowranks[0]
        if lowrank.trailing_logdet is not None:
            gap = gain_gap_bound(lowrank)

    report = RunReport(
        mode=config.mode, d=d, r=r, backend=backend.BACKEND,
        designs=designs, values=values, gap_bound=gap,
        spectra=[list(map(float, lr.eigenvalues)) for lr in artifacts.lowranks],
        counters={
            "offline": artifacts.counters,
            "online_operator_actions": online_actions,
            "criterion_evaluations": evaluations,
        },
        baselines=baselines,
        wall_times={"offline": artifacts.meta.get("wall_time"),
                    "online": time.perf_counter() - t0},
        converged=converged,
    )
    report.save(out / "report.json")
    return report


# ---------------------------------------------------------------------------
# evaluation stage
# ---------------------------------------------------------------------------


@dataclass
class EvaluateResult:
    columns: list
    rows: list
    correlations: dict
    converged: bool
    path: Path


def _load_designs_json(path) -> list:
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict):
        raw = raw.get("designs", [raw.get("indices", [])])
    designs = []
    for entry in raw:
        if isinstance(entry, dict):
            entry = entry["indices"]
        designs.append(tuple(int(i) for i in entry))
    return designs


def _collect_designs(config: RunConfig, problem: Problem, designs) -> list:
    if designs is not None:
        return [tuple(int(i) for i in des) for des in designs]
    if config.evaluate.designs_json is not None:
        return _load_designs_json(config.evaluate.designs_json)
    if config.evaluate.n_random > 0:
        return random_designs(problem.d, config.design.r,
                              config.evaluate.n_random,
                              seed=(config.seed, _TAG_EVAL_RANDOM))
    return []


def _training_samples(problem: Problem, config: RunConfig, mode: str):
    """Fresh Laplace training samples for one evaluation column.

    Uses the same seed tags as the offline stage, so evaluation columns are
    consistent with persisted artifacts of the same config.
    """
    settings = NewtonSettings(max_newton=config.solver.max_newton,
                              grad_rtol=config.solver.grad_rtol,
                              cg_max=config.solver.cg_max)
    k, p = problem.k_effective, problem.p_effective
    samples, all_converged = [], True
    for i in range(config.n_samples):
        m, data = _synthesize_sample(problem, config, i)
        if mode == "la-fixed-map":
            result = find_map(problem.model, problem.prior, problem.noise,
                              data, settings=settings)
            all_converged = all_converged and result.converged
            point = result.parameter
        else:
            point = m
        lowrank = build_data_hessian_lowrank(
            problem.model.linearize(point), problem.prior, problem.noise,
            k, p=p, seed=(config.seed, _TAG_SKETCH, i),
        )
        samples.append(TrainingSample(
            parameter=m, data=data, lowrank=lowrank,
            prior_term=_prior_half_norm(problem.prior, point),
        ))
    return samples, all_converged


def _la_map_column(problem: Problem, config: RunConfig, designs: list):
    """LA criterion with the MAP re-solved per design (the expensive variant)."""
    settings = NewtonSettings(max_newton=config.solver.max_newton,
                              grad_rtol=config.solver.grad_rtol,
                              cg_max=config.solver.cg_max)
    k, p = problem.k_effective, problem.p_effective
    base = [_synthesize_sample(problem, config, i)
            for i in range(config.n_samples)]
    values, all_converged = [], True
    for design in designs:
        rows = np.asarray(design, dtype=np.intp)
        samples = []
        for i, (m, data) in enumerate(base):
            result = find_map(problem.model, problem.prior, problem.noise,
                              data[rows], design=rows, settings=settings)
            all_converged = all_converged and result.converged
            lowrank = build_data_hessian_lowrank(
                problem.model.linearize(result.parameter), problem.prior,
                problem.noise, k, p=p, seed=(config.seed, _TAG_SKETCH, i),
            )
            samples.append(TrainingSample(
                parameter=m, data=data, lowrank=lowrank,
                prior_term=_prior_half_norm(problem.prior, result.parameter),
            ))
        values.append(laplace_information_gain(samples, rows))
    return values, all_converged


def _linear_lowrank_for(problem: Problem, config: RunConfig) -> LowRankHessian:
    if problem.hessian is not None:
        return LowRankHessian.from_dense(problem.hessian, problem.k_effective)
    if isinstance(problem.model, LogNormalDiffusionModel):
        raise ValidationError(
            "the linear-lowrank criterion is undefined for the nonlinear "
            "log-normal problem"
        )
    lin = problem.model.linearize(problem.prior.mean)
    return build_data_hessian_lowrank(
        lin, problem.prior, problem.noise, problem.k_effective,
        p=problem.p_effective, seed=(config.seed, _TAG_SKETCH, 0),
    )


def run_evaluate(config: RunConfig, designs=None,
                 problem: Problem | None = None) -> EvaluateResult:
    """Score a design list under the requested criteria; write a CSV table."""
    t0 = time.perf_counter()
    problem = problem or build_problem(config)
    out = Path(config.output_dir) / "evaluate"
    out.mkdir(parents=True, exist_ok=True)

    design_list = _collect_designs(config, problem, designs)
    criteria = list(config.evaluate.criteria) or [config.mode]
    use_dlmc = config.evaluate.dlmc_outer > 0
    converged = True

    columns: dict = {}
    with _stage("evaluate"):
        for name in criteria:
            if problem.model is None and name != "linear-lowrank":
                raise ValidationError(
                    f"criterion {name!r} needs a forward model, but the "
                    "problem only supplies a precomputed Hessian"
                )
            if name == "linear-lowrank":
                lowrank = _linear_lowrank_for(problem, config)
                columns[name] = [information_gain_lowrank(lowrank, des)
                                 for des in design_list]
            elif name in ("la-prior-sample", "la-fixed-map"):
                if design_list:
                    samples, ok = _training_samples(problem, config, name)
                    converged = converged and ok
                    columns[name] = [laplace_information_gain(samples, des)
                                     for des in design_list]
                else:
                    columns[name] = []
            elif name == "la-map":
                columns[name], ok = _la_map_column(problem, config, design_list)
                converged = converged and ok
        if use_dlmc:
            budget = config.evaluate.dlmc_outer + config.evaluate.dlmc_inner
            if budget > DLMC_SOLVE_LIMIT:
                raise CapabilityError(
                    f"nested MC budget of {budget} forward solves per design "
                    f"exceeds the supported {DLMC_SOLVE_LIMIT}"
                )
            columns["dlmc"] = [
                nested_mc_information_gain(
                    problem.model, problem.prior, problem.noise, des,
                    config.evaluate.dlmc_outer, config.evaluate.dlmc_inner,
                    seed=(config.seed, _TAG_DLMC),
                )
                for des in design_list
            ]
        if config.evaluate.variance_fields:
            for i, des in enumerate(design_list):
                variance = posterior_pointwise_variance(
                    problem.prior, problem.model, problem.noise, des,
                    m_lin=problem.prior.mean, seed=(config.seed, _TAG_VARIANCE),
                )
                _write_parameter_field(out / f"variance_{i:03d}.csv",
                                       problem, variance)

    names = list(columns)
    path = out / "values.csv"
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["design_id", "indices"] + names)
        for i, des in enumerate(design_list):
            writer.writerow([i, " ".join(str(j) for j in des)]
                            + [repr(float(columns[name][i])) for name in names])

    correlations = {}
    if len(design_list) >= 2:
        for a, b in combinations(names, 2):
            va, vb = np.asarray(columns[a]), np.asarray(columns[b])
            if va.std() > 0 and vb.std() > 0:
                correlations[f"{a}|{b}"] = float(np.corrcoef(va, vb)[0, 1])
            else:
                correlations[f"{a}|{b}"] = None
    summary = {
        "n_designs": len(design_list),
        "columns": names,
        "pearson": correlations,
        "converged": converged,
        "wall_time": time.perf_counter() - t0,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2,
                                                 sort_keys=True) + "\n")
    rows = [
        {"design_id": i, "indices": des,
         **{name: float(columns[name][i]) for name in names}}
        for i, des in enumerate(design_list)
    ]
    return EvaluateResult(columns=names, rows=rows, correlations=correlations,
                          converged=converged, path=path)
