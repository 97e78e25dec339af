import json

import numpy as np
import pytest

from oedplace import CapabilityError, StateError, ValidationError
from oedplace.config import RunConfig
from oedplace.criteria import information_gain_lowrank
from oedplace.pipeline import (
    RunReport,
    build_problem,
    load_artifacts,
    run_evaluate,
    run_offline,
    run_online,
)


def linear_config(tmp_path, **extra):
    raw = {
        "schema": 1,
        "mode": "linear-lowrank",
        "problem": {
            "kind": "advection-diffusion",
            "grid": {"nx": 4, "ny": 4},
            "diffusion": 1e-3,
            "n_steps": 5,
            "t_final": 0.5,
        },
        "candidates": {"gx": 3, "gy": 3},
        "prior": {"gamma": 0.3, "delta": 1.0},
        "noise": {"sigma": 0.05},
        "lowrank": {"k": 5, "p": 4},
        "design": {"r": 3, "method": "both"},
        "seed": 1,
        "output_dir": str(tmp_path / "run"),
    }
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key] = {**raw[key], **value}
        else:
            raw[key] = value
    return RunConfig.from_dict(raw)


def laplace_config(tmp_path, mode="la-fixed-map", **extra):
    raw = {
        "schema": 1,
        "mode": mode,
        "problem": {"kind": "lognormal-diffusion", "grid": {"nx": 4, "ny": 4}},
        "candidates": {"gx": 2, "gy": 2},
        "prior": {"gamma": 0.3, "delta": 1.0},
        "noise": {"sigma": 0.02},
        "lowrank": {"k": 3, "p": 1},
        "design": {"r": 2, "method": "swapping"},
        "n_samples": 2,
        "seed": 2,
        "output_dir": str(tmp_path / "run"),
    }
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key] = {**raw[key], **value}
        else:
            raw[key] = value
    return RunConfig.from_dict(raw)


class TestOfflineLinear:
    def test_artifacts_and_action_count(self, tmp_path):
        config = linear_config(tmp_path)
        artifacts = run_offline(config)
        # single-pass sketch: exactly 2 (k + p) Hessian actions, nothing else
        assert artifacts.counters["data_hessian_actions"] == 2 * (5 + 4)
        assert artifacts.counters["map_solves"] == 0
        out = tmp_path / "run" / "offline"
        for name in ("offline.json", "lowrank_000_eigenvalues.csv",
                     "lowrank_000_basis.csv", "lowrank_000_meta.json",
                     "noise_sigma.csv"):
            assert (out / name).exists(), name
        assert (tmp_path / "run" / "config.yaml").exists()
        assert artifacts.meta["converged"] is True
        assert artifacts.d == 9

    def test_rerun_is_bit_identical(self, tmp_path):
        config_a = linear_config(tmp_path, output_dir=str(tmp_path / "a"))
        config_b = linear_config(tmp_path, output_dir=str(tmp_path / "b"))
        run_offline(config_a)
        run_offline(config_b)
        for name in ("lowrank_000_eigenvalues.csv", "lowrank_000_basis.csv"):
            bytes_a = (tmp_path / "a" / "offline" / name).read_bytes()
            bytes_b = (tmp_path / "b" / "offline" / name).read_bytes()
            assert bytes_a == bytes_b, name

    def test_config_echo_reloads(self, tmp_path):
        from oedplace.config import load_config

        config = linear_config(tmp_path)
        run_offline(config)
        assert load_config(tmp_path / "run" / "config.yaml") == config

    def test_la_map_has_no_offline_stage(self, tmp_path):
        config = laplace_config(tmp_path, mode="la-map")
        with pytest.raises(ValidationError):
            run_offline(config)
        with pytest.raises(ValidationError):
            run_online(config)


class TestOfflineLaplace:
    def test_fixed_map_artifacts(self, tmp_path):
        config = laplace_config(tmp_path)
        artifacts = run_offline(config)
        assert artifacts.counters["map_solves"] == 2
        # one sketch per sample
        assert artifacts.counters["data_hessian_actions"] == 2 * 2 * (3 + 1)
        out = tmp_path / "run" / "offline"
        for i in range(2):
            assert (out / f"sample_{i:03d}_parameter.csv").exists()
            assert (out / f"sample_{i:03d}_data.csv").exists()
            assert (out / f"map_{i:03d}_parameter.csv").exists()
        assert (out / "prior_terms.csv").exists()
        assert len(artifacts.samples) == 2
        assert all(entry["converged"] for entry in artifacts.meta["map_solves"])
        assert np.all(artifacts.prior_terms >= 0)

    def test_prior_sample_mode_skips_map(self, tmp_path):
        config = laplace_config(tmp_path, mode="la-prior-sample")
        artifacts = run_offline(config)
        assert artifacts.counters["map_solves"] == 0
        assert artifacts.meta["map_solves"] == []
        # linearization point is the draw itself
        sample = artifacts.samples[0]
        assert sample.prior_term > 0

    def test_reload_matches_memory(self, tmp_path):
        config = laplace_config(tmp_path)
        artifacts = run_offline(config)
        back = load_artifacts(config)
        assert back.mode == artifacts.mode
        assert back.d == artifacts.d
        for mem, disk in zip(artifacts.lowranks, back.lowranks):
            assert disk.eigenvalues == pytest.approx(mem.eigenvalues, abs=0.0)
            assert disk.basis == pytest.approx(mem.basis, abs=0.0)
        for mem, disk in zip(artifacts.samples, back.samples):
            assert disk.parameter == pytest.approx(mem.parameter, abs=0.0)
            assert disk.data == pytest.approx(mem.data, abs=0.0)
            assert disk.prior_term == pytest.approx(mem.prior_term, abs=0.0)


class TestOnline:
    def test_requires_offline_artifacts(self, tmp_path):
        config = linear_config(tmp_path)
        with pytest.raises(StateError, match="offline"):
            run_online(config)

    def test_mode_mismatch_detected(self, tmp_path):
        run_offline(linear_config(tmp_path))
        stale = laplace_config(tmp_path, mode="la-prior-sample",
                               problem={"kind": "lognormal-diffusion",
                                        "grid": {"nx": 4, "ny": 4}},
                               output_dir=str(tmp_path / "run"))
        with pytest.raises(StateError, match="mode"):
            run_online(stale)

    def test_end_to_end_linear(self, tmp_path):
        config = linear_config(tmp_path, design={"r": 3, "method": "both",
                                                 "n_random": 10,
                                                 "brute_force": True})
        artifacts = run_offline(config)
        report = run_online(config, artifacts)

        assert set(report.designs) == {"swapping", "standard"}
        assert report.counters["online_operator_actions"] == 0
        assert report.converged
        # swapping never loses to standard, and both beat random baselines
        assert report.values["swapping"] >= report.values["standard"] - 1e-10
        assert (report.baselines["brute_force_best_value"]
                >= report.values["swapping"] - 1e-10)
        assert report.baselines["brute_force_rank_swapping"] >= 1
        assert report.values["swapping"] >= report.baselines["random_best_value"] - 1e-10
        assert report.gap_bound is not None and report.gap_bound >= 0
        out = tmp_path / "run" / "online"
        for name in ("report.json", "design_swapping.json",
                     "design_standard.json", "trace_swapping.csv",
                     "trace_standard.csv"):
            assert (out / name).exists(), name
        payload = json.loads((out / "design_swapping.json").read_text())
        assert payload["indices"] == report.designs["swapping"]
        assert payload["value"] == report.values["swapping"]

    def test_reloaded_artifacts_reproduce_designs(self, tmp_path):
        config = linear_config(tmp_path)
        artifacts = run_offline(config)
        direct = run_online(config, artifacts)
        reloaded = run_online(config)  # forces the load_artifacts path
        assert reloaded.designs == direct.designs
        assert reloaded.values == direct.values

    def test_report_json_round_trip(self, tmp_path):
        config = linear_config(tmp_path)
        run_offline(config)
        report = run_online(config)
        path = tmp_path / "run" / "online" / "report.json"
        back = RunReport.load(path)
        assert back.to_dict() == report.to_dict()
        # emit -> parse -> emit is a fixed point
        text = path.read_text()
        back.save(path)
        assert path.read_text() == text

    def test_design_size_validated(self, tmp_path):
        config = linear_config(tmp_path)
        run_offline(config)
        big = linear_config(tmp_path, design={"r": 10})
        with pytest.raises(ValidationError):
            run_online(big)

    def test_laplace_online_values_include_prior_terms(self, tmp_path):
        config = laplace_config(tmp_path)
        artifacts = run_offline(config)
        report = run_online(config, artifacts)
        assert set(report.designs) == {"swapping"}
        # values are ranking values shifted by the mean prior term
        assert report.values["swapping"] >= artifacts.prior_mean_term - 1e-12
        assert report.counters["online_operator_actions"] == 0


class TestEvaluate:
    def test_linear_column_matches_criterion(self, tmp_path):
        config = linear_config(tmp_path)
        problem = build_problem(config)
        designs = [(0, 4, 8), (1, 2, 3)]
        result = run_evaluate(config, designs=designs, problem=problem)
        assert result.columns == ["linear-lowrank"]
        assert len(result.rows) == 2
        assert result.path.exists()
        # deterministic rerun
        again = run_evaluate(config, designs=designs)
        for a, b in zip(result.rows, again.rows):
            assert a == b

    def test_empty_design_list(self, tmp_path):
        config = linear_config(tmp_path)
        result = run_evaluate(config, designs=[])
        assert result.rows == []
        assert result.correlations == {}
        lines = result.path.read_text().strip().splitlines()
        assert len(lines) == 1  # header only
        assert lines[0].startswith("design_id,indices")

    def test_designs_json_sources(self, tmp_path):
        plain = tmp_path / "designs.json"
        plain.write_text(json.dumps([[0, 1], [2, 3]]))
        config = linear_config(tmp_path,
                               evaluate={"designs_json": str(plain)})
        result = run_evaluate(config)
        assert [row["indices"] for row in result.rows] == [(0, 1), (2, 3)]

        wrapped = tmp_path / "wrapped.json"
        wrapped.write_text(json.dumps(
            {"designs": [{"indices": [4, 5]}, [6, 7]]}
        ))
        config = linear_config(tmp_path,
                               evaluate={"designs_json": str(wrapped)},
                               output_dir=str(tmp_path / "run2"))
        result = run_evaluate(config)
        assert [row["indices"] for row in result.rows] == [(4, 5), (6, 7)]

    def test_random_design_fallback(self, tmp_path):
        config = linear_config(tmp_path, evaluate={"n_random": 4})
        result = run_evaluate(config)
        assert len(result.rows) == 4
        again = run_evaluate(config)
        assert [r["indices"] for r in result.rows] == [
            r["indices"] for r in again.rows
        ]

    def test_correlations_reported(self, tmp_path):
        config = linear_config(
            tmp_path,
            evaluate={"criteria": ["linear-lowrank"], "n_random": 6,
                      "dlmc_outer": 40, "dlmc_inner": 40},
        )
        result = run_evaluate(config)
        assert set(result.columns) == {"linear-lowrank", "dlmc"}
        key = "linear-lowrank|dlmc"
        assert key in result.correlations
        assert -1.0 <= result.correlations[key] <= 1.0
        summary = json.loads(
            (tmp_path / "run" / "evaluate" / "summary.json").read_text()
        )
        assert summary["pearson"][key] == result.correlations[key]

    def test_dlmc_budget_guard(self, tmp_path):
        config = linear_config(
            tmp_path, evaluate={"dlmc_outer": 60000, "dlmc_inner": 50000}
        )
        with pytest.raises(CapabilityError):
            run_evaluate(config, designs=[(0, 1)])

    def test_variance_fields_written(self, tmp_path):
        config = linear_config(tmp_path, evaluate={"variance_fields": True})
        run_evaluate(config, designs=[(0, 4)])
        field = tmp_path / "run" / "evaluate" / "variance_000.csv"
        assert field.exists()
        header = field.read_text().splitlines()[0]
        assert header == "vertex,x,y,value"
        values = np.loadtxt(field, delimiter=",", skiprows=1)
        assert values.shape == (25, 4)
        assert np.all(values[:, 3] > 0)

    def test_criterion_needs_model(self, tmp_path):
        hess = tmp_path / "h.csv"
        np.savetxt(hess, np.diag([2.0, 1.0, 0.5]), delimiter=",")
        config = RunConfig.from_dict({
            "schema": 1,
            "mode": "linear-lowrank",
            "problem": {"kind": "matrix-file", "hessian_csv": str(hess)},
            "lowrank": {"k": 2, "p": 1},
            "design": {"r": 1},
            "evaluate": {"criteria": ["la-prior-sample"]},
            "output_dir": str(tmp_path / "run"),
        })
        with pytest.raises(ValidationError, match="evaluate stage"):
            run_evaluate(config, designs=[(0,)])

    def test_la_map_column(self, tmp_path):
        config = laplace_config(tmp_path, mode="la-map", n_samples=1,
                                lowrank={"k": 2, "p": 1})
        result = run_evaluate(config, designs=[(0, 1), (2, 3)])
        assert result.columns == ["la-map"]
        assert len(result.rows) == 2
        assert all(np.isfinite(row["la-map"]) for row in result.rows)


class TestMatrixFileProblems:
    def test_precomputed_hessian_linear_pipeline(self, tmp_path):
        rng = np.random.default_rng(3)
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        h = (q * np.array([3.0, 2.0, 1.0, 0.5, 0.2, 0.1])) @ q.T
        hess = tmp_path / "h.csv"
        np.savetxt(hess, h, delimiter=",", fmt="%.17g")
        config = RunConfig.from_dict({
            "schema": 1,
            "mode": "linear-lowrank",
            "problem": {"kind": "matrix-file", "hessian_csv": str(hess)},
            "lowrank": {"k": 6, "p": 0},
            "design": {"r": 2, "method": "both", "brute_force": True},
            "output_dir": str(tmp_path / "run"),
        })
        run_offline(config)
        report = run_online(config)
        # k = d: the surrogate is exact, the gap bound collapses
        assert report.gap_bound == pytest.approx(0.0, abs=1e-12)
        assert report.baselines["brute_force_rank_swapping"] == 1
        value = information_gain_lowrank(
            __import__("oedplace").lowrank.LowRankHessian.from_dense(h, 6),
            report.designs["swapping"],
        )
        assert report.values["swapping"] == pytest.approx(value, rel=1e-12)

    def test_forward_map_problem(self, tmp_path):
        rng = np.random.default_rng(4)
        fwd = tmp_path / "f.csv"
        np.savetxt(fwd, rng.standard_normal((5, 3)), delimiter=",", fmt="%.17g")
        config = RunConfig.from_dict({
            "schema": 1,
            "mode": "linear-lowrank",
            "problem": {"kind": "matrix-file", "matrix_csv": str(fwd)},
            "noise": {"sigma": 0.1},
            "lowrank": {"k": 3, "p": 2},
            "design": {"r": 2},
            "output_dir": str(tmp_path / "run"),
        })
        artifacts = run_offline(config)
        assert artifacts.d == 5
        report = run_online(config)
        assert len(report.designs["swapping"]) == 2
