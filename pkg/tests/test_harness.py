"""Orchestration layer: config validation, provenance hashing, RNG stream
fan-out, determinism of metrics, outputs and plots, and the CLI surface."""

import json

import numpy as np
import pytest

from zrplab.cli import main
from zrplab.configurations import read_snapshot
from zrplab.harness import (
    ENV_OUTPUT_DIR,
    ENV_WORKERS,
    KINDS,
    ConfigError,
    ExperimentConfig,
    _rng_stream,
    _series,
    emit_plots,
    run,
)


def make_config(kind, tmp_path, **overrides):
    overrides.setdefault("output_dir", str(tmp_path / kind))
    return ExperimentConfig.from_sources(kind, None, overrides)


# ------------------------------------------------------------------ config


def test_all_kinds_have_valid_defaults(tmp_path):
    for kind in KINDS:
        cfg = make_config(kind, tmp_path)
        assert cfg.kind == kind
        assert len(cfg.config_hash()) == 64


def test_validation_enumerates_every_violation():
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_sources(
            "simulate", None,
            {"bogus": 1, "N": 1, "alpha": 0.5, "chi": -2.0, "nonsense": True})
    messages = err.value.errors
    assert len(messages) == 5
    joined = " | ".join(messages)
    for fragment in ("bogus", "nonsense", "N:", "alpha:", "chi:"):
        assert fragment in joined


def test_validation_rejects_unknown_kind_and_bad_eps():
    with pytest.raises(ConfigError, match="unknown experiment kind"):
        ExperimentConfig.from_sources("frobnicate", None, {})
    with pytest.raises(ConfigError, match="eps"):
        ExperimentConfig.from_sources("multiscale-report", None,
                                      {"eps": [0.25, 0.9]})
    with pytest.raises(ConfigError, match="observables"):
        ExperimentConfig.from_sources("simulate", None,
                                      {"observables": ["mass", "spin"]})


def test_validation_rejects_bad_profile():
    with pytest.raises(ConfigError, match="profile"):
        ExperimentConfig.from_sources("pme-solve", None,
                                      {"profile": "cos(2*pi*x) - 5"})


def test_cross_validation_sector_size():
    with pytest.raises(ConfigError, match="states"):
        ExperimentConfig.from_sources("exact-checks", None,
                                      {"N": 6, "n": 40})
    with pytest.raises(ConfigError, match="n_max"):
        ExperimentConfig.from_sources("orlicz-audit", None,
                                      {"n_min": 32, "n_max": 4})


def test_config_document_roundtrip(tmp_path):
    doc = tmp_path / "run.yaml"
    doc.write_text("kind: pme-solve\nM: 32\nt_fin: 0.01\n")
    cfg = ExperimentConfig.from_sources("pme-solve", doc, {"snapshots": 2})
    assert cfg["M"] == 32
    assert cfg["snapshots"] == 2
    with pytest.raises(ConfigError, match="document says"):
        ExperimentConfig.from_sources("simulate", doc, {})
    doc.write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="mapping"):
        ExperimentConfig.from_sources("pme-solve", doc, {})


def test_hash_ignores_operational_keys(tmp_path):
    base = make_config("simulate", tmp_path, N=16)
    moved = ExperimentConfig.from_sources(
        "simulate", None,
        {"N": 16, "output_dir": str(tmp_path / "elsewhere"), "workers": 4})
    assert base.config_hash() == moved.config_hash()
    assert base.config_hash() != make_config("simulate", tmp_path,
                                             N=24).config_hash()


def test_rng_streams_are_disjoint():
    draws = {stream: _rng_stream(7, stream).random() for stream in range(32)}
    assert len(set(draws.values())) == 32
    again = _rng_stream(7, 5).random()
    assert again == draws[5]


# ------------------------------------------------------------------ runs


def test_exact_checks_run_passes(tmp_path):
    cfg = make_config("exact-checks", tmp_path, n_densities=5,
                      n_potentials=2)
    manifest = run(cfg)
    assert manifest.checks and all(manifest.checks.values())
    assert manifest.all_checks_pass
    assert set(manifest.inventory) >= {"metrics.jsonl", "summary.json"}
    summary = json.loads((tmp_path / "exact-checks" / "summary.json").read_text())
    assert summary["all_pass"] is True
    assert summary["config_hash"] == cfg.config_hash()


def test_simulate_run_outputs(tmp_path):
    cfg = make_config("simulate", tmp_path, N=16, ensemble=3,
                      keep_snapshots=True, t_fin=0.005)
    manifest = run(cfg)
    outdir = tmp_path / "simulate"
    lines = [json.loads(s) for s in
             (outdir / "metrics.jsonl").read_text().splitlines()]
    header, rows = lines[0], lines[1:]
    assert header["record"] == "header"
    assert header["config_hash"] == cfg.config_hash()
    assert "output_dir" not in header["params"]
    assert len(rows) == 3
    for row in rows:
        series = row["series"]
        assert set(series) == set(cfg["observables"])
        # mass conservation along every trajectory, exactly as serialized
        assert len(set(series["mass"])) == 1
    assert manifest.stream_ids == [0, 1, 2]
    assert len(manifest.event_counts) == 3
    snap, sidecar = read_snapshot(outdir / "snapshots" / "traj_0000.snap")
    assert snap.counts.sum() > 0
    assert sidecar["config_hash"] == cfg.config_hash()
    assert "snapshots/traj_0000.snap" in manifest.inventory


def test_simulate_budget_marks_partial(tmp_path):
    cfg = make_config("simulate", tmp_path, N=16, ensemble=2, max_events=5)
    manifest = run(cfg)
    assert manifest.partial
    summary = json.loads((tmp_path / "simulate" / "summary.json").read_text())
    assert summary["truncated_trajectories"] == 2


def test_metrics_are_byte_identical_across_reruns_and_workers(tmp_path):
    settings = {"N": 16, "ensemble": 4, "t_fin": 0.005}
    runs = []
    for name, extra in (("a", {}), ("b", {}), ("c", {"workers": 2})):
        cfg = ExperimentConfig.from_sources(
            "simulate", None,
            {"output_dir": str(tmp_path / name), **settings, **extra})
        run(cfg)
        runs.append((tmp_path / name / "metrics.jsonl").read_bytes())
    assert runs[0] == runs[1] == runs[2]


def test_hydro_compare_run_and_tolerance_check(tmp_path):
    cfg = make_config("hydro-compare", tmp_path, N=32, ensemble=2,
                      tolerance=0.5)
    manifest = run(cfg)
    assert manifest.checks == {"mean_distance_within_tolerance": True}
    rows = [json.loads(s) for s in
            (tmp_path / "hydro-compare" / "metrics.jsonl").read_text().splitlines()]
    kinds = [r["record"] for r in rows]
    assert kinds.count("trajectory") == 2
    assert kinds.count("reference") == 1
    strict = make_config("hydro-compare", tmp_path / "strict", N=32,
                         ensemble=2, tolerance=1e-9)
    assert not run(strict).all_checks_pass


def test_pme_solve_run(tmp_path):
    cfg = make_config("pme-solve", tmp_path, M=32, t_fin=0.01, snapshots=3)
    manifest = run(cfg)
    outdir = tmp_path / "pme-solve"
    rows = [json.loads(s) for s in
            (outdir / "metrics.jsonl").read_text().splitlines()][1:]
    assert len(rows) == 3
    masses = [r["mass"] for r in rows]
    assert max(masses) - min(masses) < 1e-12
    assert any(name.startswith("fields/") for name in manifest.inventory)
    summary = json.loads((outdir / "summary.json").read_text())
    assert summary["steps"] > 0 and summary["mass_drift"] < 1e-12


# ------------------------------------------------------------------ plots


def test_emit_plots_simulate_and_pme(tmp_path):
    run(make_config("simulate", tmp_path, N=16, ensemble=2, t_fin=0.005))
    paths = emit_plots(tmp_path / "simulate")
    assert [p.name for p in paths] == ["observables.svg"]
    assert paths[0].stat().st_size > 0
    run(make_config("pme-solve", tmp_path, M=32, t_fin=0.01))
    assert [p.name for p in emit_plots(tmp_path / "pme-solve")] \
        == ["pme_profiles.svg"]


def test_emit_plots_empty_metrics_notice(tmp_path, capsys):
    outdir = tmp_path / "empty"
    outdir.mkdir()
    (outdir / "manifest.json").write_text(
        json.dumps({"kind": "simulate", "config_hash": "0" * 64}))
    (outdir / "metrics.jsonl").write_text(
        json.dumps({"record": "header"}) + "\n")
    assert emit_plots(outdir) == []
    assert "nothing to plot" in capsys.readouterr().out


def test_missing_series_is_named():
    with pytest.raises(KeyError, match="lack series 'times'"):
        _series([{"record": "trajectory", "other": 1}], "simulate",
                "times", "trajectory")


# ------------------------------------------------------------------ CLI


def test_cli_check_and_run(tmp_path, capsys):
    assert main(["pme-solve", "--check", "--set", "M=16"]) == 0
    assert "config ok" in capsys.readouterr().out
    code = main(["pme-solve", "--output-dir", str(tmp_path / "cli"),
                 "--set", "M=16", "--set", "t_fin=0.01"])
    out = capsys.readouterr().out
    assert code == 0
    assert "summary.json" in out and "pme_profiles.svg" in out
    assert (tmp_path / "cli" / "manifest.json").exists()


def test_cli_reports_all_config_errors(capsys):
    code = main(["simulate", "--set", "N=1", "--set", "alpha=0.2"])
    err = capsys.readouterr().err
    assert code == 2
    assert "N:" in err and "alpha:" in err


def test_cli_exit_code_reflects_failed_checks(tmp_path, capsys):
    code = main(["hydro-compare", "--no-plots",
                 "--output-dir", str(tmp_path / "fail"),
                 "--set", "N=32", "--set", "ensemble=2",
                 "--set", "tolerance=1.0e-9"])
    assert code == 1
    assert "FAIL" in capsys.readouterr().out


def test_cli_env_overrides(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(ENV_OUTPUT_DIR, str(tmp_path / "from_env"))
    monkeypatch.setenv(ENV_WORKERS, "2")
    assert main(["pme-solve", "--no-plots", "--set", "M=16",
                 "--set", "t_fin=0.01"]) == 0
    assert (tmp_path / "from_env" / "summary.json").exists()
    # the flag beats the environment
    assert main(["pme-solve", "--no-plots", "--set", "M=16",
                 "--set", "t_fin=0.01",
                 "--output-dir", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "summary.json").exists()
    capsys.readouterr()
    monkeypatch.setenv(ENV_WORKERS, "many")
    assert main(["pme-solve", "--check"]) == 2
    assert ENV_WORKERS in capsys.readouterr().err


def test_cli_rejects_malformed_set(capsys):
    assert main(["simulate", "--set", "justakey"]) == 2
    assert "KEY=VALUE" in capsys.readouterr().err
