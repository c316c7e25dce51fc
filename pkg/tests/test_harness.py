import csv
import json
import logging
from pathlib import Path

import pytest

from collapselab.harness import (
    DEFAULTS,
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    RunManifest,
    emit_plot_data,
    format_float,
    load_config,
    run_experiment,
    table_cache,
)
from collapselab.tm import SpaceTooLargeError, load_table


def small(experiment, **block):
    (name,) = DEFAULTS[experiment]
    return ExperimentConfig.from_dict({"experiment": experiment, name: block})


def metric_bytes(manifest):
    return {o["path"]: (Path(manifest.output_dir) / o["path"]).read_bytes()
            for o in manifest.outputs if o["kind"] == "metrics"}


def test_registry_complete():
    assert set(EXPERIMENTS) == {
        "prop1-convergence", "thm1-entropy", "thm3-drift", "lemma-tv", "thm4-ensemble",
        "dpi-demo", "ctm-census", "bdm-scan", "aid-rank", "pipeline-contraction",
        "support-recovery"}


@pytest.mark.parametrize("bad", [
    {"experiment": "nope"},
    {"experiment": "lemma-tv", "collapse_sim": {"trails": 10}},
    {"experiment": "lemma-tv", "neurosym": {}},
    {"experiment": "lemma-tv", "master_seed": "1"},
    {"collapse_sim": {}},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_load_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"experiment": "lemma-tv", "master_seed": 4,
                                "collapse_sim": {"trials": 7}}))
    cfg = load_config(path)
    assert cfg.master_seed == 4 and cfg.blocks["collapse_sim"] == {"trials": 7, "support_size": 10}
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path)


def test_config_hash_stable():
    a, b = small("lemma-tv", trials=5), small("lemma-tv", trials=5)
    assert a.config_hash() == b.config_hash() != small("lemma-tv", trials=6).config_hash()


def test_format_float():
    assert format_float(0.1) == "0.10000000000000001"
    assert float(format_float(1 / 3)) == 1 / 3
    assert format_float(float("inf")) == "inf" and format_float(3) == "3"


def test_prop1_summary(tmp_path):
    cfg = small("prop1-convergence", alphas=[0.1], steps=100)
    m = run_experiment(cfg, tmp_path)
    assert m.summary["max_coord_err"] < 1e-10 and m.checks_passed


def test_reruns_are_byte_identical(tmp_path):
    cfg = small("thm1-entropy", support_size=8, sample_size=20, steps=30, n_seeds=5)
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    assert metric_bytes(a) == metric_bytes(b)
    assert a.config_hash == b.config_hash
    c = run_experiment(ExperimentConfig.from_dict({**cfg.to_dict(), "master_seed": 1}),
                       tmp_path / "c")
    assert metric_bytes(a) != metric_bytes(c)


def test_thm1_summary_keys(tmp_path):
    m = run_experiment(small("thm1-entropy", support_size=8, sample_size=20, steps=30,
                             n_seeds=5), tmp_path)
    assert len(m.summary["mean_entropy_drop"]) == 30
    assert sum(m.summary["final_support_histogram"].values()) == 5


def test_manifest_contents(tmp_path):
    m = run_experiment(small("dpi-demo", trials=10), tmp_path)
    d = json.loads((tmp_path / "manifest.json").read_text())
    assert d["config_hash"] == m.config_hash and d["artifact_version"]
    assert {o["path"] for o in d["outputs"]} >= {"dpi.csv", "summary.json"}
    assert all(len(o["sha256"]) == 64 for o in d["outputs"])
    loaded = RunManifest.load(tmp_path)
    assert loaded.summary["checks"] == m.summary["checks"]


def test_plot_data(tmp_path):
    cfg = small("thm3-drift", steps=50, n_seeds=20)
    m = run_experiment(cfg, tmp_path)
    path = emit_plot_data(m, "drift_alpha0.var")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["series", "seed", "t", "value"]
    assert {r["seed"] for r in rows} == {"aggregate"} and len(rows) == 51
    with pytest.raises(KeyError, match="available"):
        emit_plot_data(m, "drift_alpha0.nothing")


def test_plot_data_per_seed_rows(tmp_path):
    m = run_experiment(small("thm1-entropy", support_size=6, sample_size=10, steps=12,
                             n_seeds=4), tmp_path)
    with open(emit_plot_data(m, "entropy.entropy", tmp_path / "p.csv"), newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 4 * 13


def test_table_cache(tmp_path, caplog, table22):
    caplog.set_level(logging.INFO, logger="collapselab.harness")
    path = table_cache(2, 2, 500, tmp_path)
    assert load_table(path) == table22
    mtime = path.stat().st_mtime_ns
    caplog.clear()
    assert table_cache(2, 2, 500, tmp_path) == path
    assert "cache hit" in caplog.text and path.stat().st_mtime_ns == mtime
    path.write_text(path.read_text().replace("0,3456", "0,3000"))
    caplog.clear()
    table_cache(2, 2, 500, tmp_path)
    assert "rebuilding" in caplog.text and load_table(path) == table22
    assert table_cache(2, 2, 400, tmp_path) != path
    with pytest.raises(SpaceTooLargeError):
        table_cache(4, 2, 100, tmp_path)


def test_table_cache_env(tmp_path, monkeypatch):
    monkeypatch.setenv("COLLAPSELAB_CACHE", str(tmp_path))
    assert table_cache(1, 2, 50).parent == tmp_path


@pytest.mark.parametrize("experiment,block", [
    ("lemma-tv", {"trials": 20}),
    ("thm4-ensemble", {"steps": 10, "n_seeds": 3}),
    ("ctm-census", {"n_states": 1, "budget": 50}),
    ("bdm-scan", {"miss_policy": "max-plus-one"}),
    ("aid-rank", {"object": "01100110", "perturbations": "flip:0,sub:1:1,del:0:4",
                  "miss_policy": "max-plus-one"}),
    ("pipeline-contraction", {"steps": 10, "n_seeds": 2}),
    ("support-recovery", {"n_seeds": 10}),
])
def test_experiments_run(tmp_path, experiment, block, monkeypatch):
    d = {"experiment": experiment}
    names = list(DEFAULTS[experiment])
    d[names[-1]] = block
    if experiment in ("bdm-scan", "aid-rank"):
        d["tm_space"] = {"n_states": 2, "budget": 500}
    m = run_experiment(ExperimentConfig.from_dict(d), tmp_path)
    assert (tmp_path / "summary.json").exists() and m.outputs
