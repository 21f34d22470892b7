from __future__ import annotations

import json
import shutil

import pytest

from cape.cli import main
from cape.harness import (
    METHODS,
    ConfigError,
    EpisodeRecord,
    ExperimentConfig,
    episode_seed,
    evaluate,
    run_batch,
    run_episode,
)
from cape.metrics import AnnotationMatrix
from cape.world import default_domain_path


@pytest.fixture
def suite_copy(tmp_path, suite_dir):
    dest = tmp_path / "suite"
    shutil.copytree(suite_dir, dest)
    return dest


def _config(suite_copy, **changes):
    doc = json.loads((suite_copy / "config.json").read_text())
    doc.update(changes)
    path = suite_copy / "config.json"
    path.write_text(json.dumps(doc))
    return path


def test_every_method_maps_to_one_setup():
    for name, spec in METHODS.items():
        assert ("saycan" in spec) != ("strategy" in spec), name


def test_episode_seed_is_stable_and_distinct():
    assert episode_seed(7, "a", "m") == episode_seed(7, "a", "m")
    assert len({episode_seed(7, t, m) for t in "abc" for m in ("x", "y")}) == 6


def test_config_rejects_unknown_method(suite_copy):
    with pytest.raises(ConfigError, match="unknown method"):
        ExperimentConfig.load(_config(suite_copy, methods=["telepathy"]))


def test_config_reports_missing_files(suite_copy):
    with pytest.raises(ConfigError, match="nowhere.json"):
        ExperimentConfig.load(_config(suite_copy, domain="nowhere.json", tasks=[{"name": "x", "script": "scripts/iron_a_shirt.json"}]))


def test_episode_record_round_trip(suite_dir):
    cfg = ExperimentConfig.load(suite_dir / "config.json")
    rec = run_episode(cfg, "get glass of milk", "cape-explicit")
    again = EpisodeRecord.from_dict(json.loads(rec.to_json()))
    assert again.to_json() == rec.to_json()
    assert rec.wall_time is not None and "wall_time" not in rec.to_json()


def test_batch_counts_and_isolation(suite_copy, tmp_path):
    methods = ["open-loop", "resample", "cape-explicit", "saycan-perfect"]
    cfg = ExperimentConfig.load(_config(suite_copy, methods=methods))
    # break one script so its episodes fail at the backend
    (suite_copy / "scripts" / "iron_a_shirt.json").write_text(json.dumps({"rules": []}))
    records = run_batch(cfg, tmp_path / "out", jobs=4)
    lines = (tmp_path / "out" / "results.jsonl").read_text().splitlines()
    assert len(records) == len(lines) == 24
    broken = [r for r in records if r.task == "iron a shirt"]
    assert all(r.trace.termination == "backend_failure" for r in broken)
    report = (tmp_path / "out" / "report.csv").read_text().splitlines()
    assert len(report) == 1 + 4
    order = [(json.loads(x)["task"], json.loads(x)["method"]) for x in lines]
    assert order == [(t.name, m) for t in cfg.tasks for m in methods]


def test_eval_recomputes_batch_metrics(suite_dir, tmp_path):
    cfg = ExperimentConfig.load(suite_dir / "config.json")
    records = run_batch(cfg, tmp_path, jobs=2)
    fresh, rows = evaluate(cfg, tmp_path / "results.jsonl")
    assert [r.metrics for r in fresh] == [r.metrics for r in records]
    assert (tmp_path / "report.csv").read_text().splitlines()[0].startswith("Method,%Exec")
    assert len(rows) == len(cfg.methods)


def test_eval_with_unanimous_annotations(suite_dir, tmp_path):
    cfg = ExperimentConfig.load(suite_dir / "config.json")
    run_batch(cfg, tmp_path, jobs=1)
    ids = [f"cape-explicit/{t.name}" for t in cfg.tasks]
    ann = AnnotationMatrix({i: [1, 1, 1] for i in ids})
    _, rows = evaluate(cfg, tmp_path / "results.jsonl", annotations=ann)
    row = next(r for r in rows if r.method == "cape-explicit")
    assert row.pct_correct == 100.0 and row.fleiss_kappa == 1.0


def test_eval_without_ground_truth_leaves_lcs_absent(suite_dir, tmp_path):
    cfg = ExperimentConfig.load(suite_dir / "config.json")
    run_batch(cfg, tmp_path, jobs=1)
    empty = tmp_path / "gt"
    empty.mkdir()
    fresh, rows = evaluate(cfg, tmp_path / "results.jsonl", gt_dir=empty)
    assert all(r.metrics.lcs is None and r.metrics.gs is None for r in fresh)
    assert all(r.lcs is None for r in rows) and len(rows) == len(cfg.methods)


def test_cli_plan_prints_corrected_plan(tmp_path, suite_dir, capsys):
    script = suite_dir / "scripts" / "get_glass_of_milk.json"
    rc = main(["plan", "--task", "get glass of milk", "--method", "cape-explicit", "--script", str(script), "--out", str(tmp_path)])
    out = capsys.readouterr().out
    assert rc == 0
    assert "Error: I cannot grab milk because the milk is inside the closed fridge. A correct step would be to" in out
    assert "Step 5: grab milk" in out and "executable=1" in out
    assert (tmp_path / "cape-explicit" / "get_glass_of_milk.json").is_file()


def test_cli_unknown_method_exits_2(capsys):
    assert main(["plan", "--task", "x", "--method", "nope"]) == 2
    assert "unknown method" in capsys.readouterr().err


def test_cli_missing_domain_exits_2(suite_copy, capsys):
    path = _config(suite_copy, domain="missing/domain.json", tasks=[{"name": "x", "script": "scripts/iron_a_shirt.json"}])
    assert main(["batch", "--config", str(path)]) == 2
    assert "missing/domain.json" in capsys.readouterr().err


def test_cli_usage_error_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_cli_domains_validate(tmp_path, capsys):
    assert main(["domains", "validate", str(default_domain_path("household"))]) == 0
    bad = tmp_path / "bad.json"
    doc = json.loads(default_domain_path("robot").read_text())
    doc["objects"].append(dict(doc["objects"][0]))
    bad.write_text(json.dumps(doc))
    assert main(["domains", "validate", str(bad)]) == 1
    assert "duplicate" in capsys.readouterr().err


def test_cli_batch_and_eval(tmp_path, capsys):
    assert main(["batch", "--out", str(tmp_path), "--jobs", "2"]) == 0
    assert main(["eval", "--results", str(tmp_path / "results.jsonl"), "--out", str(tmp_path / "eval")]) == 0
    assert (tmp_path / "eval" / "report.csv").read_text() == (tmp_path / "report.csv").read_text()
