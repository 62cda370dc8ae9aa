import csv
import json
import math
import shutil

import pytest

from hyperimp.cli import main
from hyperimp.config_space import builtin_spaces
from hyperimp.perfdata import load_knowledge_base, sample_knowledge_base_path

FAST = ["--trees", "8"]


@pytest.fixture
def sample_kb(tmp_path):
    path = tmp_path / "sample_kb.csv"
    shutil.copy(sample_knowledge_base_path(), path)
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_spec(path, spec):
    path.write_text(json.dumps(spec))
    return path


def test_importance_on_sample_kb(sample_kb, tmp_path):
    out = tmp_path / "imp"
    assert main(["importance", str(sample_kb), "--algorithm", "adaboost", "--out", str(out),
                 *FAST]) == 0
    violin = _json(out / "violin.json")
    assert {"max_depth", "learning_rate"} <= set(violin["subsets"])
    assert "learning_rate+max_depth" in violin["subsets"]
    assert len(violin["subsets"]["max_depth"]) == len(violin["datasets"]) == 4
    rows = _rows(out / "importance.csv")
    assert list(rows[0]) == ["dataset", "subset", "fraction_mean", "fraction_std",
                             "raw_variance_mean"]
    sig = _rows(out / "significance.csv")
    assert all(0.0 <= float(r["p_value"]) <= 1.0 for r in sig)
    manifest = _json(out / "run.json")
    assert manifest["command"] == "importance"
    assert manifest["seed"] == 0
    assert str(sample_kb) in manifest["inputs"]
    for key in ("argv", "parameters", "outputs", "tool_version", "timestamp", "space_files"):
        assert key in manifest


def test_max_order_one_drops_pairs(sample_kb, tmp_path):
    out = tmp_path / "imp"
    assert main(["importance", str(sample_kb), "--algorithm", "svm", "--out", str(out),
                 "--max-order", "1", *FAST]) == 0
    assert not any("+" in s for s in _json(out / "violin.json")["subsets"])
    assert not any("+" in r["subset"] for r in _rows(out / "importance.csv"))


def test_rerun_is_byte_identical(sample_kb, tmp_path):
    for name in ("a", "b"):
        assert main(["importance", str(sample_kb), "--algorithm", "random_forest",
                     "--out", str(tmp_path / name), "--seed", "3", *FAST]) == 0
    for f in ("importance.csv", "violin.json", "significance.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_parallel_jobs_give_same_bytes(sample_kb, tmp_path):
    for name, jobs in (("serial", "1"), ("parallel", "2")):
        assert main(["importance", str(sample_kb), "--algorithm", "decision_tree",
                     "--out", str(tmp_path / name), "--jobs", jobs, *FAST]) == 0
    assert (tmp_path / "serial" / "importance.csv").read_bytes() == \
        (tmp_path / "parallel" / "importance.csv").read_bytes()


def test_priors_default_to_top_hyperparameter(sample_kb, tmp_path):
    out = tmp_path / "imp"
    assert main(["importance", str(sample_kb), "--algorithm", "adaboost", "--out", str(out),
                 *FAST]) == 0
    top = _json(out / "violin.json")["ranking"][0]
    pri = tmp_path / "pri"
    assert main(["priors", str(sample_kb), "--algorithm", "adaboost", "--out", str(pri),
                 "--importance", str(out / "violin.json")]) == 0
    summary = _json(pri / f"prior_{top}.json")
    assert summary["hyperparameter"] == top
    assert summary["n_samples"] == 4
    assert {"recommended_default", "bandwidth"} <= set(summary)


def test_categorical_priors_give_frequency_table(sample_kb, tmp_path):
    out = tmp_path / "pri"
    assert main(["priors", str(sample_kb), "--algorithm", "svm", "--hyperparameter", "kernel",
                 "--out", str(out)]) == 0
    assert (out / "frequencies_kernel.csv").exists()
    assert not (out / "density_kernel.csv").exists()
    probs = [float(r["probability"]) for r in _rows(out / "frequencies_kernel.csv")]
    assert sum(probs) == pytest.approx(1.0, abs=1e-12)


def test_top_q_sample_count(sample_kb, tmp_path):
    out = tmp_path / "pri"
    assert main(["priors", str(sample_kb), "--algorithm", "svm", "--hyperparameter", "gamma",
                 "--top-q", "0.05", "--out", str(out)]) == 0
    kb = load_knowledge_base(sample_kb, builtin_spaces())
    expected = sum(math.ceil(0.05 * len(t)) for t in kb.filter(algorithm="svm"))
    assert _json(out / "prior_gamma.json")["n_samples"] == expected
    curve = [(float(r["value"]), float(r["density"])) for r in _rows(out / "density_gamma.csv")]
    area = sum((x1 - x0) * (y0 + y1) / 2 for (x0, y0), (x1, y1) in zip(curve, curve[1:]))
    assert area == pytest.approx(1.0, abs=1e-3)


def test_tunability_median_reference(sample_kb, tmp_path):
    out = tmp_path / "tun"
    assert main(["tunability", str(sample_kb), "--reference", "per-dataset-median",
                 "--out", str(out)]) == 0
    rows = _rows(out / "tunability.csv")
    per_dataset = [r for r in rows if not r["dataset"].startswith("aggregate_")]
    assert len(per_dataset) == 24
    assert all(float(r["delta"]) >= 0.0 for r in per_dataset)
    assert sum(r["dataset"] == "aggregate_std" for r in rows) == 6


def test_rank_and_winmatrix(sample_kb, tmp_path, capsys):
    assert main(["rank", str(sample_kb), "--out", str(tmp_path / "r")]) == 0
    ranks = _rows(tmp_path / "r" / "rank.csv")
    assert sum(float(r["mean_rank"]) for r in ranks) == pytest.approx(21.0, abs=1e-9)
    assert main(["winmatrix", str(sample_kb), "--out", str(tmp_path / "w")]) == 0
    assert "tie band 0.01" in capsys.readouterr().out
    assert _json(tmp_path / "w" / "run.json")["parameters"]["tie_band"] == 0.01
    rows = _rows(tmp_path / "w" / "winmatrix.csv")
    assert len(rows) == 30
    for r in rows:
        total = float(r["win_pct"]) + float(r["tie_pct"]) + float(r["loss_pct"])
        assert total == pytest.approx(100.0, abs=1e-9)


def test_rank_planted_dominance(tmp_path):
    spec = _write_spec(tmp_path / "spec.json", {"n_samples": 20, "algorithms": [
        {"name": "strong", "space": "svm", "datasets": 5, "offset": 0.9, "scale": 0.0,
         "noise": 0.0},
        {"name": "weak", "space": "svm", "datasets": 5, "offset": 0.7, "scale": 0.0,
         "noise": 0.0},
    ]})
    kb = tmp_path / "kb" / "kb.csv"
    assert main(["synth", str(spec), "--out", str(kb)]) == 0
    assert main(["rank", str(kb), "--out", str(tmp_path / "r"),
                 "--space-dir", str(tmp_path / "kb" / "kb.spaces")]) == 0
    ranks = {r["algorithm"]: float(r["mean_rank"]) for r in _rows(tmp_path / "r" / "rank.csv")}
    assert ranks["strong"] == 1.0


def test_synth_outputs_and_determinism(tmp_path):
    spec = _write_spec(tmp_path / "spec.json", {
        "n_samples": 40,
        "spaces": {"toy2": {"algorithm": "toy2", "domains": [
            {"name": "a", "kind": "continuous", "lower": 0.0, "upper": 1.0},
            {"name": "b", "kind": "continuous", "lower": 0.0, "upper": 1.0}]}},
        "algorithms": [
            {"name": "toy2", "datasets": 3, "terms": [
                {"hyperparameters": ["a"]}, {"hyperparameters": ["b"]}]},
            {"name": "svm", "datasets": 2},
        ],
    })
    for name in ("one", "two"):
        assert main(["synth", str(spec), "--out", str(tmp_path / name / "kb.csv"),
                     "--seed", "9"]) == 0
    one, two = tmp_path / "one", tmp_path / "two"
    assert (one / "kb.csv").read_bytes() == (two / "kb.csv").read_bytes()
    truth = _json(one / "kb.truth.json")["algorithms"]
    fr = truth["toy2"]["planted"]["fractions"]
    assert fr["a"] == pytest.approx(0.5, abs=1e-3)
    assert fr["b"] == pytest.approx(0.5, abs=1e-3)
    assert fr["a+b"] == pytest.approx(0.0, abs=1e-6)
    assert truth["svm"]["planted"]["degenerate"] is True
    assert (one / "kb.spaces" / "toy2.json").exists()
    assert (one / "run.json").exists()


@pytest.mark.parametrize("command", [
    ["importance", "{kb}", "--algorithm", "extra_trees", *FAST],
    ["priors", "{kb}", "--algorithm", "extra_trees", *FAST],
    ["tunability", "{kb}"],
    ["rank", "{kb}"],
    ["winmatrix", "{kb}", "--relative"],
])
def test_replay_reproduces_outputs(sample_kb, tmp_path, command):
    argv = [a.format(kb=sample_kb) for a in command] + ["--out", str(tmp_path / "first")]
    assert main(argv) == 0
    assert main(["replay", str(tmp_path / "first" / "run.json"),
                 "--out", str(tmp_path / "again")]) == 0
    produced = sorted(p.name for p in (tmp_path / "first").iterdir() if p.name != "run.json")
    assert produced
    for name in produced:
        assert (tmp_path / "first" / name).read_bytes() == \
            (tmp_path / "again" / name).read_bytes()


def test_replay_synth(tmp_path, monkeypatch):
    spec = _write_spec(tmp_path / "spec.json",
                       {"n_samples": 30, "algorithms": [{"name": "svm", "datasets": 2}]})
    monkeypatch.chdir(tmp_path)
    assert main(["synth", "spec.json", "--out", "a/kb.csv", "--seed", "4"]) == 0
    monkeypatch.chdir("/")
    assert main(["replay", str(tmp_path / "a" / "run.json"),
                 "--out", str(tmp_path / "b" / "kb.csv")]) == 0
    assert (tmp_path / "a" / "kb.csv").read_bytes() == (tmp_path / "b" / "kb.csv").read_bytes()
    assert spec.exists()


def test_rejected_rows_fail_unless_lenient(sample_kb, tmp_path, capsys):
    lines = sample_kb.read_text().splitlines()
    bad = lines[1].split(",")
    bad[2] = "1.7"
    lines.append(",".join(bad))
    sample_kb.write_text("\n".join(lines) + "\n")
    assert main(["rank", str(sample_kb), "--out", str(tmp_path / "r")]) == 2
    err = capsys.readouterr().err
    assert f"row {len(lines)}:" in err
    assert not (tmp_path / "r" / "rank.csv").exists()
    assert main(["rank", str(sample_kb), "--out", str(tmp_path / "r"), "--lenient"]) == 0


def test_unknown_algorithm_is_an_error(sample_kb, tmp_path, capsys):
    assert main(["importance", str(sample_kb), "--algorithm", "knn",
                 "--out", str(tmp_path / "x")]) == 1
    assert "knn" in capsys.readouterr().err


def test_bad_spec_is_an_error(tmp_path):
    spec = _write_spec(tmp_path / "spec.json", {"algorithms": []})
    assert main(["synth", str(spec), "--out", str(tmp_path / "kb.csv")]) == 1
