import csv
import json
import xml.dom.minidom

import pytest

from mdlnets import experiment
from mdlnets.experiment import ConfigError, ExperimentConfig, build_config, make_table, rescore_bundle, run
from mdlnets.plotting import make_scatter


def quick(tmp_path, name="b", **kw):
    over = {"generations": "4", "population": "8", "islands": "2", "migration_interval": "2", "train_size": "60"}
    over.update({k: str(v) for k, v in kw.items()})
    over["output_dir"] = str(tmp_path / name)
    return build_config("desk", overrides=over)


def test_regime_compatibility():
    with pytest.raises(ConfigError, match="cannot optimise"):
        ExperimentConfig(task="anbn", regime="gradient_descent", reg="mdl")
    with pytest.raises(ConfigError):
        ExperimentConfig(task="anbn", regime="gradient_descent", reg="none_with_h_limit")
    with pytest.raises(ConfigError, match="none_with_h_limit"):
        ExperimentConfig(task="anbn", regime="ga_architecture", reg="none")
    with pytest.raises(ConfigError):
        ExperimentConfig(task="dyck2", regime="gradient_descent", reg="l1")
    ExperimentConfig(task="anbn", regime="gradient_descent", reg="none")


def test_config_layering(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("# comment\ntask = dyck1\ngenerations = 7\n")
    cfg = build_config("desk", [str(f)], {"generations": "9"})
    assert (cfg.task, cfg.generations, cfg.islands) == ("dyck1", 9, 4)
    assert build_config("paper").population == 500
    with pytest.raises(ConfigError, match="unknown config key"):
        build_config(overrides={"bogus": "1"})
    with pytest.raises(ConfigError, match="bad value"):
        build_config(overrides={"islands": "many"})
    with pytest.raises(ConfigError, match="unknown preset"):
        build_config("cluster")


def test_h_limit_is_three_times_golden():
    cfg = ExperimentConfig(reg="none_with_h_limit")
    assert cfg.regularizer(100).h_limit == 300


def test_bundle_contents_and_round_trip(tmp_path):
    out = run(quick(tmp_path))
    for name in ("config.txt", "manifest.json", "train.txt", "golden.net", "final.net", "report.csv", "trace.csv"):
        assert (out / name).exists(), name
    rows = experiment.read_rows(out / "report.csv")
    assert [r["golden"] for r in rows] == ["1", "0"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["task"] == "anbn"
    assert len(manifest["inputs"]["golden"]) == 64
    recorded, recomputed = rescore_bundle(out)
    assert recomputed == pytest.approx(recorded, abs=1e-9)
    with open(out / "trace.csv") as fh:
        trace = list(csv.DictReader(fh))
    assert len(trace) == 4 * 2


def test_run_is_deterministic(tmp_path):
    a = run(quick(tmp_path, "a", task="dyck1", reg="l2"))
    b = run(quick(tmp_path, "b", task="dyck1", reg="l2"))
    for name in ("report.csv", "final.net", "trace.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_weights_only_bundle(tmp_path):
    out = run(quick(tmp_path, regime="ga_weights_only", task="dyck1", reg="l2"))
    rows = experiment.read_rows(out / "report.csv")
    assert rows[1]["regime"] == "ga_weights_only"


def test_gradient_bundle(tmp_path):
    cfg = build_config(overrides={"task": "anbn", "regime": "gradient_descent", "reg": "l1", "epochs": "3",
                                  "train_size": "40", "output_dir": str(tmp_path / "gd")})
    out = run(cfg)
    rows = experiment.read_rows(out / "report.csv")
    assert {r["h_kind"] for r in rows} == {"approx"}
    assert (out / "trace.csv").read_text().splitlines()[0] == "epoch,train_ce_bits,reg_term,loss"
    assert len((out / "trace.csv").read_text().splitlines()) == 1 + 4


def test_corrupt_golden_aborts(tmp_path, monkeypatch):
    from mdlnets.golden import load_golden

    broken = load_golden("dyck1")
    conns = [c for c in broken.connections if c.dst != "out:]"]
    monkeypatch.setattr(experiment, "load_golden", lambda name: broken.with_changes(connections=conns))
    with pytest.raises(RuntimeError, match="failed verification"):
        run(quick(tmp_path, task="dyck1"))


def test_resume_matches_uninterrupted(tmp_path):
    kw = dict(task="dyck1", reg="l2", generations=6, checkpoint_every=2)
    full = run(quick(tmp_path, "full", **kw))
    count = [0]

    def stop(net):
        count[0] += 1
        if count[0] == 8 * 2 * 4 + 5:  # past the generation-2 checkpoint
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        run(quick(tmp_path, "cut", **kw), on_evaluate=stop)
    resumed = experiment.resume(tmp_path / "cut")
    for name in ("report.csv", "final.net", "trace.csv"):
        assert (full / name).read_bytes() == (resumed / name).read_bytes()


def test_resume_requires_checkpoints(tmp_path):
    out = run(quick(tmp_path))
    with pytest.raises(ConfigError):
        experiment.resume(out)


def test_table_layout(tmp_path):
    a = run(quick(tmp_path, "a"))
    b = run(quick(tmp_path, "b", reg="l1"))
    csv_text, text = make_table([a, b])
    lines = csv_text.splitlines()
    # golden row appears once per task/regime, parenthesised
    assert len(lines) == 1 + 3
    golden = lines[1].split(",")
    assert golden[1] == "Golden" and all(c.startswith("(") for c in golden[2:])
    assert golden[-1] == "(0.0)"
    assert "Δ test %" in text.splitlines()[0]
    with pytest.raises(ValueError):
        make_table([])


def test_table_marks_smoothing(tmp_path):
    out = run(quick(tmp_path))
    path = out / "report.csv"
    rows = experiment.read_rows(path)
    rows[1]["smoothed_test"] = "1"
    experiment._write_rows(path, rows)
    csv_text, _ = make_table([out])
    assert csv_text.splitlines()[2].split(",")[6].endswith("*")


def test_table_deltas_recompute(tmp_path):
    out = run(quick(tmp_path))
    for r in experiment.read_rows(out / "report.csv"):
        d = (float(r["dh_test"]) - float(r["opt_test"])) / float(r["opt_test"]) * 100
        assert d == pytest.approx(float(r["delta_test_pct"]))


def test_scatter(tmp_path):
    a = run(quick(tmp_path, "a"))
    b = run(quick(tmp_path, "b", task="dyck1"))
    path = make_scatter([a, b], tmp_path / "s.svg")
    doc = xml.dom.minidom.parse(str(path))
    panels = [g for g in doc.getElementsByTagName("g") if g.getAttribute("id").startswith("panel-")]
    assert {p.getAttribute("id") for p in panels} == {"panel-anbn", "panel-dyck1"}
