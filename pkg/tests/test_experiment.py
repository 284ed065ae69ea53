import csv
import json
import re

import numpy as np
import pytest
import yaml

from cfflab import cli, experiment, stats
from cfflab.diagnostics import DiagnosticSnapshot
from cfflab.experiment import ConfigError, cmd_audit, cmd_report, cmd_run, parse_config, read_records, write_record
from cfflab.report import layer_line_chart, seed_dot_plot
from cfflab.reproduce import reference_checks
from cfflab.training import RunRecord

TINY = {
    "data": {"kind": "synthetic", "num_classes": 3, "train_per_class": 16, "test_per_class": 8, "noise_std": 0.35},
    "encoder": {"embed_dim": 8, "num_heads": 2, "num_layers": 2},
    "train": {"stage1_epochs": 2, "stage2_epochs": 3, "batch_size": 16, "val_size": 6},
    "margin": {"first": 0.4, "last": 0.1},
    "diagnostics": {"epochs": [1, 2]},
    "cells": ["clamp_detach", "subtract_detach"],
    "seeds": [1, 2, 3],
}


def write_config(tmp_path, raw=TINY):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


# -- configuration -----------------------------------------------------------------

def test_parse_config_fills_train_config():
    cfg = parse_config(TINY)
    tc = cfg.cell_train_config("subtract_direct", 7)
    assert (tc.margin_type, tc.stability_mode, tc.seed) == ("subtract", "direct", 7)
    assert tc.margin_first == 0.4 and tc.diagnostic_epochs == (1, 2)


@pytest.mark.parametrize("patch,path", [
    ({"data": {"kind": "mnist"}}, "data.kind"),
    ({"data": {"bogus": 1}}, "data.bogus"),
    ({"encoder": {"embed_dim": 10, "num_heads": 3}}, "encoder"),
    ({"train": {"batch_size": 1}}, "train"),
    ({"train": {"seed": 3}}, "train.seed"),
    ({"cells": ["clamp_detach", "clamp_detach"]}, "cells"),
    ({"cells": ["clamp_sideways"]}, "cells[0]"),
    ({"seeds": []}, "seeds"),
    ({"seeds": ["a"]}, "seeds"),
    ({"margin": {"middle": 0.2}}, "margin"),
    ({"layers": 3}, "layers"),
])
def test_config_errors_name_the_field(patch, path):
    raw = {**TINY, **patch}
    with pytest.raises(ConfigError) as err:
        parse_config(raw)
    assert err.value.path == path


def test_example_config_parses():
    from pathlib import Path

    cfg = experiment.load_config(Path(__file__).parent.parent / "demos" / "configs" / "desk_sweep.yaml")
    assert len(cfg.cells) == 2 and len(cfg.seeds) == 3


# -- sweep --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    cfg = parse_config(TINY)
    out_dir, rows = cmd_run(cfg, str(out))
    return cfg, out_dir, rows


def test_sweep_writes_runs_and_manifests(sweep):
    _, out, rows = sweep
    assert len(list((out / "runs").glob("*.json"))) == 6
    assert len(rows) == 6 and all(r["status"] == "ok" for r in rows)
    with open(out / "manifest.csv") as f:
        assert next(csv.reader(f)) == ["condition", "seed", "test_accuracy", "status"]
    with open(out / "manifest_wide.csv") as f:
        wide = list(csv.reader(f))
    assert wide[0] == ["condition", "S1", "S2", "S3"] and [r[0] for r in wide[1:]] == ["clamp_detach",
                                                                                       "subtract_detach"]


def test_resume_reruns_only_missing(sweep, monkeypatch):
    cfg, out, _ = sweep
    victim = out / "runs" / "subtract_detach__seed2.json"
    before = victim.read_text()
    victim.unlink()
    calls = []
    real = experiment._execute
    monkeypatch.setattr(experiment, "_execute", lambda item: calls.append(item[1:3]) or real(item))
    cmd_run(cfg, str(out))
    assert calls == [("subtract_detach", 2)]
    after = json.loads(victim.read_text())
    expected = json.loads(before)
    after.pop("seconds"), expected.pop("seconds")
    assert after == expected


def test_sweep_is_deterministic(sweep, tmp_path):
    cfg, out, _ = sweep
    other, _ = cmd_run(cfg, str(tmp_path / "again"))
    assert (other / "manifest.csv").read_bytes() == (out / "manifest.csv").read_bytes()


def test_parallel_matches_serial(sweep, tmp_path):
    cfg, out, _ = sweep
    other, _ = cmd_run(cfg, str(tmp_path / "par"), jobs=2, seeds=[1, 2])
    serial = {(r["condition"], r["seed"]): r for r in stats.read_manifest(out / "manifest.csv")}
    for r in stats.read_manifest(other / "manifest.csv"):
        assert r == serial[(r["condition"], r["seed"])]


def test_output_dir_env_override(monkeypatch, tmp_path):
    cfg = parse_config(TINY)
    monkeypatch.setenv("CFFLAB_OUT", str(tmp_path / "env"))
    assert experiment.resolve_output_dir(cfg) == tmp_path / "env"
    assert experiment.resolve_output_dir(cfg, str(tmp_path / "flag")) == tmp_path / "flag"
    monkeypatch.delenv("CFFLAB_OUT")
    assert str(experiment.resolve_output_dir(cfg)) == "runs"


def test_failed_run_is_recorded_and_sweep_continues(tmp_path, monkeypatch):
    import cfflab.training as tr

    real = tr.stage1_train

    def flaky(encoder, data, cfg, *a, **k):
        if cfg.seed == 2:
            raise tr.DivergenceError("epoch 1: non-finite gradient")
        return real(encoder, data, cfg, *a, **k)

    monkeypatch.setattr(tr, "stage1_train", flaky)
    cfg = parse_config({**TINY, "cells": ["clamp_detach"]})
    out, rows = cmd_run(cfg, str(tmp_path))
    status = {r["seed"]: r["status"] for r in rows}
    assert status == {1: "ok", 2: "failed", 3: "ok"}
    assert "NA" in (out / "manifest_wide.csv").read_text()


def test_audit_of_completed_sweep(sweep):
    _, out, _ = sweep
    rep = cmd_audit(out / "manifest.csv", resamples=1000)
    assert {g["label"] for g in rep.groups} == {"clamp", "subtract"}


def test_atomic_record_write_leaves_no_temp(tmp_path):
    rec = RunRecord(seed=1, condition="clamp_detach", test_accuracy=50.0)
    path = write_record(rec, tmp_path)
    assert [p.name for p in tmp_path.iterdir()] == [path.name]
    assert read_records(tmp_path)[0] == rec


# -- report -------------------------------------------------------------------------

def test_dot_plot_marker_count():
    groups = {"clamp": list(np.linspace(77, 80, 14)), "subtract": list(np.linspace(78, 79, 14))}
    svg = seed_dot_plot(groups)
    assert svg.count('class="seed"') == 28
    assert svg.count('class="mean"') == 2 and svg.count('class="band"') == 2


def test_line_chart_series_lengths():
    svg = layer_line_chart({"clamp": np.linspace(0.6, 0.1, 8), "subtract": np.zeros(8)}, "CAR", "CAR")
    series = re.findall(r'<polyline class="series"[^>]*points="([^"]*)"', svg)
    assert len(series) == 2 and all(len(s.split()) == 8 for s in series)


def test_report_from_runs(sweep):
    _, out, _ = sweep
    written = {p.name for p in cmd_report(out)}
    assert written == {"per_seed.csv", "seed_spread.svg", "diagnostics.csv", "car_by_layer.svg",
                       "grad_norm_by_layer.svg"}
    with open(out / "report" / "diagnostics.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 6 * 2 * 2  # runs x diagnostic epochs x layers


def test_report_csv_round_trips_through_audit(sweep):
    _, out, _ = sweep
    cmd_report(out)
    a = cmd_audit(out / "manifest.csv", resamples=1000).to_dict()
    b = cmd_audit(out / "report" / "per_seed.csv", resamples=1000).to_dict()
    assert a == b


def test_report_from_fixture_manifest(tmp_path):
    stats.write_manifest(stats.load_fixture("cifar10_standard"), tmp_path / "manifest.csv")
    written = cmd_report(tmp_path)
    svg = (tmp_path / "report" / "seed_spread.svg").read_text()
    assert svg.count('class="seed"') == 28 and len(written) == 2
    assert stats.read_manifest(tmp_path / "report" / "per_seed.csv") == \
        sorted(stats.read_manifest(tmp_path / "manifest.csv"), key=lambda r: (r["condition"], r["seed"]))


def test_report_eight_layer_diagnostics(tmp_path):
    for margin_type in ("clamp", "subtract"):
        for seed in (1, 2):
            snap = DiagnosticSnapshot(5, list(np.linspace(0.7, 0.0, 8)), [1.0] * 8, [0.1] * 8)
            write_record(RunRecord(seed=seed, condition=f"{margin_type}_detach", test_accuracy=70.0 + seed,
                                   snapshots=[snap]), tmp_path / "runs")
    cmd_report(tmp_path)
    svg = (tmp_path / "report" / "car_by_layer.svg").read_text()
    series = re.findall(r'points="([^"]*)"', svg)
    assert len(series) == 2 and all(len(s.split()) == 8 for s in series)


def test_report_empty_directory_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        cmd_report(tmp_path)


# -- reproduction battery and CLI ------------------------------------------------------

def test_reproduction_battery_passes():
    checks = reference_checks(resamples=10_000)
    failed = [c.name for c in checks if not c.passed]
    assert not failed, failed
    names = {c.name for c in checks}
    assert {"Fashion-MNIST VR", "CIFAR-100 VR", "SVHN VR", "C10 VR = F(13,13)"} <= names


def test_cli_reproduce_exit_code(capsys):
    assert cli.main(["reproduce-paper-stats"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "statistic" in out and "FAIL" not in out


def test_cli_reproduce_failure_exit_code(monkeypatch, capsys):
    import cfflab.reproduce as rp

    real = rp.reference_checks
    monkeypatch.setattr(experiment, "reference_checks",
                        lambda bootstrap_seed=0: real(bootstrap_seed) + [rp.Check("forced", 1.0, 2.0, 0.1, False)])
    assert cli.main(["reproduce-paper-stats"]) == cli.EXIT_REPRODUCTION


def test_cli_config_error_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, {**TINY, "seeds": []})
    assert cli.main(["run", "--config", str(path)]) == cli.EXIT_CONFIG
    assert "seeds" in capsys.readouterr().err


def test_cli_run_failure_exit_code(tmp_path, monkeypatch, capsys):
    import cfflab.training as tr

    def boom(*a, **k):
        raise tr.DivergenceError("epoch 1: boom")

    monkeypatch.setattr(tr, "stage1_train", boom)
    path = write_config(tmp_path, {**TINY, "cells": ["clamp_detach"], "seeds": [1]})
    assert cli.main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == cli.EXIT_RUN_FAILURE


def test_cli_run_audit_report(tmp_path, capsys):
    path = write_config(tmp_path, {**TINY, "cells": ["clamp_detach", "subtract_direct"]})
    out = tmp_path / "o"
    assert cli.main(["run", "--config", str(path), "--out", str(out), "--seed-list", "1,2"]) == 0
    assert len(list((out / "runs").glob("*.json"))) == 4
    assert cli.main(["audit", str(out / "manifest.csv"), "--resamples", "1000",
                     "--out", str(tmp_path / "a.json")]) == 0
    assert "Grouped test accuracy" in capsys.readouterr().out
    assert json.loads((tmp_path / "a.json").read_text())["groups"]
    assert cli.main(["report", str(out)]) == 0


def test_cli_audit_input_errors(tmp_path, capsys):
    assert cli.main(["audit", str(tmp_path / "missing.csv")]) == cli.EXIT_INPUT
    (tmp_path / "short.csv").write_text("condition,seed,test_accuracy,status\nclamp_detach,1,70.0,ok\n"
                                        "subtract_detach,1,71.0,ok\nsubtract_detach,2,72.0,ok\n")
    assert cli.main(["audit", str(tmp_path / "short.csv")]) == cli.EXIT_INPUT
    assert "clamp" in capsys.readouterr().err
    assert cli.main(["report", str(tmp_path / "nothing")]) == cli.EXIT_INPUT


def test_cli_audit_fixture_group_by(tmp_path, capsys):
    stats.write_manifest(stats.load_fixture("cifar10_standard"), tmp_path / "m.csv")
    assert cli.main(["audit", str(tmp_path / "m.csv"), "--group-by", "stability", "--resamples", "1000"]) == 0
    assert "detach" in capsys.readouterr().out
