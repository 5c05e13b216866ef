import numpy as np
import pytest
import yaml

from batchexp3 import snapshot as snapshot_io
from batchexp3.config import ConfigError, ExperimentConfig
from batchexp3.feedback_pipeline import EventLog
from batchexp3.runner import EVENTS, SNAPSHOT, UPDATES, main, resume, run
from conftest import small_config_dict


def cfg(**over):
    return ExperimentConfig.from_dict(small_config_dict(**over))


def read(out):
    return (out / EVENTS).read_bytes(), (out / UPDATES).read_bytes()


def test_full_run_writes_every_artifact(tmp_path):
    res = run(cfg(), out_dir=tmp_path / "o")
    out = res.out_dir
    assert res.complete
    for name in ("config.yaml", "normalization.yaml", EVENTS, UPDATES, SNAPSHOT, "regret.csv",
                 "regret_profit.csv", "group_summary.csv", "summary.yaml"):
        assert (out / name).is_file(), name
    heat = sorted(p.name for p in (out / "heatmaps").iterdir())
    assert "heatmap_placement_item0.csv" in heat and "heatmap_profit_item2.csv" in heat
    summary = yaml.safe_load((out / "summary.yaml").read_text())
    assert summary["released"] + summary["unreleased_tail"] == summary["enqueued"] == 3 * 48
    assert summary["unreleased_tail"] == 3 * 4
    log = EventLog.read(out / EVENTS, out / UPDATES)
    assert len(log.rows) == 3 * 48
    assert log.meta["config_hash"] == cfg().structural_hash()


def test_same_seed_byte_identical(tmp_path):
    run(cfg(), out_dir=tmp_path / "a")
    run(cfg(), out_dir=tmp_path / "b")
    assert read(tmp_path / "a") == read(tmp_path / "b")
    run(cfg(), out_dir=tmp_path / "c", seed=12)
    assert read(tmp_path / "a")[0] != read(tmp_path / "c")[0]


def test_resume_matches_straight_run(tmp_path):
    run(cfg(), out_dir=tmp_path / "full")
    part = run(cfg(), out_dir=tmp_path / "split", stop_at=21)
    assert not part.complete and not (tmp_path / "split" / "regret.csv").exists()
    res = resume(tmp_path / "split" / SNAPSHOT, cfg())
    assert res.complete
    assert read(tmp_path / "full") == read(tmp_path / "split")
    assert (tmp_path / "full" / SNAPSHOT).read_bytes() == (tmp_path / "split" / SNAPSHOT).read_bytes()
    assert (tmp_path / "full" / "regret.csv").read_bytes() == (tmp_path / "split" / "regret.csv").read_bytes()


def test_resume_twice(tmp_path):
    run(cfg(delta=2), out_dir=tmp_path / "full")
    run(cfg(delta=2), out_dir=tmp_path / "s", stop_at=9)
    resume(tmp_path / "s" / SNAPSHOT, cfg(delta=2), stop_at=30)
    resume(tmp_path / "s" / SNAPSHOT, cfg(delta=2))
    assert read(tmp_path / "full") == read(tmp_path / "s")


def test_resume_with_changed_eta_logs_param_change(tmp_path):
    run(cfg(), out_dir=tmp_path / "s", stop_at=16)
    res = resume(tmp_path / "s" / SNAPSHOT, cfg(eta=0.05))
    changes = [u for u in res.log.updates if u.kind == "param_change"]
    assert len(changes) == 1 and changes[0].round == 16 and changes[0].eta == 0.05
    assert all(u.eta == 0.05 for u in res.log.updates if u.round > 16)


def test_resume_rejects_tampered_snapshot(tmp_path):
    run(cfg(), out_dir=tmp_path / "s", stop_at=16)
    path = tmp_path / "s" / SNAPSHOT
    path.write_text(path.read_text().replace("round = 16", "round = 15"))
    with pytest.raises(snapshot_io.SnapshotError, match="checksum"):
        resume(path, cfg())


def test_resume_rejects_other_config(tmp_path):
    run(cfg(), out_dir=tmp_path / "s", stop_at=16)
    with pytest.raises(snapshot_io.SnapshotError, match="hash"):
        resume(tmp_path / "s" / SNAPSHOT, cfg(seed=99))


def test_reset_event_in_log(tmp_path):
    res = run(cfg(reset=[{"round": 25, "eta": 0.01}]), out_dir=tmp_path / "o")
    resets = [u for u in res.log.updates if u.kind == "reset"]
    assert [(u.round, u.eta) for u in resets] == [(25, 0.01)]
    assert "discarded=12" in resets[0].detail


def test_resume_across_reset(tmp_path):
    c = cfg(reset=[{"round": 25, "eta": 0.01}])
    run(c, out_dir=tmp_path / "full")
    run(c, out_dir=tmp_path / "s", stop_at=30)
    res = resume(tmp_path / "s" / SNAPSHOT, c)
    assert not [u for u in res.log.updates if u.kind == "param_change"]
    assert read(tmp_path / "full") == read(tmp_path / "s")


def test_parallel_matches_sequential(tmp_path):
    run(cfg(), out_dir=tmp_path / "seq")
    run(cfg(), out_dir=tmp_path / "par", parallel=2)
    assert read(tmp_path / "seq") == read(tmp_path / "par")
    assert (tmp_path / "seq" / SNAPSHOT).read_bytes() == (tmp_path / "par" / SNAPSHOT).read_bytes()


def test_failed_run_leaves_no_partial_output(tmp_path):
    bad = cfg(normalization={"source": "file", "path": "missing.csv"})
    with pytest.raises(ConfigError):
        run(bad, out_dir=tmp_path / "o")
    assert not (tmp_path / "o").exists()


def test_constant_normalization(tmp_path):
    c = cfg(normalization={"source": "constants", "alphas": [0.5, 1.0, 0.75, 0.25],
                           "r_min": [-50, -50, -50], "r_max": [60, 60, 60]})
    res = run(c, out_dir=tmp_path / "o")
    assert res.complete
    assert np.all(np.isfinite(res.scheduler.table.scores))


def test_snapshot_round_trip(tmp_path):
    res = run(cfg(delta=2), out_dir=tmp_path / "o", stop_at=10)
    snap = snapshot_io.load(tmp_path / "o" / SNAPSHOT)
    sched = res.scheduler
    assert snap.round == 10 and snap.eta == sched.eta
    assert np.array_equal(snap.table.scores, sched.table.scores)
    assert [(p.placed, p.outcome) for p in snap.pending] == \
        [(p.placed, p.outcome) for p in sched.queue.tail()]
    text = (tmp_path / "o" / SNAPSHOT).read_text()
    with pytest.raises(snapshot_io.SnapshotError):
        snapshot_io.loads(text.rsplit("checksum", 1)[0])


def write_cfg(tmp_path, **over):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(small_config_dict(**over)))
    return path


def test_cli_run_and_resume(tmp_path, capsys):
    path = write_cfg(tmp_path)
    assert main(["run", str(path), "--out-dir", str(tmp_path / "o"), "--stop-at", "20"]) == 0
    assert "stopped at round 20" in capsys.readouterr().out
    assert main(["resume", str(tmp_path / "o" / SNAPSHOT), str(path)]) == 0
    assert "finished at round 48" in capsys.readouterr().out


def test_cli_validation_exit_code(tmp_path, capsys):
    path = write_cfg(tmp_path, q=5)
    assert main(["run", str(path), "--out-dir", str(tmp_path / "o")]) == 1
    assert "horizon" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "nope.yaml")]) == 1


def test_cli_bad_yaml(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: [1,\n")
    assert main(["run", str(path)]) == 1


def test_cli_tampered_snapshot(tmp_path):
    path = write_cfg(tmp_path)
    main(["run", str(path), "--out-dir", str(tmp_path / "o"), "--stop-at", "8"])
    snap = tmp_path / "o" / SNAPSHOT
    snap.write_text(snap.read_text().replace("eta = 0.3", "eta = 0.4"))
    assert main(["resume", str(snap), str(path)]) == 1


def test_cli_preset_exp3(tmp_path, capsys):
    assert main(["preset", "exp3-equiv", "--out-dir", str(tmp_path)]) == 0
    text = (tmp_path / "exp3-equiv_summary.txt").read_text()
    assert "FAIL" not in text and "max_trajectory_deviation = 0.0" in text


def test_minimal_config_smoke(tmp_path):
    c = cfg(n_items=1, q=4, delta=0, horizon=4)
    res = run(c, out_dir=tmp_path / "o")
    assert res.complete
    names = {p.name for p in (tmp_path / "o").iterdir()}
    assert {"config.yaml", EVENTS, UPDATES, SNAPSHOT, "regret.csv", "group_summary.csv",
            "summary.yaml", "heatmaps"} <= names


def test_cli_runtime_failure_exit_code(tmp_path, monkeypatch, capsys):
    import batchexp3.runner as runner

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(runner, "run", boom)
    assert main(["run", str(write_cfg(tmp_path))]) == 2
    assert "disk on fire" in capsys.readouterr().err
