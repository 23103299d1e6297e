import json

import pytest

from selfonn1d.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, data_hash, main, parse_config_file
from selfonn1d.cli import resolve_config
from selfonn1d.errors import ConfigError

PATIENTS = (*range(100, 125), 200, 201, 202)


def _write_config(path, **kv):
    path.write_text("".join(f"{k} = {v}\n" for k, v in kv.items()))
    return str(path)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    cfg = _write_config(out.parent / "synth.cfg", beats_per_class=20, patients=",".join(map(str, PATIENTS)))
    assert main(["synth", "--config", cfg, "--out", str(out), "--seed", "3"]) == EXIT_OK
    return out


def _train_cfg(tmp_path, synth_dir, name="train.cfg", **extra):
    base = dict(data_dir=synth_dir, train_seconds=40, runs=1, max_epochs=3, patients="200,201,202")
    base.update(extra)
    return _write_config(tmp_path / name, **base)


def test_config_parsing(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nq = 3  # trailing\n\nlayer_neurons = 4, 2\n")
    raw = parse_config_file(p)
    assert raw == {"q": "3", "layer_neurons": "4, 2"}
    cfg = resolve_config("complexity", raw)
    assert cfg["q"] == 3 and cfg["layer_neurons"] == (4, 2)
    p.write_text("q = 3\nq = 4\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_file(p)
    with pytest.raises(ConfigError, match="bad value"):
        resolve_config("complexity", {"q": "three"})


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.cfg", q=3, bogus=1)
    assert main(["complexity", "--config", cfg]) == EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err


def test_flag_not_for_command_exits_2(capsys):
    assert main(["complexity", "--jobs", "2"]) == EXIT_CONFIG


def test_missing_dataset_exits_3(tmp_path, capsys):
    cfg = _write_config(tmp_path / "c.cfg", data_dir=tmp_path / "absent")
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert main(["eval", "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_complexity_output(capsys):
    assert main(["complexity", "--q", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "8913" in out and "16969" in out and "7369" in out
    assert "148050" in out and "450370" in out


def test_bench_smoke(tmp_path, capsys):
    cfg = _write_config(tmp_path / "b.cfg", repetitions=5, qs="1,3")
    assert main(["bench", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "bench.json").read_text())
    assert [r["Q"] for r in report["results"]] == [1, 3]
    assert report["results"][0]["fp"]["median_us"] > 0
    assert "FP med" in capsys.readouterr().out


def test_synth_reports_separability(tmp_path, capsys):
    cfg = _write_config(tmp_path / "s.cfg", beats_per_class=4, patients="100,101")
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "d")]) == EXIT_OK
    assert "nearest-template accuracy: 1.0000" in capsys.readouterr().out
    assert sorted(p.name for p in (tmp_path / "d").iterdir()) == [
        "100.annotations.csv", "100.record.csv", "101.annotations.csv", "101.record.csv"]


def test_train_eval_pipeline(tmp_path, synth_dir, capsys):
    cfg = _train_cfg(tmp_path, synth_dir, q=1)
    out = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert sorted(p.name for p in (out / "models").iterdir()) == ["200.npz", "201.npz", "202.npz"]
    log = json.loads((out / "train_log.json").read_text())
    assert set(log) == {"200", "201", "202"} and all(v["epochs"] <= 3 for v in log.values())
    assert "q = 1" in (out / "train_config.txt").read_text()

    eval_cfg = _write_config(tmp_path / "e.cfg", data_dir=synth_dir, train_seconds=40, patients="200,201,202")
    assert main(["eval", "--config", eval_cfg, "--out", str(out)]) == EXIT_OK
    first = (out / "report.csv").read_text()
    text = (out / "report.txt").read_text()
    assert "SVEB" in text and "test beats:" in text
    assert first.splitlines()[0] == "patient_id,n,s,v,f,q,task,acc,sen,spe,ppr,f1"
    assert len(first.splitlines()) == 1 + 3 * 2

    # evaluation is deterministic
    assert main(["eval", "--config", eval_cfg, "--out", str(out)]) == EXIT_OK
    assert (out / "report.csv").read_text() == first

    # data settings differing from training are refused
    bad = _write_config(tmp_path / "bad.cfg", data_dir=synth_dir, train_seconds=30, patients="200,201,202")
    assert main(["eval", "--config", bad, "--out", str(out)]) == EXIT_CONFIG
    assert "refusing" in capsys.readouterr().err


def test_training_is_reproducible_and_q_only_changes_network(tmp_path, synth_dir):
    cfg = _train_cfg(tmp_path, synth_dir, patients="200", max_epochs=2)
    runs = {}
    for name, q in (("a", 1), ("b", 1), ("c", 7)):
        out = tmp_path / name
        assert main(["train", "--config", cfg, "--q", str(q), "--out", str(out)]) == EXIT_OK
        runs[name] = out
    a, b, c = ((runs[n] / "models" / "200.npz").read_bytes() for n in "abc")
    assert a == b
    assert a != c
    conf = {n: (runs[n] / "train_config.txt").read_text().splitlines() for n in "ac"}
    diff = [(x, y) for x, y in zip(conf["a"], conf["c"]) if x != y and not x.startswith("out ")]
    assert diff == [("q = 1", "q = 7")]


def test_parallel_training_matches_serial(tmp_path, synth_dir):
    cfg = _train_cfg(tmp_path, synth_dir, patients="200,201", max_epochs=1, q=1)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "s")]) == EXIT_OK
    assert main(["train", "--config", cfg, "--jobs", "2", "--out", str(tmp_path / "p")]) == EXIT_OK
    for pid in ("200", "201"):
        assert (tmp_path / "s" / "models" / f"{pid}.npz").read_bytes() == \
            (tmp_path / "p" / "models" / f"{pid}.npz").read_bytes()


def test_data_hash_tracks_partition_settings():
    base = {"sampling_rate": 360.0, "lead": "", "train_seconds": 300.0, "excluded_ids": (102,), "seed": 0}
    assert data_hash(base) == data_hash(dict(base))
    assert data_hash(base) != data_hash({**base, "seed": 1})
    assert data_hash(base) != data_hash({**base, "train_seconds": 200.0})
