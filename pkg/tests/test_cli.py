import json

import pytest

from relpolicy import RelationalModel
from relpolicy.cli import main
from relpolicy.envs import builtin


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


SMALL = ("--dim", "4", "--layers", "1", "--rollout-steps", "16", "--num-envs", "4",
         "--update-epochs", "1")


def test_train_smoke_writes_artifacts(tmp_path, capsys):
    code, out, _ = run(capsys, "--mode", "train", "--total-steps", "128", "--out",
                       str(tmp_path / "r"), *SMALL)
    assert code == 0
    metrics = [json.loads(x) for x in (tmp_path / "r" / "metrics.jsonl").read_text().splitlines()]
    assert [m["step"] for m in metrics] == [64, 128]
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["seeds"] == {"seed": 0, "split_seed": 0}
    assert len(manifest["train"]) == 5 and manifest["code"]["git"]
    model = RelationalModel.load(tmp_path / "r" / "checkpoints" / "final")
    assert model.dim == 4


def test_stage_boundaries_write_checkpoints(tmp_path, capsys):
    code, *_ = run(capsys, "--mode", "train", "--total-steps", "192", "--anneal-every", "64",
                   "--out", str(tmp_path / "r"), *SMALL)
    assert code == 0
    names = sorted(p.name for p in (tmp_path / "r" / "checkpoints").iterdir())
    assert names == ["final", "stage-0", "stage-1"]


def test_missing_domain_file_is_a_config_error(tmp_path, capsys):
    code, _, err = run(capsys, "--mode", "train", "--domain", str(tmp_path / "none.json"),
                       "--out", str(tmp_path / "r"))
    assert code == 2 and "ConfigError" in err


def test_bad_flag_values(tmp_path, capsys):
    assert run(capsys, "--mode", "train", "--out", str(tmp_path), "--total-steps", "-5")[0] == 2
    assert run(capsys, "--mode", "dance")[0] == 2
    assert run(capsys, "--mode", "train")[0] == 2  # no --out


def test_collect_expert_dataset_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        code, out, _ = run(capsys, "--mode", "collect-expert", "--dataset",
                           str(tmp_path / f"{name}.jsonl"))
        assert code == 0 and "2000 samples" in out
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_imitate_small_dataset(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    run(capsys, "--mode", "collect-expert", "--dataset", str(data), "--episodes", "1")
    lines = data.read_text().splitlines()
    data.write_text("\n".join(lines[:11]) + "\n")
    code, out, _ = run(capsys, "--mode", "imitate", "--dataset", str(data), "--epochs", "5",
                       "--dim", "4", "--layers", "1", "--out", str(tmp_path / "im"))
    assert code == 0
    report = json.loads((tmp_path / "im" / "report.json").read_text())
    assert report["samples"] == 10 and 0 <= report["heldout_agreement"] <= 1
    assert len((tmp_path / "im" / "loss.jsonl").read_text().splitlines()) == 5


def test_imitate_rejects_dataset_from_other_language(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    run(capsys, "--mode", "collect-expert", "--dataset", str(data), "--episodes", "1")
    code, _, err = run(capsys, "--mode", "imitate", "--domain", "gridnav", "--dataset",
                       str(data), "--out", str(tmp_path / "im"))
    assert code == 2 and "language" in err


def test_imitate_reports_illegal_label_index(tmp_path, capsys):
    data = tmp_path / "d.jsonl"
    run(capsys, "--mode", "collect-expert", "--dataset", str(data), "--episodes", "1")
    lines = data.read_text().splitlines()
    rec = json.loads(lines[3])
    rec["action"] = {"symbol": "reboot", "object": None}
    lines[3] = json.dumps(rec)
    data.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "--mode", "imitate", "--dataset", str(data), "--out",
                       str(tmp_path / "im"))
    assert code == 2 and "sample 2" in err


def test_eval_and_score_tables(tmp_path, capsys):
    code, out, _ = run(capsys, "--mode", "score", "--agent", "noop", "--episodes", "3",
                       "--out", str(tmp_path))
    assert code == 0
    rows = [r.split("\t") for r in (tmp_path / "scores.tsv").read_text().splitlines()[1:]]
    assert {float(r[4]) for r in rows if r[2] == "noop"} == {0.0}
    summary = (tmp_path / "summary.tsv").read_text().splitlines()
    assert summary[0].split("\t")[0] == "agent"
    code, out, _ = run(capsys, "--mode", "eval", "--agent", "expert", "--episodes", "2",
                       "--out", str(tmp_path))
    rows = [r.split("\t") for r in (tmp_path / "eval.tsv").read_text().splitlines()[1:]]
    assert code == 0 and {r[2] for r in rows} == {"expert", "random", "noop"}
    assert all(r[5] == "2" for r in rows)


def test_corrupt_checkpoint_exit_code(tmp_path, capsys):
    dom, _ = builtin("sysadmin")
    RelationalModel(dom.language, dim=4, layers=1).save(tmp_path / "ck")
    (tmp_path / "ck" / "params.bin").write_bytes(b"\0" * 16)
    code, _, err = run(capsys, "--mode", "eval", "--checkpoint", str(tmp_path / "ck"),
                       "--episodes", "1")
    assert code == 2 and "ChecksumMismatch" in err


def test_inspect_prints_distribution(tmp_path, capsys):
    dom, _ = builtin("sysadmin")
    RelationalModel(dom.language, dim=4, layers=1).save(tmp_path / "ck")
    code, out, _ = run(capsys, "--mode", "inspect", "--checkpoint", str(tmp_path / "ck"),
                       "--instance", "sysadmin_01")
    doc = json.loads(out)
    assert code == 0 and doc["instance"] == "sysadmin_01"
    assert sum(p["p"] for p in doc["distribution"]["pairs"]) == pytest.approx(1.0)
    assert len(doc["distribution"]["pairs"]) == 6  # 5 reboots + noop


def test_numeric_failure_exit_code(tmp_path, capsys, monkeypatch):
    from relpolicy import training
    from relpolicy.exceptions import NonFiniteLoss

    def boom(*a, **k):
        raise NonFiniteLoss("nan loss")

    monkeypatch.setattr(training, "ppo_update", boom)
    code, _, err = run(capsys, "--mode", "train", "--total-steps", "64", "--out",
                       str(tmp_path / "r"), *SMALL)
    assert code == 3 and "NonFiniteLoss" in err
