import json
import shutil

import pytest

from cadebench.cli import main
from cadebench.core import DatasetManifest, SampleRecord, Split, Tier, load_manifest, save_manifest
from cadebench.synthetic import make_dataset

from conftest import FIXTURE_DIR


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    make_dataset(root / "data", n=6, seed=3, size=64, name="small")
    return root


@pytest.fixture
def e2e(tmp_path):
    shutil.copytree(FIXTURE_DIR, tmp_path / "e2e")
    return tmp_path / "e2e"


# -- exit codes ------------------------------------------------------------------

def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 64
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert main(["evaluate", "--bogus"]) == 64
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand():
    assert main(["train"]) == 64


def test_evaluate_without_pred_is_validation_error(e2e, capsys):
    assert main(["evaluate", "--manifest", str(e2e / "data/manifest.jsonl"), "--out", str(e2e / "r.json")]) == 1
    assert "--pred" in capsys.readouterr().err


@pytest.mark.parametrize("cmd", [["augment", "--preset", "downstream-train-ndsa"], ["corrupt"]])
def test_seed_is_mandatory(cmd, small_data, tmp_path):
    args = cmd + ["--manifest", str(small_data / "data/manifest.jsonl"), "--out-dir", str(tmp_path / "o")]
    assert main(args) == 1


def test_seed_range_checked(small_data, tmp_path):
    base = ["corrupt", "--manifest", str(small_data / "data/manifest.jsonl"), "--out-dir", str(tmp_path)]
    assert main(base + ["--seed", "-1"]) == 64
    assert main(base + ["--seed", str(2 ** 64)]) == 64


def test_missing_manifest_is_io_error(tmp_path):
    assert main(["corrupt", "--seed", "1", "--manifest", str(tmp_path / "none.jsonl"),
                 "--out-dir", str(tmp_path / "o")]) == 2


def test_bad_manifest_is_validation_error(tmp_path):
    (tmp_path / "m.jsonl").write_text('{"name": "x", "split": "Test", "version": 1}\n{"id": 1}\n')
    assert main(["consensus", "--manifest", str(tmp_path / "m.jsonl"), "--out-dir", str(tmp_path / "o")]) == 1


# -- work dir --------------------------------------------------------------------

def test_work_dir_resolves_relative_paths(e2e):
    rc = main(["--work-dir", str(e2e), "consensus", "--manifest", "data/manifest.jsonl",
               "--out-dir", "cons", "--strategy", "plausible"])
    assert rc == 0
    m = load_manifest(e2e / "cons/manifest.jsonl")
    assert (e2e / "cons" / m.records[0].gt["plausible"]).is_file()
    assert (e2e / "cons" / m.records[0].image_path).resolve() == (e2e / "data/images/s0000.png").resolve()


# -- determinism -----------------------------------------------------------------

@pytest.mark.parametrize("threads", ["1", "8"])
def test_augment_is_byte_identical(small_data, tmp_path, monkeypatch, threads):
    monkeypatch.setenv("CADE_BENCH_THREADS", threads)
    man = str(small_data / "data/manifest.jsonl")
    for out in ("a", "b"):
        assert main(["augment", "--preset", "downstream-train-dsa", "--seed", "5", "--manifest", man,
                     "--out-dir", str(tmp_path / out), "--size", "64"]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b and len([k for k in a if k.startswith("images/")]) == 6


def test_augment_threads_do_not_change_output(small_data, tmp_path, monkeypatch):
    man = str(small_data / "data/manifest.jsonl")
    for out, threads in (("serial", "1"), ("parallel", "6")):
        monkeypatch.setenv("CADE_BENCH_THREADS", threads)
        assert main(["augment", "--preset", "downstream-train-ndsa", "--seed", "9", "--manifest", man,
                     "--out-dir", str(tmp_path / out), "--size", "64"]) == 0
    assert tree_bytes(tmp_path / "serial") == tree_bytes(tmp_path / "parallel")


def test_pretrain_views_written(small_data, tmp_path):
    assert main(["augment", "--preset", "pretrain-dsa", "--seed", "1", "--views", "2",
                 "--manifest", str(small_data / "data/manifest.jsonl"), "--out-dir", str(tmp_path)]) == 1
    # 64 px images are below the 96 px local crop size; a larger set works
    make_dataset(tmp_path / "big", n=2, seed=1, size=128)
    assert main(["augment", "--preset", "pretrain-dsa", "--seed", "1", "--views", "2",
                 "--manifest", str(tmp_path / "big/manifest.jsonl"), "--out-dir", str(tmp_path / "v")]) == 0
    names = sorted(p.name for p in (tmp_path / "v/images").iterdir())
    assert names[:4] == ["s0000_global1.png", "s0000_global2.png", "s0000_local0.png", "s0000_local1.png"]


def test_corrupt_is_byte_identical(small_data, tmp_path, monkeypatch):
    monkeypatch.setenv("CADE_BENCH_THREADS", "4")
    man = str(small_data / "data/manifest.jsonl")
    for out in ("a", "b"):
        assert main(["corrupt", "--seed", "11", "--manifest", man, "--out-dir", str(tmp_path / out)]) == 0
    a = tree_bytes(tmp_path / "a")
    assert a == tree_bytes(tmp_path / "b")
    assert len(load_manifest(tmp_path / "a/manifest.jsonl")) == 30


def test_plan_is_byte_identical(tmp_path):
    base = DatasetManifest("train", Split.TRAIN, tuple(
        SampleRecord(f"b{i}", f"p{i}", i % 2, Tier.IMAGE, f"b{i}.png") for i in range(4)))
    frames = DatasetManifest("frames", Split.TRAIN, tuple(
        SampleRecord(f"f{i}", "pf", 1, Tier.HQ_FRAME if i < 30 else Tier.MQ_FRAME, f"f{i}.png")
        for i in range(50)))
    save_manifest(tmp_path / "in/base.jsonl", base)
    save_manifest(tmp_path / "in/frames.jsonl", frames)
    for out in ("a", "b"):
        assert main(["--work-dir", str(tmp_path), "plan", "--base", "in/base.jsonl", "--frames", "in/frames.jsonl",
                     "--tiers", "hq,mq", "--fraction", "0.5", "--seed", "3", "--out", f"{out}/train.jsonl",
                     "--config-out", f"{out}/config.json"]) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")
    merged = load_manifest(tmp_path / "a/train.jsonl")
    assert len(merged) == 4 + 15 + 10
    assert merged.records[0].image_path == "../in/b0.png"
    assert json.loads((tmp_path / "a/config.json").read_text())["early_stopping"]["patience"] == 25
    assert main(["--work-dir", str(tmp_path), "plan", "--base", "in/base.jsonl", "--frames", "in/frames.jsonl",
                 "--fraction", "0.3", "--seed", "3", "--out", "c.jsonl"]) == 1


# -- consensus / evaluate / compare / report --------------------------------------

def _pipeline(e2e, out="rep"):
    assert main(["--work-dir", str(e2e), "consensus", "--manifest", "data/manifest.jsonl", "--out-dir", "cons"]) == 0
    reports = []
    for model in ("proposed", "baseline"):
        path = f"{model}.json"
        assert main(["--work-dir", str(e2e), "evaluate", "--manifest", "cons/manifest.jsonl", "--pred",
                     f"pred/{model}/run0.csv", f"pred/{model}/run1.csv", "--model", model,
                     "--out", path]) == 0
        reports.append(path)
    assert main(["--work-dir", str(e2e), "compare", "--reports", *reports, "--reference", "proposed",
                 "--out", "compare.json"]) == 0
    assert main(["--work-dir", str(e2e), "report", "--reports", *reports, "--out-dir", out,
                 "--reference", "baseline"]) == 0
    return reports


def test_consensus_outputs(e2e):
    assert main(["--work-dir", str(e2e), "consensus", "--manifest", "data/manifest.jsonl", "--out-dir", "c"]) == 0
    logs = [json.loads(x) for x in (e2e / "c/consensus_log.jsonl").read_text().splitlines()]
    assert len(logs) == 6 and all(log["pair_index"] == [0, 1] for log in logs)
    m = load_manifest(e2e / "c/manifest.jsonl")
    assert set(m.records[0].gt) == {"soft", "plausible", "sweet", "hard", "average"}


def test_external_rules(e2e):
    assert main(["--work-dir", str(e2e), "consensus", "--manifest", "data/manifest.jsonl", "--out-dir", "m",
                 "--rule", "majority", "--quorum", "1"]) == 0
    assert main(["--work-dir", str(e2e), "consensus", "--manifest", "data/manifest.jsonl", "--out-dir", "x",
                 "--rule", "intersection"]) == 1  # two experts, three required
    assert main(["--work-dir", str(e2e), "consensus", "--manifest", "data/manifest.jsonl", "--out-dir", "y",
                 "--rule", "pairwise", "--quorum", "2"]) == 1


def test_pipeline_and_report_rerun(e2e):
    _pipeline(e2e, "rep1")
    _pipeline(e2e, "rep2")
    assert tree_bytes(e2e / "rep1") == tree_bytes(e2e / "rep2")
    svg = (e2e / "rep1/plots/fixture_AUROC_cls.svg").read_text()
    assert svg.count('class="bar"') == 1 and 'class="ref-line"' in svg
    rep = json.loads((e2e / "proposed.json").read_text())
    assert rep["n_runs"] == 2 and len(rep["provenance"]["predictions"]) == 2
    cmp_ = json.loads((e2e / "compare.json").read_text())
    assert cmp_["reference"] == "proposed" and cmp_["comparators"] == ["baseline"]


def test_report_refuses_mixed_provenance(e2e, capsys):
    _pipeline(e2e)
    rep = json.loads((e2e / "baseline.json").read_text())
    rep["provenance"]["manifest"]["sha256"] = "0" * 64
    (e2e / "tampered.json").write_text(json.dumps(rep))
    rc = main(["--work-dir", str(e2e), "report", "--reports", "proposed.json", "tampered.json", "--out-dir", "t"])
    assert rc == 1 and "different manifests" in capsys.readouterr().err
    rep = json.loads((e2e / "baseline.json").read_text())
    rep["config"]["threshold"] = 0.4
    (e2e / "cfg.json").write_text(json.dumps(rep))
    assert main(["--work-dir", str(e2e), "report", "--reports", "proposed.json", "cfg.json", "--out-dir", "t"]) == 1


def test_report_rejects_malformed_json(e2e):
    (e2e / "bad.json").write_text("{not json")
    assert main(["--work-dir", str(e2e), "report", "--reports", "bad.json", "--out-dir", "t"]) == 1
