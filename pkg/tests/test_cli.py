import json
import subprocess
import sys

import pytest

from procsim.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, AblationGrid, main, run_ablation
from procsim.data import file_digest, read_dataset
from procsim.numerics import DomainError


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(d / "data")]) == EXIT_OK
    return d


def _manifest(path):
    return json.loads(path.read_text())


def test_synth_outputs_and_manifest(workdir):
    data = workdir / "data"
    man = _manifest(data / "synth.manifest.json")
    assert man["command"] == "synth" and man["version"]
    for name, digest in man["outputs"].items():
        assert file_digest(name) == digest
    assert len(read_dataset(data / "train.jsonl")) == 500
    assert json.loads((data / "train_config.json").read_text())["method"] == "procsim"


def test_inject_noise_p0_keeps_labels(workdir):
    data = workdir / "data"
    out = workdir / "p0"
    rc = main(["inject-noise", "--dataset", str(data / "train.jsonl"), "--model", "uniform", "--p", "0", "--seed", "3", "--out", str(out)])
    assert rc == EXIT_OK
    src = [json.loads(line)["label"] for line in (data / "train.jsonl").read_text().splitlines()]
    dst = [json.loads(line)["label"] for line in (out / "dataset.jsonl").read_text().splitlines()]
    assert src == dst
    assert json.loads((out / "noise_audit.json").read_text())["corrupted"] == 0


def test_semantic_noise_via_cli(workdir):
    data = workdir / "data"
    out = workdir / "sem"
    rc = main(
        ["inject-noise", "--dataset", str(data / "train.jsonl"), "--model", "semantic", "--p", "0.5",
         "--seed", "1", "--taxonomy", str(data / "taxonomy.json"), "--out", str(out)]
    )
    assert rc == EXIT_OK
    rep = json.loads((out / "noise_audit.json").read_text())
    assert rep["violations"] == [] and 0.4 < rep["rate"] < 0.6
    rc = main(
        ["inject-noise", "--dataset", str(data / "train.jsonl"), "--model", "category", "--p", "0.5",
         "--seed", "1", "--categories", str(data / "categories.csv"), "--out", str(workdir / "cat")]
    )
    assert rc == EXIT_OK


def test_train_eval_clean_recall(workdir):
    data = workdir / "data"
    rc = main(
        ["train", "--dataset", str(data / "train.jsonl"), "--semantic-table", str(data / "semantic_table.csv"),
         "--config", str(data / "train_config.json"), "--topk", str(data / "train_topk.jsonl"),
         "--out", str(workdir / "run")]
    )
    assert rc == EXIT_OK
    rc = main(["eval", "--checkpoint", str(workdir / "run" / "checkpoint.json"), "--dataset", str(data / "test.jsonl"), "--out", str(workdir / "ev")])
    assert rc == EXIT_OK
    rep = json.loads((workdir / "ev" / "report.json").read_text())
    r = rep["retrieval"]["recall_at"]
    assert r["1"] >= 0.9
    assert [r[k] for k in ("1", "2", "4", "8")] == sorted(r[k] for k in ("1", "2", "4", "8"))
    assert 0.0 <= rep["nmi"] <= 1.0


def test_analyze_confidence(workdir):
    rc = main(["analyze-confidence", "--history", str(workdir / "run" / "history.jsonl"), "--out", str(workdir / "an"), "--bins", "10"])
    assert rc == EXIT_OK
    summary = json.loads((workdir / "an" / "confidence_summary.json").read_text())
    counts = [int(line.split(",")[2]) for line in (workdir / "an" / "sigma_hist_all.csv").read_text().splitlines()[1:]]
    assert sum(counts) == summary["samples"]


def test_build_taxonomy(tmp_path):
    (tmp_path / "classes.txt").write_text("sparrow\nwarbler\n")
    (tmp_path / "g.tsv").write_text("sparrow\tpasserine\nwarbler\tpasserine\npasserine\tbird\n")
    (tmp_path / "s.json").write_text('{"sparrow": ["sparrow"], "warbler": ["warbler"]}')
    args = ["build-taxonomy", "--classes", str(tmp_path / "classes.txt"), "--graph", str(tmp_path / "g.tsv"),
            "--senses", str(tmp_path / "s.json"), "--root", "bird", "--out", str(tmp_path / "tax.json")]
    assert main(args) == EXIT_OK
    tax = json.loads((tmp_path / "tax.json").read_text())
    assert tax["name"] == "bird" and tax["children"][0]["name"] == "passerine"
    assert (tmp_path / "build-taxonomy.manifest.json").exists()
    args[args.index("bird")] = "fish"
    assert main(args) == EXIT_INVALID


def test_exit_codes(tmp_path, workdir, capsys):
    assert main(["train", "--bogus"]) == EXIT_INVALID
    assert main(["nonexistent"]) == EXIT_INVALID
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.json"), "--dataset", "x", "--out", str(tmp_path)]) == EXIT_INVALID
    (tmp_path / "cfg.json").write_text('{"learning_rat": 0.1}')
    data = workdir / "data"
    base = ["train", "--dataset", str(data / "train.jsonl"), "--semantic-table", str(data / "semantic_table.csv"), "--out", str(tmp_path / "o")]
    assert main(base + ["--config", str(tmp_path / "cfg.json")]) == EXIT_INVALID
    assert main(["inject-noise", "--dataset", str(data / "train.jsonl"), "--model", "uniform", "--p", "2", "--seed", "0", "--out", str(tmp_path)]) == EXIT_INVALID
    assert main(["--version"]) == EXIT_OK

    # NaN features make the loss non-finite: a runtime failure with a diagnostic record
    lines = (data / "train.jsonl").read_text().splitlines()
    rec = json.loads(lines[0])
    rec["features"][0] = float("nan")
    (tmp_path / "nan.jsonl").write_text("\n".join([json.dumps(rec)] + lines[1:]) + "\n")
    args = ["train", "--dataset", str(tmp_path / "nan.jsonl"), "--semantic-table", str(data / "semantic_table.csv"),
            "--method", "ms", "--epochs", "30", "--classes-per-batch", "10", "--samples-per-class", "50",
            "--out", str(tmp_path / "div")]
    assert main(args) == EXIT_RUNTIME
    assert "iteration" in json.loads((tmp_path / "div" / "diverged.json").read_text())


def test_flags_override_config(tmp_path, workdir):
    data = workdir / "data"
    rc = main(
        ["train", "--dataset", str(data / "train.jsonl"), "--semantic-table", str(data / "semantic_table.csv"),
         "--config", str(data / "train_config.json"), "--topk", str(data / "train_topk.jsonl"),
         "--epochs", "1", "--strategy", "gmm", "--omega", "5", "--no-sample-records", "--out", str(tmp_path)]
    )
    assert rc == EXIT_OK
    cfg = _manifest(tmp_path / "train.manifest.json")["config"]["train"]
    assert cfg["epochs"] == 1 and cfg["confidence"]["strategy"] == "gmm" and cfg["loss"]["omega"] == 5
    assert cfg["learning_rate"] == 3e-3  # untouched file value
    first = json.loads((tmp_path / "history.jsonl").read_text().splitlines()[0])
    assert "sigma" not in first


def test_ablate_is_deterministic(tmp_path):
    grid = {
        "synth": {"samples_per_class": 20},
        "strategies": ["otsu", "global_average"],
        "noise_models": ["uniform"],
        "p": [0.0, 0.5],
        "baselines": ["ms"],
        "train": {"epochs": 2},
    }
    (tmp_path / "g.json").write_text(json.dumps(grid))
    assert main(["ablate", "--grid", str(tmp_path / "g.json"), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["ablate", "--grid", str(tmp_path / "g.json"), "--out", str(tmp_path / "b"), "--jobs", "2"]) == EXIT_OK
    assert (tmp_path / "a" / "ablation.md").read_bytes() == (tmp_path / "b" / "ablation.md").read_bytes()
    res = json.loads((tmp_path / "a" / "ablation.json").read_text())
    assert res["columns"] == ["clean", "uniform@0.5"]
    assert [(r["method"], r["strategy"]) for r in res["rows"]] == [("ms", "-"), ("procsim", "otsu"), ("procsim", "global_average")]
    assert run_ablation(AblationGrid.from_dict(grid)) == res


@pytest.mark.parametrize(
    "bad", [{"strategies": ["median"]}, {"nonsense": 1}, {"train": {"seed": 3}}, {"train": {"epochz": 1}}, {"baselines": ["sgd"]}]
)
def test_grid_validation(bad):
    with pytest.raises((DomainError, ValueError)):
        AblationGrid.from_dict(bad)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "procsim", "--version"], capture_output=True, text=True, check=True)
    assert out.stdout.strip().endswith("0.1.0")
    bad = subprocess.run([sys.executable, "-m", "procsim", "synth", "--what"], capture_output=True, text=True)
    assert bad.returncode == 1 and "usage" in bad.stderr


def test_help_lists_every_subcommand():
    out = subprocess.run([sys.executable, "-m", "procsim", "--help"], capture_output=True, text=True, check=True).stdout
    for cmd in ("synth", "build-taxonomy", "inject-noise", "train", "eval", "ablate", "analyze-confidence"):
        assert cmd in out
