import json
import subprocess
import sys

import numpy as np
import pytest

from psiconn import __version__
from psiconn.cli import main
from psiconn.pipeline import PipelineConfig

SMALL = {"synth": {"n_epochs_per_class": 12, "n_channels": 8, "pairs_per_class": 3},
         "bands": ["theta", "alpha1"],
         "ga": {"population_size": 10, "max_generations": 4},
         "graph": {"n_refs": 3, "n_blocks": 3, "per_class": True}}
CHAIN = ["synth --out {wd}", "epoch --workdir {wd}", "psi --workdir {wd}",
         "features --workdir {wd}", "select --workdir {wd}", "evaluate --workdir {wd}",
         "graph --workdir {wd}", "stats --workdir {wd}", "report --workdir {wd}"]


@pytest.fixture(scope="module")
def chained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    wd = root / "chained"
    for step in CHAIN:
        argv = ["--seed", "3", "--config", str(cfg)] + step.format(wd=wd).split()
        assert main(argv) == 0, step
    return root, cfg, wd


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_seed_is_required(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", "x"])
    assert exc.value.code != 0


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "psiconn", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == f"psiconn {__version__}"


def test_psi_on_pair_prints_antisymmetric_matrix(tmp_path, capsys):
    assert main(["--seed", "1", "synth", "--kind", "pair", "--out", str(tmp_path)]) == 0
    truth = json.loads((tmp_path / "pair_truth.json").read_text())
    assert truth["delay_samples"] == 20 and truth["seed"] == 1
    capsys.readouterr()
    assert main(["--seed", "1", "psi", "--record", str(tmp_path / "pair.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "src,dst"
    M = np.array([[float(v) for v in row.split(",")] for row in lines[1:]])
    assert M.shape == (2, 2)
    assert M[0, 0] == M[1, 1] == 0.0 and M[0, 1] == -M[1, 0] and M[0, 1] > 0


def test_chained_artifacts(chained):
    _, _, wd = chained
    for lab in ("IN", "IH", "EX", "EH"):
        assert (wd / f"graph_{lab}.csv").read_text().startswith("src,dst,weight\n")
    assert len(list(wd.glob("graph_*.csv"))) == 4
    report = json.loads((wd / "report.json").read_text())
    assert [r["EEG band"] for r in report["table2"]] == ["Theta", "Alpha1"]
    manifest = json.loads((wd / "manifest.json").read_text())["sha256"]
    assert "report.json" in manifest and "table4.csv" in manifest


def test_run_equals_chain(chained):
    root, cfg, wd = chained
    out = root / "run"
    assert main(["--seed", "3", "--config", str(cfg), "--workers", "2",
                 "run", "--out", str(out)]) == 0
    names = sorted(p.name for p in wd.iterdir())
    assert names == sorted(p.name for p in out.iterdir())
    for name in names:
        assert (wd / name).read_bytes() == (out / name).read_bytes(), name


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"folds": 5, "graph": {"n_refs": 7}}))
    from psiconn.cli import build_parser, resolve_config
    args = build_parser().parse_args(["--seed", "2", "--config", str(cfg),
                                      "graph", "--workdir", "w", "--n-refs", "4"])
    got = resolve_config(args)
    assert isinstance(got, PipelineConfig)
    assert (got.seed, got.folds, got.graph["n_refs"]) == (2, 5, 4)


def test_missing_input_names_stage(tmp_path, capsys):
    assert main(["--seed", "1", "epoch", "--workdir", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "stage 'epoch'" in err and "record.bin" in err


def test_corrupt_artifact_names_path(chained, tmp_path, capsys):
    _, cfg, wd = chained
    bad = tmp_path / "bad"
    bad.mkdir()
    for name in ("epochs.bin", "epochs.json"):
        (bad / name).write_bytes((wd / name).read_bytes())
    (bad / "epochs.bin").write_bytes(b"junk" + (wd / "epochs.bin").read_bytes()[4:])
    assert main(["--seed", "3", "--config", str(cfg), "psi", "--workdir", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "stage 'psi'" in err and "epochs.bin" in err and "byte 0" in err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["--seed", "1", "--config", str(cfg), "report", "--workdir",
                 str(tmp_path)]) == 2
    assert "bogus" in capsys.readouterr().err
