import json

import pytest

from skelsim.cli import build_parser, main
from skelsim.output import blob_hash


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path / "o.csv")])


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as ei:
        main(["bogus"])
    assert ei.value.code == 2


def test_help_lists_commands():
    text = build_parser().format_help()
    for c in ("catalog", "mild", "skeleton", "super", "spine", "verify"):
        assert c in text


def test_catalog(tmp_path, capsys):
    assert run(tmp_path, "catalog", "list") == 0
    assert run(tmp_path, "catalog", "show", "wright-fisher") == 0
    assert "wright-fisher" in (tmp_path / "o.csv").read_text()
    assert run(tmp_path, "catalog", "show", "no-such-card") == 2


def test_manifest_hashes(tmp_path):
    assert run(tmp_path, "skeleton", "run", "--T", "1", "--replicas", "20", "--seed", "3") == 0
    doc = json.loads((tmp_path / "o.manifest.json").read_text())
    assert doc["seed"] == 3
    for name, h in doc["outputs"].items():
        assert blob_hash((tmp_path / name).read_bytes()) == h
    assert (tmp_path / "o.svg").exists()


def test_seed_reproducible_across_jobs(tmp_path):
    outs = []
    for jobs in ("1", "2"):
        d = tmp_path / jobs
        d.mkdir()
        assert main(["super", "run", "--T", "1", "--replicas", "30", "--seed", "42", "--jobs", jobs,
                     "--out", str(d / "s.csv")]) == 0
        outs.append(((d / "s.csv").read_bytes(), (d / "s.svg").read_bytes()))
    assert outs[0] == outs[1]


def test_verify_strict(tmp_path):
    assert run(tmp_path, "verify", "laplace", "--replicas", "2000", "--seed", "1", "--strict") == 0
    text = (tmp_path / "o.csv").read_text()
    assert text.startswith("check,estimate,se,oracle,z,metric,threshold,verdict,note")


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\ncard = inward-ou-quadratic\n[motion]\ndt = -1\n")
    assert run(tmp_path, "skeleton", "run", "--config", str(cfg)) == 2
    assert "line 4" in capsys.readouterr().err


def test_mild_and_spine(tmp_path):
    assert run(tmp_path, "mild", "solve", "--T", "0.5", "--f", "constant 0.5", "--nx", "101") == 0
    assert run(tmp_path, "spine", "run", "--T", "1", "--replicas", "50") == 0
    assert run(tmp_path, "mech", "--card", "inward-ou-tempered", "--K", "8") == 0
