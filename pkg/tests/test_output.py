import hashlib

import numpy as np

from skelsim.output import blob_hash, plot_band, sidecar, write_csv, write_manifest


def test_csv_format(tmp_path):
    p = write_csv(tmp_path / "a.csv", ["x", "name, quoted"], [(1, 0.1), (np.int64(2), "a,b"), (True, np.float32(0.5))])
    raw = p.read_bytes()
    assert raw.count(b"\r\n") == 4 and b"\n" not in raw.replace(b"\r\n", b"")
    lines = raw.decode().split("\r\n")
    assert lines[0] == 'x,"name, quoted"'
    assert lines[1] == "1,0.1" and lines[2] == '2,"a,b"' and lines[3] == "true,0.5"


def test_blob_hash_matches_git():
    # `git hash-object` of the empty blob and of "hello\n"
    assert blob_hash(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"
    assert blob_hash(b"x") != hashlib.sha1(b"x").hexdigest()


def test_svg_deterministic(tmp_path):
    t = np.linspace(0, 1, 5)
    a = plot_band(tmp_path / "a.svg", t, {"m": (t, 0.1 * t)}, "y", "title")
    b = plot_band(tmp_path / "b.svg", t, {"m": (t, 0.1 * t)}, "y", "title")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes().lstrip().startswith(b"<?xml")


def test_manifest(tmp_path):
    p = write_csv(tmp_path / "r.csv", ["a"], [(1,)])
    m = write_manifest(sidecar(p, ".manifest.json"), {"k": np.float64(1.5)}, 7, [p])
    import json

    doc = json.loads(m.read_text())
    assert doc["seed"] == 7 and doc["outputs"]["r.csv"] == blob_hash(p.read_bytes())
    assert m.name == "r.manifest.json"
