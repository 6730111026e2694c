"""CSV tables, SVG line plots and run manifests (all byte-deterministic)."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

__all__ = ["write_csv", "plot_band", "write_manifest", "blob_hash", "sidecar"]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows) -> Path:
    """RFC-4180 CSV (header row, CRLF line ends, UTF-8)."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(buf.getvalue().encode("utf-8"))
    return p


def blob_hash(data: bytes) -> str:
    """Content hash computed the way git hashes a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def sidecar(path, suffix: str) -> Path:
    p = Path(path)
    return p.with_name(p.stem + suffix)


def plot_band(path, t, series: dict, ylabel: str, title: str = "") -> Path:
    """SVG of estimator curves with +-2 SE bands; ``series`` maps label -> (mean, se)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "skelsim", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, (mean, se) in series.items():
            mean = np.asarray(mean, float)
            se = np.asarray(se, float)
            ax.plot(t, mean, marker="o", ms=3, label=label)
            ax.fill_between(t, mean - 2 * se, mean + 2 * se, alpha=0.25)
        ax.set_xlabel("t")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
    return p


def write_manifest(path, config: dict, seed: int, outputs) -> Path:
    """JSON manifest: config echo, seed and a content hash per output file."""
    files = {}
    for o in outputs:
        o = Path(o)
        files[o.name] = blob_hash(o.read_bytes())
    doc = {"config": config, "seed": int(seed), "outputs": files}
    p = Path(path)
    p.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_fmt) + "\n", encoding="utf-8")
    return p
