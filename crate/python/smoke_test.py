#!/usr/bin/env python3
"""Smoke test for the sounder_py extension module.

Build the extension first, then run this script from anywhere:

    cargo build -p sounder-py
    python3 python/smoke_test.py

It drives the full file workflow (simulate -> process -> aoa) through the
bindings and cross-checks the numeric primitives against known answers.
"""

import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parents[1]


def load_module(workdir: pathlib.Path):
    candidates = [
        ROOT / "target" / profile / "libsounder_py.so"
        for profile in ("debug", "release")
    ]
    built = next((c for c in candidates if c.exists()), None)
    if built is None:
        sys.exit("extension not built; run `cargo build -p sounder-py` first")
    shutil.copy(built, workdir / "sounder_py.so")
    sys.path.insert(0, str(workdir))
    import sounder_py

    return sounder_py


def check_workflow(sp, workdir: pathlib.Path):
    truth_deg = 25.0
    capture = workdir / "capture.bin"
    sim = sp.simulate(
        str(capture), seed=7, frames=200, azimuth_deg=truth_deg, ref_every=5
    )
    assert sim["records"] == 200 * 8, sim
    assert pathlib.Path(sim["board"]).exists()

    summary = sp.process(
        str(capture), out=str(workdir / "rows.jsonl"), window=50, ref_window=10
    )
    assert summary["ingest"]["records"] == 1600, summary
    assert summary["ingest"]["corruption_events"] == 0
    assert summary["windows"] >= 3
    assert summary["rows"] == summary["windows"] * 52 * 8

    result = sp.aoa([str(capture)], str(workdir / "spectrum.jsonl"), window=50, ref_window=10)
    peak = result["peaks"][0]
    assert abs(peak["azimuth_deg"] - truth_deg) <= 2.0, peak
    assert not peak["degenerate"]

    records, stats = sp.read_capture(str(capture), limit=10)
    assert stats["records"] == 1600 and len(records) == 10
    assert len(records[0]["coefficients"]) == 52
    print(f"workflow: peak {peak['azimuth_deg']:.2f} deg vs truth {truth_deg} deg")


def check_primitives(sp):
    # A noiseless rank-1 covariance built from a steering vector must peak
    # exactly at its own azimuth.
    azimuth = math.radians(-40.0)
    v = sp.steering_vector(azimuth)
    assert len(v) == 8
    assert all(abs(abs(x) - 1.0) < 1e-12 for x in v)
    cov = [
        [a * b.conjugate() + (0.01 if i == j else 0.0) for j, b in enumerate(v)]
        for i, a in enumerate(v)
    ]
    spectrum = sp.music_spectrum(cov)
    assert not spectrum["degenerate"]
    best = max(zip(spectrum["power_db"], spectrum["azimuth_deg"]))
    assert abs(best[1] - math.degrees(azimuth)) <= 1.0, best
    assert spectrum["peaks"] and abs(spectrum["peaks"][0]["azimuth_deg"] - (-40.0)) <= 1.0

    values, vectors = sp.eigh([[3, 0, 0], [0, 1, 0], [0, 0, 2]])
    assert [round(x, 12) for x in values] == [3.0, 2.0, 1.0]
    assert abs(vectors[0][0]) == 1.0  # principal eigenvector picks index 0
    print(f"primitives: music peak {best[1]:.1f} deg, eigenvalues {values}")


def main():
    with tempfile.TemporaryDirectory() as td:
        workdir = pathlib.Path(td)
        sp = load_module(workdir)
        check_workflow(sp, workdir)
        check_primitives(sp)
    print("smoke test passed")


if __name__ == "__main__":
    main()
