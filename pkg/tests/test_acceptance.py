"""Acceptance suite: one PASS/FAIL line per primary criterion.

Run with ``pytest tests/test_acceptance.py -v``; the report lines are
written straight to the terminal even when output capture is on.
"""

import json
import math
import time

import numpy as np
import pytest

from rekit._io import read_csv
from rekit.cli import main
from rekit.evaluation import selection_accuracy
from rekit.geometry import classify_scatterer, effective_scatterers, reflection_point
from rekit.predictor import CNNModel, gradient_check
from rekit.rek import (
    blockage_contribution,
    diffraction_contribution,
    grid_search_c_diag,
    ground_reflection_contribution,
    reflection_contribution,
)
from rekit.scene import Scatterer

from conftest import make_scene, random_box
from oracles import (
    brute_force_effective,
    plane_grid_min_path,
    reflection_instances,
    reflection_law_residual,
)


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail

    return emit


def test_selection_accuracy_golden_rows(report):
    rows = [
        ([4, 5, 23], [5, 11, 23, 4, 10, 6, 2, 22]),
        ([4, 5, 11, 23], [5, 11, 23, 4, 10, 6]),
        ([4, 5, 6, 8, 11, 23], [11, 6, 5, 4, 23, 10, 27, 28, 29, 7]),
    ]
    t0 = time.perf_counter()
    got = [selection_accuracy(s, r) for s, r in rows]
    dt = time.perf_counter() - t0
    report("selection accuracy golden rows", got == [65, 90, 90] and dt < 1e-3, f"got {got}, expected [65, 90, 90], {dt * 1e3:.3f} ms (< 1 ms)")


def test_reflection_law_suite(report):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_cos = worst_twist = worst_plane = worst_fermat = 0.0
    n_valid = 0
    for tx, rx, box in reflection_instances(rng, 1000):
        g = reflection_point(tx, rx, box)
        if not g.valid:
            continue
        n_valid += 1
        cos_gap, twist = reflection_law_residual(tx, rx, g.point, g.face.normal)
        plane = abs((g.point - g.face.anchor) @ g.face.normal)
        lo, hi = g.face.vertices.min(0), g.face.vertices.max(0)
        grid = plane_grid_min_path(tx, rx, lo, hi, g.face.axis, g.face.anchor[g.face.axis], n=200)
        worst_cos = max(worst_cos, cos_gap)
        worst_twist = max(worst_twist, twist)
        worst_plane = max(worst_plane, plane)
        worst_fermat = max(worst_fermat, g.path_length - grid)
    dt = time.perf_counter() - t0
    ok = worst_cos < 1e-9 and worst_twist < 1e-9 and worst_plane < 1e-9 and worst_fermat <= 1e-6 and dt < 10 and n_valid > 0
    report(
        "reflection law",
        ok,
        f"{n_valid}/1000 valid RPs; max |cos_i - cos_r| {worst_cos:.1e}, coplanarity {worst_twist:.1e}, "
        f"off-plane {worst_plane:.1e} m (< 1e-9); RP path minus 200x200 grid min {worst_fermat:.1e} m (<= 1e-6); {dt:.2f} s (< 10 s)",
    )


def test_ellipsoid_oracle_equivalence(report):
    rng = np.random.default_rng(77)
    disagreements, checked, n_ambiguous = 0, 0, 0
    t_impl = 0.0
    for _ in range(100):
        boxes = {i: random_box(rng) for i in range(12)}
        tx, rx = rng.uniform(-25, 25, 3), rng.uniform(-25, 25, 3)
        scene = make_scene(list(boxes.values()), tx=tx, receivers=[rx])
        t0 = time.perf_counter()
        got = effective_scatterers(scene, tx, rx)
        t_impl += time.perf_counter() - t0
        inside, ambiguous = brute_force_effective(tx, rx, boxes, band=1e-9)
        n_ambiguous += len(ambiguous)
        for sid in set(boxes) - ambiguous:
            checked += 1
            disagreements += (sid in got) != (sid in inside)
    ok = disagreements == 0 and t_impl < 10
    report(
        "ellipsoid oracle equivalence",
        ok,
        f"{checked} box memberships over 100 scenes, {disagreements} disagreements, "
        f"{n_ambiguous} inside the 1e-9 band; {t_impl:.3f} s (< 10 s)",
    )


def test_contribution_spot_checks(report):
    tx, rx = np.array([0.0, 0, 3]), np.array([4.0, 0, 3])
    values = {
        "reflection 0.55470": (reflection_contribution(tx, rx, np.array([2.0, 0, 0]), 1.0), 4 / (2 * math.sqrt(13))),
        "ground 0.55470": (ground_reflection_contribution(tx, rx, 1.0), 4 / math.sqrt(52)),
        "diffraction 3.875": (
            diffraction_contribution(Scatterer(0, (29, -1, 0), (31, 1, 10)), np.array([0.0, 0, 20]), np.array([40.0, 0, 1.5]), 1.0),
            3.875,
        ),
        "blockage 0.4": (
            blockage_contribution(Scatterer(0, (-1.5, 0, 0), (1.5, 4, 10)), np.array([-50.0, 0, 5]), np.array([50.0, 0, 5]), 1.0),
            0.4,
        ),
    }
    errors = {k: abs(a - b) for k, (a, b) in values.items()}
    report(
        "contribution spot checks",
        all(e <= 1e-9 for e in errors.values()),
        ", ".join(f"{k}: {values[k][0]:.6f} (err {e:.1e})" for k, e in errors.items()) + " (tol 1e-9)",
    )


def test_gradient_check(report):
    model = CNNModel.init(6, seed=0)
    rng = np.random.default_rng(8)
    x, y = rng.normal(size=(3, 3, 6, 1)), rng.normal(size=(3, 6))
    t0 = time.perf_counter()
    res = gradient_check(model, x, y)
    dt = time.perf_counter() - t0
    n_params = sum(p.size for p in model.params.values())
    report(
        "gradient check",
        res["max"] < 1e-4 and dt < 30,
        f"{n_params} parameters, max relative error {res['max']:.2e} (< 1e-4), {dt:.2f} s (< 30 s)",
    )


def test_grid_search_round_trip(report, canonical):
    labels = []
    for i in range(0, canonical.n_receivers, 7):
        r = canonical.receivers[i]
        for sid in sorted(effective_scatterers(canonical, canonical.tx, r)):
            labels.append((i, sid, classify_scatterer(canonical.scatterer(sid), canonical.tx, r, 0.75)))
    t0 = time.perf_counter()
    best = grid_search_c_diag(canonical, labels)
    dt = time.perf_counter() - t0
    report("c_diag grid-search round trip", best == 0.75 and dt < 5, f"{len(labels)} labels, recovered {best} (expected 0.75), {dt:.2f} s (< 5 s)")


# end to end ---------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    outs = []
    for tag in ("first", "second"):
        out = tmp_path_factory.mktemp(tag)
        code = main(["run", "--all", "--seed", "0", "--out", str(out)])
        assert code == 0
        outs.append(out)
    return outs


def _mean_spectrum(out, scenario):
    tags = {int(r["rx_index"]): r["scenario"] for r in read_csv(out / "rek" / "classification.csv")}
    rows = []
    for f in sorted((out / "rek").glob("spectrum_*.csv")):
        for r in read_csv(f):
            if tags[int(r["rx_index"])] == scenario:
                rows.append([float(r["RC"]), float(r["DC"]), float(r["BC"])])
    return np.mean(rows, axis=0), len(rows)


@pytest.mark.slow
def test_end_to_end_canonical(report, pipeline_runs):
    out = pipeline_runs[0]
    metrics = json.loads((out / "eval" / "metrics.json").read_text())
    timing = json.loads((out / "eval" / "timing.json").read_text())
    blocked, n_b = _mean_spectrum(out, "CompleteBlockage")
    open_, n_o = _mean_spectrum(out, "CompleteOpenness")
    trend = bool(np.all(blocked > open_))
    ok = (
        metrics["test_nrmse"] <= 0.5
        and timing["train_seconds"] < 60
        and timing["predict_seconds_per_trajectory"] < 0.1
        and metrics["n_train_trajectories"] == 45
        and metrics["n_test_trajectories"] == 16
        and trend
    )
    report(
        "end-to-end canonical scene",
        ok,
        f"held-out NRMSE {metrics['test_nrmse']:.3f} (<= 0.5), train {timing['train_seconds']:.1f} s (< 60 s), "
        f"predict {timing['predict_seconds_per_trajectory'] * 1e3:.2f} ms/trajectory (< 100 ms), "
        f"split {metrics['n_train_trajectories']}/{metrics['n_test_trajectories']}; "
        f"mean RC/DC/BC blocked ({n_b}) {np.round(blocked, 3).tolist()} vs open ({n_o}) {np.round(open_, 3).tolist()}",
    )


@pytest.mark.slow
def test_determinism(report, pipeline_runs):
    a, b = (json.loads((o / "manifest.json").read_text()) for o in pipeline_runs)
    hashed = [e for e in a["files"] if "sha256" in e]
    report(
        "determinism",
        a == b,
        f"two runs with seed 0: {len(hashed)} hashed files, manifests {'identical' if a == b else 'differ'}",
    )
