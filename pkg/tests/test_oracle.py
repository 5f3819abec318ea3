import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from rekit._io import read_csv
from rekit.geometry import ScattererClass
from rekit.oracle import (
    C0,
    PATH_LOSS_FLOOR_DB,
    PathKind,
    PathLossSample,
    PropPath,
    aggregate_paths,
    free_space_path_loss,
    knife_edge_loss,
    label_scene,
    oracle_classes,
    path_loss,
    rank_scatterers_by_power,
    segment_blocked,
    trace_paths,
    write_label_csvs,
)

from conftest import make_scene, random_box


def test_fspl_examples():
    assert free_space_path_loss(1.0, 3.5e9) == pytest.approx(43.32, abs=0.01)
    assert free_space_path_loss(1.0, 3.5e9) == pytest.approx(20 * math.log10(4 * math.pi * 3.5e9 / C0), abs=1e-12)
    assert free_space_path_loss(2.0, 3.5e9) - free_space_path_loss(1.0, 3.5e9) == pytest.approx(20 * math.log10(2), abs=1e-12)
    assert free_space_path_loss(C0 / (4 * math.pi * 3.5e9), 3.5e9) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        free_space_path_loss(0.0, 3.5e9)


def test_knife_edge():
    # grazing incidence: 6.9 + 20 log10(sqrt(1.01) - 0.1), the familiar ~6 dB
    assert knife_edge_loss(0.0) == pytest.approx(6.9 + 20 * math.log10(math.sqrt(1.01) - 0.1), abs=1e-12)
    assert knife_edge_loss(0.0) == pytest.approx(6.0329, abs=1e-4)
    assert knife_edge_loss(-0.78) == 0.0
    assert knife_edge_loss(-1.5) == 0.0
    v = np.linspace(-0.77, 5, 50)
    assert np.all(np.diff([knife_edge_loss(x) for x in v]) > 0)


def _p(power_db, sid=None, kind=PathKind.SCATTERER_REFLECTION):
    return PropPath(kind, 10.0, 0.0, power_db, sid)


def test_aggregation_examples():
    assert aggregate_paths(0, [_p(-80.0, kind=PathKind.DIRECT)]).path_loss_db == pytest.approx(80.0, abs=1e-12)
    two = aggregate_paths(0, [_p(-80.0, kind=PathKind.DIRECT), _p(-80.0, 1)])
    assert two.path_loss_db == pytest.approx(80 - 10 * math.log10(2), abs=1e-12)
    assert two.path_loss_db == pytest.approx(76.99, abs=0.005)
    assert aggregate_paths(0, []).path_loss_db == PATH_LOSS_FLOOR_DB == 250.0


def test_segment_blocked_examples():
    scene = make_scene([((0, 0, 0), (2, 2, 10))])
    assert segment_blocked(scene, (-5, 1, 5), (5, 1, 5))
    assert not segment_blocked(scene, (-5, 1, 11), (5, 1, 11))
    assert not segment_blocked(scene, (-5, 1, 10), (5, 1, 10))  # grazing the roof
    assert not segment_blocked(scene, (-5, 1, 5), (5, 1, 5), exclude=[0])


def test_empty_scene_paths():
    scene = make_scene([], tx=(0, 0, 20), receivers=[(40, 0, 1.5)])
    kinds = sorted(p.kind.value for p in trace_paths(scene, 0))
    assert kinds == ["Direct", "GroundReflection"]


def test_parallel_wall_adds_one_weaker_path():
    scene = make_scene([((0, 10, 0), (40, 11, 30))], tx=(0, 0, 10), receivers=[(40, 0, 1.5)])
    paths = trace_paths(scene, 0)
    kinds = {p.kind: p for p in paths}
    assert len(paths) == 3 and PathKind.SCATTERER_REFLECTION in kinds
    assert kinds[PathKind.SCATTERER_REFLECTION].power_db < kinds[PathKind.DIRECT].power_db
    assert kinds[PathKind.SCATTERER_REFLECTION].scatterer_id == 0


def test_blocked_link_gets_diffraction():
    scene = make_scene([((29, -5, 0), (31, 5, 10))], tx=(0, 0, 20), receivers=[(40, 0, 1.5)])
    paths = trace_paths(scene, 0)
    kinds = [p.kind for p in paths]
    assert PathKind.DIRECT not in kinds
    diff = [p for p in paths if p.kind is PathKind.DIFFRACTION]
    assert len(diff) == 1 and diff[0].scatterer_id == 0
    # roof 3.875 m above the Fresnel center line: deep shadow, positive excess loss
    assert diff[0].excess_loss_db > 6.9


def test_rank_examples():
    sample = PathLossSample(0, 80.0, [_p(-90.0, 4), _p(-85.0, 7)])
    assert rank_scatterers_by_power(sample) == [7, 4]
    dup = PathLossSample(0, 80.0, [_p(-95.0, 4), _p(-85.0, 7), _p(-80.0, 4), _p(-70.0, None, PathKind.DIRECT)])
    assert rank_scatterers_by_power(dup) == [4, 7]
    many = PathLossSample(0, 80.0, [_p(-80.0 - k, k) for k in range(10)])
    assert rank_scatterers_by_power(many, top_n=5) == [0, 1, 2, 3, 4]


def test_empty_scene_monotone_direct_loss():
    rx = [(d, 0.0, 1.5) for d in np.linspace(5, 500, 60)]
    scene = make_scene([], tx=(0, 0, 1.5), receivers=rx)
    direct = [next(p for p in trace_paths(scene, i) if p.kind is PathKind.DIRECT).loss_db for i in range(len(rx))]
    assert np.all(np.diff(direct) > 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_oracle_invariants(seed):
    rng = np.random.default_rng(seed)
    boxes = [random_box(rng, -30, 30, (1.0, 10.0)) for _ in range(6)]
    tx = np.append(rng.uniform(-30, 30, 2), rng.uniform(1, 30))
    rx = np.append(rng.uniform(-30, 30, 2), rng.uniform(1, 30))
    assume(np.linalg.norm(tx - rx) > 1.0)
    scene = make_scene(boxes, tx=tx, receivers=[rx])
    sample = path_loss(scene, 0)
    assert math.isfinite(sample.path_loss_db) and sample.path_loss_db > 0
    for p in sample.paths:
        assert p.length >= np.linalg.norm(tx - rx) - 1e-9
        assert sample.path_loss_db <= p.loss_db + 1e-9
    assert path_loss(scene, 0) == sample
    # a box that misses the direct ray never removes it
    has_direct = any(p.kind is PathKind.DIRECT for p in sample.paths)
    extra = make_scene(boxes + [(np.array([500.0, 500, 0]), np.array([501.0, 501, 5]))], tx=tx, receivers=[rx])
    assert any(p.kind is PathKind.DIRECT for p in path_loss(extra, 0).paths) == has_direct


def test_oracle_classes_blocker():
    scene = make_scene([((29, -1, 0), (31, 1, 10)), ((19, 1.2, 0), (21, 3.2, 2))], tx=(0, 0, 1.5), receivers=[(40, 0, 1.5)])
    got = dict(((sid, cls) for _, sid, cls in oracle_classes(scene, 0)))
    assert got[0] is ScattererClass.BLOCKAGE
    assert got[1] is ScattererClass.OPEN  # 1.2 m clear of the ray; first-zone radius at mid-link is ~0.93 m


def test_label_csvs(tmp_path, canonical):
    samples = label_scene(canonical, range(0, 7320, 500))
    write_label_csvs(tmp_path / "pl.csv", tmp_path / "paths.csv", samples)
    pl = read_csv(tmp_path / "pl.csv")
    assert list(pl[0]) == ["rx_index", "path_loss_db", "n_paths"]
    assert [float(r["path_loss_db"]) for r in pl] == [s.path_loss_db for s in samples]
    paths = read_csv(tmp_path / "paths.csv")
    assert list(paths[0]) == ["rx_index", "kind", "scatterer_id", "length_m", "power_db"]
    ids = {s.id for s in canonical.scatterers}
    assert {int(r["scatterer_id"]) for r in paths if r["scatterer_id"]} <= ids
