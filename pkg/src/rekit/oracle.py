"""Desk-scale ray-tracing-lite ground truth.

Paths per receiver: the direct ray, the ground bounce, one specular bounce
per box face and, when the direct ray is blocked, a single knife-edge over
the roof of the dominant blocker. Path powers add non-coherently.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from rekit._io import write_csv
from rekit.geometry import (
    ScattererClass,
    box_min_quadratic,
    effective_scatterers,
    fresnel_center_height,
    reflection_point,
    segment_box_hits,
)
from rekit.rek import ground_reflection_point
from rekit.scene import Scene

__all__ = [
    "C0",
    "PathKind",
    "PropPath",
    "PathLossSample",
    "free_space_path_loss",
    "knife_edge_loss",
    "segment_blocked",
    "trace_paths",
    "aggregate_paths",
    "path_loss",
    "label_scene",
    "rank_scatterers_by_power",
    "oracle_classes",
    "write_label_csvs",
]

C0 = 299_792_458.0
GROUND_REFLECTION_LOSS_DB = 3.0
SCATTERER_REFLECTION_LOSS_DB = 6.0
PATH_LOSS_FLOOR_DB = 250.0


class PathKind(enum.Enum):
    DIRECT = "Direct"
    SCATTERER_REFLECTION = "ScattererReflection"
    GROUND_REFLECTION = "GroundReflection"
    DIFFRACTION = "Diffraction"


@dataclass(frozen=True)
class PropPath:
    kind: PathKind
    length: float
    excess_loss_db: float
    power_db: float
    scatterer_id: int | None = None

    @property
    def loss_db(self) -> float:
        return -self.power_db


@dataclass
class PathLossSample:
    rx_index: int
    path_loss_db: float
    paths: list[PropPath] = field(default_factory=list)


def free_space_path_loss(d: float, f: float) -> float:
    """Friis free-space loss ``20 log10(4 pi d f / c0)`` in dB."""
    if d <= 0:
        raise ValueError(f"distance must be positive, got {d}")
    if f <= 0:
        raise ValueError(f"frequency must be positive, got {f}")
    return 20.0 * math.log10(4.0 * math.pi * d * f / C0)


def knife_edge_loss(v: float) -> float:
    """Single knife-edge excess loss J(v) in dB; zero for ``v <= -0.78``."""
    if v <= -0.78:
        return 0.0
    return 6.9 + 20.0 * math.log10(math.sqrt((v - 0.1) ** 2 + 1.0) + v - 0.1)


def segment_blocked(scene: Scene, a, b, exclude: Sequence[int] = ()) -> bool:
    """Whether the open segment ``(a, b)`` passes through any scatterer."""
    ids, lo, hi = scene.box_arrays()
    if ids.size == 0:
        return False
    hits = segment_box_hits(np.asarray(a, float), np.asarray(b, float), lo, hi)
    if exclude:
        hits &= ~np.isin(ids, list(exclude))
    return bool(hits.any())


def _path(kind: PathKind, length: float, excess: float, f: float, sid: int | None = None) -> PropPath:
    loss = free_space_path_loss(length, f) + excess
    return PropPath(kind, length, excess, -loss, sid)


def trace_paths(scene: Scene, rx_index: int) -> list[PropPath]:
    if not 0 <= rx_index < scene.n_receivers:
        raise IndexError(f"rx_index {rx_index} out of range [0, {scene.n_receivers})")
    tx = scene.tx
    rx = scene.receivers[rx_index]
    f = scene.frequency
    ids, lo, hi = scene.box_arrays()
    direct_len = float(np.linalg.norm(rx - tx))

    starts, ends, owners, payload = [], [], [], []
    # direct ray
    starts.append(tx)
    ends.append(rx)
    owners.append(None)
    # ground bounce: both legs must be clear
    if tx[2] > 0 and rx[2] > 0:
        gp = ground_reflection_point(tx, rx)
        starts += [tx, gp]
        ends += [gp, rx]
        owners += [None, None]
        payload.append(("ground", gp))
    for s in scene.scatterers:
        g = reflection_point(tx, rx, s)
        if g.valid:
            starts += [tx, g.point]
            ends += [g.point, rx]
            owners += [s.id, s.id]
            payload.append(("scatterer", g))

    if ids.size:
        hits = segment_box_hits(np.array(starts), np.array(ends), lo, hi)
        for k, owner in enumerate(owners):
            if owner is not None:
                hits[k, ids == owner] = False
        seg_blocked = hits.any(axis=1)
    else:
        hits = np.zeros((len(starts), 0), dtype=bool)
        seg_blocked = np.zeros(len(starts), dtype=bool)

    paths: list[PropPath] = []
    direct_blocked = bool(seg_blocked[0])
    if not direct_blocked:
        paths.append(_path(PathKind.DIRECT, direct_len, 0.0, f))
    k = 1
    for kind, item in payload:
        clear = not (seg_blocked[k] or seg_blocked[k + 1])
        k += 2
        if not clear:
            continue
        if kind == "ground":
            length = float(np.linalg.norm(item - tx) + np.linalg.norm(rx - item))
            paths.append(_path(PathKind.GROUND_REFLECTION, length, GROUND_REFLECTION_LOSS_DB, f))
        else:
            paths.append(
                _path(PathKind.SCATTERER_REFLECTION, item.path_length, SCATTERER_REFLECTION_LOSS_DB, f, item.scatterer_id)
            )

    if direct_blocked:
        diff = _diffraction_path(scene, tx, rx, ids[hits[0]])
        if diff is not None:
            paths.append(diff)
    return paths


def _diffraction_path(scene: Scene, tx, rx, blocker_ids) -> PropPath | None:
    lam = scene.wavelength
    best = None
    for sid in sorted(int(i) for i in blocker_ids):
        s = scene.scatterer(sid)
        c = s.center
        d_t = float(np.hypot(c[0] - tx[0], c[1] - tx[1]))
        d_r = float(np.hypot(c[0] - rx[0], c[1] - rx[1]))
        if d_t == 0.0 or d_r == 0.0:
            continue
        H = fresnel_center_height(float(tx[2]), float(rx[2]), d_t, d_r)
        v = (s.top - H) * math.sqrt(2.0 * (d_t + d_r) / (lam * d_t * d_r))
        if best is None or v > best[0]:
            best = (v, sid, c, s.top)
    if best is None:
        return None
    v, sid, c, top = best
    edge = np.array([c[0], c[1], top])
    length = float(np.linalg.norm(edge - tx) + np.linalg.norm(rx - edge))
    length = max(length, float(np.linalg.norm(rx - tx)))
    return _path(PathKind.DIFFRACTION, length, knife_edge_loss(v), scene.frequency, sid)


def aggregate_paths(rx_index: int, paths: list[PropPath]) -> PathLossSample:
    """Non-coherent power sum of ``paths``; the loss floor when nothing arrives."""
    if not paths:
        return PathLossSample(rx_index, PATH_LOSS_FLOOR_DB, [])
    total = math.fsum(10.0 ** (p.power_db / 10.0) for p in paths)
    if total <= 0.0:
        return PathLossSample(rx_index, PATH_LOSS_FLOOR_DB, paths)
    return PathLossSample(rx_index, -10.0 * math.log10(total), paths)


def path_loss(scene: Scene, rx_index: int) -> PathLossSample:
    """Non-coherent power sum over the traced paths, as a loss in dB."""
    return aggregate_paths(rx_index, trace_paths(scene, rx_index))


def label_scene(scene: Scene, indices: Sequence[int] | None = None) -> list[PathLossSample]:
    if indices is None:
        indices = range(scene.n_receivers)
    return [path_loss(scene, int(i)) for i in indices]


def rank_scatterers_by_power(sample: PathLossSample, top_n: int | None = None) -> list[int]:
    """Scatterer ids of reflection/diffraction paths by descending power.

    An id carried by several paths keeps its best rank.
    """
    tagged = [p for p in sample.paths if p.scatterer_id is not None]
    tagged.sort(key=lambda p: (-p.power_db, p.scatterer_id))
    ranked: list[int] = []
    for p in tagged:
        if p.scatterer_id not in ranked:
            ranked.append(p.scatterer_id)
    return ranked if top_n is None else ranked[:top_n]


def _spheroid_matrix(tx: np.ndarray, rx: np.ndarray, focal_sum: float) -> tuple[np.ndarray, np.ndarray]:
    d_vec = rx - tx
    d = float(np.linalg.norm(d_vec))
    u = d_vec / d
    a = 0.5 * focal_sum
    b2 = a * a - 0.25 * d * d
    A = np.eye(3) / b2 + (1.0 / (a * a) - 1.0 / b2) * np.outer(u, u)
    return A, 0.5 * (tx + rx)


def oracle_classes(scene: Scene, rx_index: int, fresnel_zones: int = 1) -> list[tuple[int, int, ScattererClass]]:
    """Reference classes of the effective scatterers of one link.

    Blockage when the box cuts the direct ray, impending blockage when it
    reaches into the ``fresnel_zones``-th Fresnel ellipsoid, open otherwise.
    """
    tx = scene.tx
    rx = scene.receivers[rx_index]
    eff = sorted(effective_scatterers(scene, tx, rx))
    if not eff:
        return []
    d = float(np.linalg.norm(rx - tx))
    A, m = _spheroid_matrix(tx, rx, d + 0.5 * fresnel_zones * scene.wavelength)
    out = []
    for sid in eff:
        s = scene.scatterer(sid)
        if segment_box_hits(tx, rx, s.p_min[None], s.p_max[None])[0]:
            cls = ScattererClass.BLOCKAGE
        elif box_min_quadratic(A, m, s.p_min, s.p_max)[0] < 1.0:
            cls = ScattererClass.IMPENDING_BLOCKAGE
        else:
            cls = ScattererClass.OPEN
        out.append((rx_index, sid, cls))
    return out


def write_label_csvs(path_loss_csv: str | Path, paths_csv: str | Path, samples: Sequence[PathLossSample]) -> None:
    write_csv(
        path_loss_csv,
        ("rx_index", "path_loss_db", "n_paths"),
        ((s.rx_index, float(s.path_loss_db), len(s.paths)) for s in samples),
    )
    rows = []
    for s in samples:
        for p in s.paths:
            rows.append((s.rx_index, p.kind.value, "" if p.scatterer_id is None else p.scatterer_id, float(p.length), float(p.power_db)))
    write_csv(paths_csv, ("rx_index", "kind", "scatterer_id", "length_m", "power_db"), rows)
