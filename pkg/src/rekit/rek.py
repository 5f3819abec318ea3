"""Radio environment knowledge (REK) construction.

For one Tx-Rx link the pipeline selects the scatterers inside the focal
ellipsoid, sorts them into blockage / impending-blockage / open classes and
turns the geometry into three scalar channels:

* RC: summed reflection contributions (plus ground reflection on open links)
* DC: diffraction contribution of the dominant blocker
* BC: blockage contribution of the dominant blocker

Stacking the per-receiver triplets along a receiver trajectory gives the
REK spectrum fed to the predictor.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from rekit._io import substream, write_csv
from rekit.geometry import (
    GeometryError,
    ReflectionGeometry,
    ScattererClass,
    _classify_ratio,
    classify_scatterer,
    effective_scatterers,
    fresnel_center_height,
    point_segment_distance,
    reflection_point,
)
from rekit.scene import Scatterer, Scene, SceneError

__all__ = [
    "KnowledgeCoefficients",
    "Scenario",
    "REKVector",
    "REKSpectrum",
    "C_DIAG_CANDIDATES",
    "reflection_contribution",
    "ground_reflection_point",
    "ground_reflection_contribution",
    "diffraction_contribution",
    "blockage_contribution",
    "assign_reflection_coefficients",
    "construct_rek",
    "rek_spectrum",
    "column_trajectory",
    "grid_search_c_diag",
    "write_spectrum_csv",
]

C_DIAG_CANDIDATES: tuple[float, ...] = tuple(round(0.5 + 0.05 * k, 2) for k in range(1, 21))


@dataclass(frozen=True)
class KnowledgeCoefficients:
    """Weights applied to the geometric contributions."""

    c_diag: float = 0.75
    c_ref_init: float = 5.0
    c_ref_decrement: float = 0.2
    c_ref_g: float = 0.5
    c_df: float = 1.0
    c_block: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.5 < self.c_diag <= 1.5:
            raise ValueError(f"c_diag must lie in (0.5, 1.5], got {self.c_diag}")
        if not self.c_ref_init > 0:
            raise ValueError(f"c_ref_init must be positive, got {self.c_ref_init}")
        if self.c_ref_decrement < 0:
            raise ValueError(f"c_ref_decrement must be >= 0, got {self.c_ref_decrement}")

    def with_overrides(self, overrides: dict[str, float]) -> "KnowledgeCoefficients":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for key, value in overrides.items():
            if key not in kw:
                raise KeyError(f"unknown coefficient {key!r}")
            kw[key] = int(value) if key == "rng_seed" else float(value)
        return KnowledgeCoefficients(**kw)


class Scenario(enum.Enum):
    COMPLETE_OPENNESS = "CompleteOpenness"
    IMPENDING_BLOCKAGE = "ImpendingBlockage"
    COMPLETE_BLOCKAGE = "CompleteBlockage"


@dataclass
class REKVector:
    rx_index: int
    scenario: Scenario
    reflections: dict[int, float]
    ground: float
    diffraction: float
    blockage: float
    rc: float
    dc: float
    bc: float
    classes: dict[int, ScattererClass] = field(default_factory=dict)
    blocker_id: int | None = None
    diagnostics: list[str] = field(default_factory=list)

    @property
    def triplet(self) -> tuple[float, float, float]:
        return (self.rc, self.dc, self.bc)

    @property
    def effective_ids(self) -> list[int]:
        return sorted(self.classes)

    def ids_of(self, cls: ScattererClass) -> list[int]:
        return sorted(i for i, c in self.classes.items() if c is cls)


@dataclass
class REKSpectrum:
    """``(J, 3)`` matrix of (RC, DC, BC) rows along a receiver trajectory."""

    trajectory: list[int]
    matrix: np.ndarray
    vectors: list[REKVector] = field(default_factory=list, repr=False)


def _dist(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def reflection_contribution(tx, rx, rp, c: float) -> float:
    """``c * |tx - rx| / (|rx - rp| + |rp - tx|)``."""
    path = _dist(rx, rp) + _dist(rp, tx)
    if path == 0.0:
        raise GeometryError("zero reflected path length")
    return c * _dist(tx, rx) / path


def ground_reflection_point(tx, rx) -> np.ndarray:
    """Image-method specular point on the ground plane ``z = 0``."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    h_t, h_r = tx[2], rx[2]
    if h_t + h_r == 0:
        raise GeometryError("h_t + h_r = 0: no ground reflection point")
    f = h_t / (h_t + h_r)
    gp = tx + f * (rx - tx)
    gp[2] = 0.0
    return gp


def ground_reflection_contribution(tx, rx, c: float) -> float:
    """Two-ray ground reflection weight ``c * direct / reflected`` length."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    h_t, h_r = float(tx[2]), float(rx[2])
    if h_t + h_r == 0:
        raise GeometryError("h_t + h_r = 0: no ground reflection point")
    D = float(np.hypot(rx[0] - tx[0], rx[1] - tx[1]))
    d_t = h_t * D / (h_t + h_r)
    d_r = D - d_t
    return c * _dist(tx, rx) / math.sqrt((d_t + d_r) ** 2 + (h_t + h_r) ** 2)


def _horizontal(a, b) -> float:
    return float(np.hypot(a[0] - b[0], a[1] - b[1]))


def diffraction_contribution(blocker: Scatterer, tx, rx, c: float) -> float:
    """Fresnel clearance of the blocker roof, positive when obstructed.

    The obstacle position is the blocker center's horizontal position; the
    roof height is compared with the Fresnel-zone center line there.
    """
    center = blocker.center
    d_t = _horizontal(tx, center)
    d_r = _horizontal(rx, center)
    H = fresnel_center_height(float(tx[2]), float(rx[2]), d_t, d_r)
    return c * (blocker.top - H)


def blockage_contribution(blocker: Scatterer, tx, rx, c: float) -> float:
    """Center-to-link distance over the footprint diagonal, times ``c``."""
    foot = math.hypot(blocker.length, blocker.width)
    if foot == 0.0:
        raise GeometryError(f"scatterer {blocker.id}: degenerate footprint")
    return point_segment_distance(blocker.center, tx, rx) * c / foot


def assign_reflection_coefficients(
    geoms: Sequence[ReflectionGeometry], coeffs: KnowledgeCoefficients
) -> dict[int, float]:
    """Reflection weights ranked by total reflected path length.

    The shortest Tx->RP->Rx path gets ``c_ref_init``; each following one gets
    ``c_ref_decrement`` less, never below zero. Ties go to the lower id.
    """
    ranked = sorted(geoms, key=lambda g: (g.path_length, g.scatterer_id))
    out: dict[int, float] = {}
    for k, g in enumerate(ranked):
        out[g.scatterer_id] = max(coeffs.c_ref_init - k * coeffs.c_ref_decrement, 0.0)
    return out


def construct_rek(scene: Scene, rx_index: int, coeffs: KnowledgeCoefficients | None = None) -> REKVector:
    """Build the REK vector of receiver ``rx_index``.

    Scenario tag: complete blockage when any effective scatterer is a
    blocker, impending blockage when any is an impending blocker, complete
    openness otherwise. Reflections from every effective scatterer with a
    valid specular point enter RC. Open links add the ground reflection and
    have DC = BC = 0; impending links draw DC and BC uniformly from [0, 1)
    using a stream keyed on ``(rng_seed, rx_index)``; blocked links take DC
    and BC from the blocker with the largest blockage contribution.
    """
    coeffs = coeffs or KnowledgeCoefficients()
    if not 0 <= rx_index < scene.n_receivers:
        raise IndexError(f"rx_index {rx_index} out of range [0, {scene.n_receivers})")
    tx = scene.tx
    rx = scene.receivers[rx_index]
    if np.array_equal(tx, rx):
        raise GeometryError("receiver coincides with transmitter")

    diagnostics: list[str] = []
    eff = sorted(effective_scatterers(scene, tx, rx))
    by_id = {s.id: s for s in scene.scatterers}
    classes = {sid: classify_scatterer(by_id[sid], tx, rx, coeffs) for sid in eff}
    blockers = [sid for sid in eff if classes[sid] is ScattererClass.BLOCKAGE]
    impending = [sid for sid in eff if classes[sid] is ScattererClass.IMPENDING_BLOCKAGE]
    if blockers:
        scenario = Scenario.COMPLETE_BLOCKAGE
    elif impending:
        scenario = Scenario.IMPENDING_BLOCKAGE
    else:
        scenario = Scenario.COMPLETE_OPENNESS

    geoms = []
    for sid in eff:
        g = reflection_point(tx, rx, by_id[sid])
        if g.valid:
            geoms.append(g)
        else:
            diagnostics.append(f"scatterer {sid}: no reflection ({g.reason})")
    weights = assign_reflection_coefficients(geoms, coeffs)
    reflections = {}
    for g in geoms:
        reflections[g.scatterer_id] = reflection_contribution(tx, rx, g.point, weights[g.scatterer_id])
    rc = math.fsum(reflections[sid] for sid in sorted(reflections))

    ground = diffraction = blockage = 0.0
    dc = bc = 0.0
    blocker_id = None
    if scenario is Scenario.COMPLETE_OPENNESS:
        try:
            ground = ground_reflection_contribution(tx, rx, coeffs.c_ref_g)
        except GeometryError as exc:
            diagnostics.append(f"ground reflection skipped: {exc}")
        rc += ground
    elif scenario is Scenario.IMPENDING_BLOCKAGE:
        dc, bc = substream(coeffs.rng_seed, "rek", rx_index).random(2).tolist()
    else:
        scored = []
        for sid in blockers:
            try:
                scored.append((blockage_contribution(by_id[sid], tx, rx, coeffs.c_block), -sid))
            except GeometryError as exc:
                diagnostics.append(f"scatterer {sid}: blockage skipped ({exc})")
        if scored:
            blockage, neg_id = max(scored)
            blocker_id = -neg_id
            if len(blockers) > 1:
                others = [sid for sid in blockers if sid != blocker_id]
                diagnostics.append(f"additional blockers {others}")
            try:
                diffraction = diffraction_contribution(by_id[blocker_id], tx, rx, coeffs.c_df)
            except GeometryError as exc:
                diagnostics.append(f"scatterer {blocker_id}: diffraction skipped ({exc})")
            # negative clearance means the roof is below the Fresnel center line
            dc = max(diffraction, 0.0)
            bc = blockage

    return REKVector(
        rx_index=rx_index,
        scenario=scenario,
        reflections=reflections,
        ground=ground,
        diffraction=diffraction,
        blockage=blockage,
        rc=rc,
        dc=dc,
        bc=bc,
        classes=classes,
        blocker_id=blocker_id,
        diagnostics=diagnostics,
    )


def rek_spectrum(
    scene: Scene, trajectory: Sequence[int], coeffs: KnowledgeCoefficients | None = None
) -> REKSpectrum:
    vectors = [construct_rek(scene, int(i), coeffs) for i in trajectory]
    matrix = np.array([v.triplet for v in vectors], dtype=float).reshape(len(vectors), 3)
    return REKSpectrum([int(i) for i in trajectory], matrix, vectors)


def column_trajectory(scene: Scene, col: int) -> list[int]:
    """Receiver indices of grid column ``col``, ordered by row."""
    if scene.grid is None:
        raise SceneError("scene has no receiver grid")
    rows, cols = int(scene.grid["rows"]), int(scene.grid["cols"])
    if not 0 <= col < cols:
        raise IndexError(f"column {col} out of range [0, {cols})")
    return [r * cols + col for r in range(rows)]


def grid_search_c_diag(
    scene: Scene,
    labels: Iterable[tuple[int, int, ScattererClass]],
    candidates: Sequence[float] = C_DIAG_CANDIDATES,
    return_scores: bool = False,
):
    """Pick the ``c_diag`` whose classification best matches ``labels``.

    ``labels`` holds ``(rx_index, scatterer_id, class)`` triples. The
    candidate with the most agreements wins; ties go to the smallest value.
    """
    labels = list(labels)
    if not labels:
        raise ValueError("no labelled links for the c_diag search")
    by_id = {s.id: s for s in scene.scatterers}
    dis = np.empty(len(labels))
    diag = np.empty(len(labels))
    for k, (ri, sid, _) in enumerate(labels):
        s = by_id[sid]
        dis[k] = point_segment_distance(s.center, scene.tx, scene.receivers[ri])
        diag[k] = s.diagonal
    truth = [cls for _, _, cls in labels]
    scores = []
    for c in candidates:
        hits = sum(_classify_ratio(d, L, c) is t for d, L, t in zip(dis, diag, truth))
        scores.append(hits)
    best = max(range(len(candidates)), key=lambda k: (scores[k], -candidates[k]))
    if return_scores:
        return candidates[best], dict(zip(candidates, scores))
    return candidates[best]


def write_spectrum_csv(path: str | Path, spectrum: REKSpectrum) -> None:
    rows = ((i, *map(float, row)) for i, row in zip(spectrum.trajectory, spectrum.matrix))
    write_csv(path, ("rx_index", "RC", "DC", "BC"), rows)
