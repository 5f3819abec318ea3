"""Geometric predicates and constructions on box scatterers.

Everything here is a pure function of its inputs. Points are float arrays of
shape ``(3,)``; batched helpers accept stacked arrays.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np

from rekit.scene import Scatterer, Scene

if TYPE_CHECKING:
    from rekit.rek import KnowledgeCoefficients

__all__ = [
    "ScattererClass",
    "Face",
    "ReflectionGeometry",
    "GeometryError",
    "point_segment_distance",
    "classify_scatterer",
    "ellipsoid_matrix",
    "box_min_quadratic",
    "effective_scatterers",
    "scatterer_faces",
    "face_distance_sum",
    "mirror_point",
    "reflection_point",
    "fresnel_center_height",
    "segment_box_hits",
]

PLANE_TOL = 1e-9


class GeometryError(ValueError):
    pass


class ScattererClass(enum.Enum):
    BLOCKAGE = "Blockage"
    IMPENDING_BLOCKAGE = "ImpendingBlockage"
    OPEN = "Open"


def point_segment_distance(p, a, b) -> float:
    """Euclidean distance from ``p`` to the closed segment ``[a, b]``."""
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a))
    t = min(max(float((p - a) @ ab) / denom, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def point_segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Vectorised :func:`point_segment_distance` over rows of ``points``."""
    points = np.asarray(points, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=-1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[..., None] * ab), axis=-1)


def _classify_ratio(dis: float, L: float, c_diag: float) -> ScattererClass:
    if dis < 0.5 * L:
        return ScattererClass.BLOCKAGE
    if dis < c_diag * L:
        return ScattererClass.IMPENDING_BLOCKAGE
    return ScattererClass.OPEN


def classify_scatterer(
    s: Scatterer, tx, rx, coeffs: "KnowledgeCoefficients | float"
) -> ScattererClass:
    """Blockage / impending-blockage / open class of ``s`` for one link.

    With ``dis`` the distance from the box center to the Tx-Rx segment and
    ``L`` the box diagonal: blockage if ``dis < L/2``, impending blockage if
    ``dis < c_diag * L``, open otherwise. ``coeffs`` may be a bare ``c_diag``.
    """
    c_diag = float(getattr(coeffs, "c_diag", coeffs))
    dis = point_segment_distance(s.center, tx, rx)
    return _classify_ratio(dis, s.diagonal, c_diag)


def ellipsoid_matrix(tx: np.ndarray, rx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic form of the effective-scatterer ellipsoid.

    Returns ``(A, m)`` such that a point ``p`` is inside iff
    ``(p - m) @ A @ (p - m) < 1``. In the link-aligned frame centred on the
    focal midpoint this is ``(2x^2 + 4y^2 + 4z^2) / d^2 < 1``: foci at the
    antennas, semi-axes ``d/sqrt(2)`` along the link and ``d/2`` across it.
    """
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    d_vec = rx - tx
    d2 = float(d_vec @ d_vec)
    if d2 == 0.0:
        raise GeometryError("tx and rx coincide")
    u = d_vec / np.sqrt(d2)
    # 2x^2 + 4(|v|^2 - x^2) = 4|v|^2 - 2x^2
    A = (4.0 * np.eye(3) - 2.0 * np.outer(u, u)) / d2
    return A, 0.5 * (tx + rx)


# one row per stratum of the box: each coordinate free (interior), at lo or at hi
_STRATA = np.array(list(itertools.product((0, 1, 2), repeat=3)))
_FREE = _STRATA == 0
_AT_LO = _STRATA == 1
_AT_HI = _STRATA == 2


def box_min_quadratic(A: np.ndarray, m: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Exact minimum of ``(p - m) @ A @ (p - m)`` over each box ``[lo, hi]``.

    ``A`` must be positive definite. The minimiser lies in the relative
    interior of one of the 27 strata of the box (interior, faces, edges,
    corners). For every stratum the fixed coordinates sit on their bounds and
    the free ones solve ``A_ff v_f = -A_fx v_x``; feasible candidates are
    compared and the smallest value wins.
    """
    lo = np.atleast_2d(lo) - m
    hi = np.atleast_2d(hi) - m
    eye = np.eye(3)
    D = _FREE[:, :, None] * eye  # (27, 3, 3) diagonal free masks
    B = D @ A @ D + (eye - D)
    T = eye - D @ np.linalg.inv(B) @ D @ A
    C = np.where(_AT_LO[:, None, :], lo[None], 0.0) + np.where(_AT_HI[:, None, :], hi[None], 0.0)
    V = np.einsum("pij,pnj->pni", T, C)
    ok = ~_FREE[:, None, :] | ((V >= lo[None]) & (V <= hi[None]))
    feasible = ok.all(axis=2)
    q = np.einsum("pni,ij,pnj->pn", V, A, V)
    return np.where(feasible, q, np.inf).min(axis=0)


def effective_scatterers(scene: Scene, tx, rx) -> set[int]:
    """Ids of scatterers that intersect the Tx-Rx focal ellipsoid.

    A box counts when any part of it (a vertex, or a piece of a face) lies
    strictly inside the ellipsoid. Boxes that contain ``tx`` or ``rx`` are
    never effective.
    """
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    ids, lo, hi = scene.box_arrays()
    if ids.size == 0:
        return set()
    A, m = ellipsoid_matrix(tx, rx)
    inside = box_min_quadratic(A, m, lo, hi) < 1.0
    holds_tx = np.all((tx >= lo) & (tx <= hi), axis=1)
    holds_rx = np.all((rx >= lo) & (rx <= hi), axis=1)
    keep = inside & ~holds_tx & ~holds_rx
    return {int(i) for i in ids[keep]}


@dataclass(frozen=True, eq=False)
class Face:
    """One rectangular face of a box.

    ``vertices`` is ``(4, 3)`` ordered lexicographically over the two
    in-plane axes, so ``vertices[0]`` (the anchor) is the face's min corner.
    """

    vertices: np.ndarray
    normal: np.ndarray
    axis: int
    index: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "_lo", self.vertices.min(axis=0))
        object.__setattr__(self, "_hi", self.vertices.max(axis=0))

    @property
    def anchor(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def contains(self, p: np.ndarray, tol: float = PLANE_TOL) -> bool:
        """Whether ``p`` (assumed on the plane) lies in the closed rectangle."""
        for k in range(3):
            if k != self.axis and not (self._lo[k] - tol <= p[k] <= self._hi[k] + tol):
                return False
        return True


@lru_cache(maxsize=4096)
def _faces_cached(s: Scatterer) -> tuple[Face, ...]:
    lo, hi = s.p_min, s.p_max
    center = s.center
    faces = []
    for axis in range(3):
        i, j = [k for k in range(3) if k != axis]
        for side, plane in ((0, lo[axis]), (1, hi[axis])):
            verts = np.empty((4, 3))
            for n, (a, b) in enumerate(((lo[i], lo[j]), (lo[i], hi[j]), (hi[i], lo[j]), (hi[i], hi[j]))):
                verts[n, axis] = plane
                verts[n, i] = a
                verts[n, j] = b
            # v1 - v0 and v2 - v0 are the two perpendicular edges at the anchor
            nrm = np.cross(verts[1] - verts[0], verts[2] - verts[0])
            nrm = nrm / np.linalg.norm(nrm)
            if (verts.mean(axis=0) - center) @ nrm < 0:
                nrm = -nrm
            nrm = nrm + 0.0  # drop negative zeros
            verts.flags.writeable = False
            nrm.flags.writeable = False
            faces.append(Face(verts, nrm, axis, 2 * axis + side))
    return tuple(faces)


@lru_cache(maxsize=4096)
def _face_vertex_stack(s: Scatterer) -> np.ndarray:
    return np.stack([f.vertices for f in _faces_cached(s)])  # (6, 4, 3)


def scatterer_faces(s: Scatterer) -> list[Face]:
    """The six faces of ``s`` with outward unit normals.

    Order is ``-x, +x, -y, +y, -z, +z``.
    """
    return list(_faces_cached(s))


def face_distance_sum(face: Face, tx, rx) -> float:
    """Sum over the four vertices of ``|v - tx| + |rx - v|``."""
    v = face.vertices
    return float(np.linalg.norm(v - tx, axis=1).sum() + np.linalg.norm(rx - v, axis=1).sum())


def mirror_point(tx, face: Face) -> np.ndarray:
    """Image of ``tx`` across the plane of ``face``."""
    tx = np.asarray(tx, dtype=float)
    n = face.normal
    return tx - 2.0 * float((tx - face.anchor) @ n) * n


@dataclass(frozen=True)
class ReflectionGeometry:
    scatterer_id: int
    face: Face
    mirror: np.ndarray
    point: np.ndarray
    path_length: float
    valid: bool
    reason: str = ""

    @property
    def face_index(self) -> int:
        return self.face.index


def _front_clearance(s: Scatterer, p: np.ndarray) -> np.ndarray:
    """Signed distance of ``p`` in front of each of the six face planes."""
    out = np.empty(6)
    out[0::2] = s.p_min - p
    out[1::2] = p - s.p_max
    return out


def reflection_point(tx, rx, s: Scatterer) -> ReflectionGeometry:
    """Single-bounce specular reflection of ``tx -> rx`` off box ``s``.

    Only faces with both antennas strictly in front of their plane can
    reflect. Among those, the face whose vertices have the smallest summed
    distance to both antennas is used (lowest face index on ties). The
    reflection point is where the line from the image of ``tx`` to ``rx``
    crosses that face's plane. The result is flagged invalid when no face
    sees both antennas, the line is parallel to the plane, or the crossing
    falls outside the face rectangle.
    """
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    faces = _faces_cached(s)
    verts = _face_vertex_stack(s)
    dt = verts - tx
    dr = rx - verts
    dsum = np.sqrt((dt * dt).sum(axis=2)).sum(axis=1) + np.sqrt((dr * dr).sum(axis=2)).sum(axis=1)
    facing = (_front_clearance(s, tx) > 0.0) & (_front_clearance(s, rx) > 0.0)
    if not facing.any():
        face = faces[int(np.argmin(dsum))]
        img = mirror_point(tx, face)
        return ReflectionGeometry(s.id, face, img, np.full(3, np.nan), np.inf, False, "no face has both antennas in front")
    face = faces[int(np.argmin(np.where(facing, dsum, np.inf)))]
    n = face.normal
    q = face.anchor
    img = tx - 2.0 * float((tx - q) @ n) * n
    direction = rx - img
    denom = float(direction @ n)
    if abs(denom) < 1e-12:
        return ReflectionGeometry(s.id, face, img, np.full(3, np.nan), np.inf, False, "path parallel to face plane")
    rp = img + float((q - img) @ n) / denom * direction
    a = tx - rp
    b = rp - rx
    length = math.sqrt(float(a @ a)) + math.sqrt(float(b @ b))
    if not face.contains(rp):
        return ReflectionGeometry(s.id, face, img, rp, length, False, "reflection point outside face")
    return ReflectionGeometry(s.id, face, img, rp, length, True)


def fresnel_center_height(h_t: float, h_r: float, d_t: float, d_r: float) -> float:
    """Height of the Fresnel-zone center line above an obstacle position."""
    total = d_t + d_r
    if total == 0:
        raise GeometryError("obstacle coincides with both antennas (d_t + d_r = 0)")
    return h_r + (h_t - h_r) * d_r / total


def segment_box_hits(a: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Slab test of open segments ``(a, b)`` against open boxes.

    ``a`` and ``b`` have shape ``(..., 3)``, ``lo`` and ``hi`` shape
    ``(n, 3)``; the result has shape ``(..., n)``. Touching a face, edge or
    corner, or running along a face, is not a hit.
    """
    a = np.asarray(a, dtype=float)[..., None, :]
    d = np.asarray(b, dtype=float)[..., None, :] - a
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (lo - a) * inv
        t1 = (hi - a) * inv
    tnear = np.minimum(t0, t1)
    tfar = np.maximum(t0, t1)
    par = d == 0.0
    inside_slab = (a > lo) & (a < hi)
    tnear = np.where(par, np.where(inside_slab, -np.inf, np.inf), tnear)
    tfar = np.where(par, np.where(inside_slab, np.inf, -np.inf), tfar)
    t_in = np.maximum(tnear.max(axis=-1), 0.0)
    t_out = np.minimum(tfar.min(axis=-1), 1.0)
    return t_out - t_in > eps
