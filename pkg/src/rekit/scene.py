"""Scene model: box scatterers, transmitter, receivers and scene files.

Scatterers are axis-aligned boxes given by their min/max corners. Random
scenes follow a line Boolean model: box centers come from a homogeneous
Poisson process over a rectangle and box diagonals are uniform on
``[L_min, L_max]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from rekit._io import atomic_write_text

__all__ = [
    "SceneError",
    "Scatterer",
    "BooleanModelParams",
    "Scene",
    "point3",
    "grid_receivers",
    "generate_scene",
    "load_scene",
    "save_scene",
    "scene_from_dict",
    "scene_to_dict",
    "canonical_canyon_scene",
    "CANONICAL_SCENE_PATH",
]

DEFAULT_FREQUENCY_HZ = 3.5e9
CANONICAL_SCENE_PATH = Path(__file__).parent / "data" / "canonical_canyon.json"


class SceneError(ValueError):
    """Raised for malformed or invalid scene content."""


def point3(p: Iterable[float]) -> np.ndarray:
    """Coerce ``p`` into a finite float array of shape ``(3,)``."""
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise SceneError(f"expected 3 coordinates, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise SceneError(f"non-finite coordinates {arr.tolist()}")
    return arr


@dataclass(frozen=True, eq=False)
class Scatterer:
    """Axis-aligned box scatterer."""

    id: int
    p_min: np.ndarray
    p_max: np.ndarray

    def __post_init__(self) -> None:
        p_min = point3(self.p_min)
        p_max = point3(self.p_max)
        if not np.all(p_min < p_max):
            raise SceneError(
                f"scatterer {self.id}: p_min {p_min.tolist()} must be < "
                f"p_max {p_max.tolist()} componentwise"
            )
        p_min.flags.writeable = False
        p_max.flags.writeable = False
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "p_min", p_min)
        object.__setattr__(self, "p_max", p_max)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.p_min + self.p_max)

    @property
    def extent(self) -> np.ndarray:
        return self.p_max - self.p_min

    @property
    def length(self) -> float:
        """Footprint length ``l`` (x-extent)."""
        return float(self.p_max[0] - self.p_min[0])

    @property
    def width(self) -> float:
        """Footprint width ``w`` (y-extent)."""
        return float(self.p_max[1] - self.p_min[1])

    @property
    def height(self) -> float:
        """Vertical extent ``h``."""
        return float(self.p_max[2] - self.p_min[2])

    @property
    def top(self) -> float:
        """Absolute z of the roof."""
        return float(self.p_max[2])

    @property
    def diagonal(self) -> float:
        """Diagonal length ``L = |p_max - p_min|``."""
        return float(np.linalg.norm(self.extent))

    def contains(self, p: np.ndarray) -> bool:
        """Closed-box membership."""
        return bool(np.all(p >= self.p_min) and np.all(p <= self.p_max))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scatterer):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.p_min, other.p_min)
            and np.array_equal(self.p_max, other.p_max)
        )

    def __hash__(self) -> int:
        return hash((self.id, self.p_min.tobytes(), self.p_max.tobytes()))


@dataclass(frozen=True)
class BooleanModelParams:
    """Parameters of the line Boolean scene generator.

    ``region`` is ``(x_min, y_min, x_max, y_max)`` in meters and ``density``
    is the expected number of scatterers per square meter.
    """

    region: tuple[float, float, float, float]
    density: float
    L_min: float
    L_max: float
    height_range: tuple[float, float] = (5.0, 30.0)
    seed: int = 0

    def validate(self) -> None:
        x0, y0, x1, y1 = self.region
        if not (x1 > x0 and y1 > y0):
            raise SceneError(f"empty region {self.region}")
        if not self.density > 0:
            raise SceneError(f"density must be positive, got {self.density}")
        if not (0 < self.L_min <= self.L_max):
            raise SceneError(
                f"degenerate length range [{self.L_min}, {self.L_max}]"
            )
        h0, h1 = self.height_range
        if not (0 < h0 <= h1):
            raise SceneError(f"bad height range {self.height_range}")

    @property
    def area(self) -> float:
        x0, y0, x1, y1 = self.region
        return (x1 - x0) * (y1 - y0)


@dataclass(frozen=True, eq=False)
class Scene:
    """Transmitter, receivers, scatterers and carrier frequency."""

    tx: np.ndarray
    receivers: np.ndarray
    scatterers: tuple[Scatterer, ...] = ()
    frequency: float = DEFAULT_FREQUENCY_HZ
    grid: dict | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        tx = point3(self.tx)
        rx = np.asarray(self.receivers, dtype=float)
        if rx.size == 0:
            rx = rx.reshape(0, 3)
        if rx.ndim != 2 or rx.shape[1] != 3:
            raise SceneError(f"receivers must have shape (n, 3), got {rx.shape}")
        if not np.all(np.isfinite(rx)):
            raise SceneError("non-finite receiver coordinates")
        if not self.frequency > 0:
            raise SceneError(f"frequency must be positive, got {self.frequency}")
        scatterers = tuple(self.scatterers)
        ids = [s.id for s in scatterers]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise SceneError(f"duplicate scatterer ids {dup}")
        tx.flags.writeable = False
        rx = rx.copy()
        rx.flags.writeable = False
        object.__setattr__(self, "tx", tx)
        object.__setattr__(self, "receivers", rx)
        object.__setattr__(self, "scatterers", scatterers)
        object.__setattr__(self, "frequency", float(self.frequency))

    @property
    def n_receivers(self) -> int:
        return int(self.receivers.shape[0])

    @property
    def wavelength(self) -> float:
        return 299_792_458.0 / self.frequency

    def scatterer(self, sid: int) -> Scatterer:
        return self._by_id[sid]

    def tx_inside(self) -> list[int]:
        """Ids of scatterers that contain the transmitter (flagged, not fatal)."""
        return [s.id for s in self.scatterers if s.contains(self.tx)]

    def box_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stacked ``(ids, p_min, p_max)`` arrays in scatterer-list order."""
        return self._boxes

    @cached_property
    def _boxes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.scatterers:
            empty = np.zeros((0, 3))
            return np.zeros(0, dtype=int), empty, empty.copy()
        ids = np.array([s.id for s in self.scatterers], dtype=int)
        lo = np.stack([s.p_min for s in self.scatterers])
        hi = np.stack([s.p_max for s in self.scatterers])
        for arr in (ids, lo, hi):
            arr.flags.writeable = False
        return ids, lo, hi

    @cached_property
    def _by_id(self) -> dict[int, Scatterer]:
        return {s.id: s for s in self.scatterers}

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounds of every object in the scene."""
        pts = [self.tx[None, :], self.receivers]
        pts += [np.stack([s.p_min, s.p_max]) for s in self.scatterers]
        allp = np.concatenate([p for p in pts if p.size])
        return allp.min(axis=0), allp.max(axis=0)

    def replace(self, **changes) -> "Scene":
        kw = dict(
            tx=self.tx,
            receivers=self.receivers,
            scatterers=self.scatterers,
            frequency=self.frequency,
            grid=self.grid,
        )
        kw.update(changes)
        return Scene(**kw)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            np.array_equal(self.tx, other.tx)
            and np.array_equal(self.receivers, other.receivers)
            and self.scatterers == other.scatterers
            and self.frequency == other.frequency
        )

    __hash__ = None  # type: ignore[assignment]


def grid_receivers(
    origin: Sequence[float],
    rows: int,
    cols: int,
    spacing: float = 0.5,
    height: float = 1.5,
) -> np.ndarray:
    """Row-major receiver grid.

    Columns advance along +x and rows along +y, so point ``r * cols + c``
    sits at ``origin + (c * spacing, r * spacing)`` with z set to ``height``.
    """
    if rows < 1 or cols < 1:
        raise SceneError(f"rows and cols must be >= 1, got {rows}x{cols}")
    if not spacing > 0:
        raise SceneError(f"spacing must be positive, got {spacing}")
    o = point3(origin)
    r, c = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    pts = np.empty((rows * cols, 3))
    pts[:, 0] = o[0] + c.ravel() * spacing
    pts[:, 1] = o[1] + r.ravel() * spacing
    pts[:, 2] = height
    return pts


def _box_from_center(sid: int, cx: float, cy: float, L: float, h: float) -> Scatterer:
    # square footprint: l = w and l^2 + w^2 + h^2 = L^2
    half = 0.5 * math.sqrt(max(L * L - h * h, 0.0) / 2.0)
    return Scatterer(sid, (cx - half, cy - half, 0.0), (cx + half, cy + half, h))


def generate_scene(
    params: BooleanModelParams,
    tx: Sequence[float] = (0.0, 0.0, 20.0),
    receivers: np.ndarray | None = None,
    frequency: float = DEFAULT_FREQUENCY_HZ,
) -> Scene:
    """Draw a random scene from the line Boolean model.

    Scatterer count is Poisson with mean ``density * area``; centers are
    uniform over the region. Each diagonal is uniform on ``[L_min, L_max]``
    and the height is uniform on ``height_range``, capped at ``L / sqrt(3)``
    so the footprint never degenerates.
    """
    params.validate()
    rng = np.random.default_rng(params.seed)
    x0, y0, x1, y1 = params.region
    n = int(rng.poisson(params.density * params.area))
    cx = rng.uniform(x0, x1, n)
    cy = rng.uniform(y0, y1, n)
    L = rng.uniform(params.L_min, params.L_max, n)
    h = rng.uniform(params.height_range[0], params.height_range[1], n)
    h = np.minimum(h, L / math.sqrt(3.0))
    boxes = tuple(
        _box_from_center(i, cx[i], cy[i], L[i], h[i]) for i in range(n)
    )
    if receivers is None:
        receivers = np.zeros((0, 3))
    return Scene(tx=tx, receivers=receivers, scatterers=boxes, frequency=frequency)


def _xyz(d: dict, what: str) -> list[float]:
    try:
        return [float(d["x"]), float(d["y"]), float(d["z"])]
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneError(f"{what}: expected {{x, y, z}}, got {d!r}") from exc


def _as_xyz(p: np.ndarray) -> dict:
    return {"x": float(p[0]), "y": float(p[1]), "z": float(p[2])}


def scene_from_dict(doc: dict) -> Scene:
    """Build a :class:`Scene` from the decoded JSON document."""
    if not isinstance(doc, dict):
        raise SceneError("scene document must be a JSON object")
    try:
        freq = float(doc["frequency_hz"])
        tx = _xyz(doc["tx"], "tx")
    except KeyError as exc:
        raise SceneError(f"missing field {exc}") from exc
    grid = None
    if "receivers" in doc and "grid" in doc:
        raise SceneError("give either 'receivers' or 'grid', not both")
    if "grid" in doc:
        grid = dict(doc["grid"])
        try:
            receivers = grid_receivers(
                _xyz(grid["origin"], "grid.origin"),
                int(grid["rows"]),
                int(grid["cols"]),
                float(grid["spacing"]),
                float(grid["height"]),
            )
        except KeyError as exc:
            raise SceneError(f"grid missing field {exc}") from exc
    else:
        raw = doc.get("receivers", [])
        receivers = np.array([_xyz(r, f"receivers[{i}]") for i, r in enumerate(raw)])
    scatterers = []
    for k, s in enumerate(doc.get("scatterers", [])):
        try:
            sid = int(s["id"])
            lo, hi = s["min"], s["max"]
        except (KeyError, TypeError, ValueError) as exc:
            raise SceneError(f"scatterers[{k}] malformed: {s!r}") from exc
        scatterers.append(Scatterer(sid, _xyz(lo, f"scatterer {sid} min"), _xyz(hi, f"scatterer {sid} max")))
    return Scene(tx=tx, receivers=receivers, scatterers=tuple(scatterers), frequency=freq, grid=grid)


def scene_to_dict(scene: Scene) -> dict:
    doc: dict = {"frequency_hz": scene.frequency, "tx": _as_xyz(scene.tx)}
    if scene.grid is not None:
        doc["grid"] = scene.grid
    else:
        doc["receivers"] = [_as_xyz(p) for p in scene.receivers]
    doc["scatterers"] = [
        {"id": s.id, "min": _as_xyz(s.p_min), "max": _as_xyz(s.p_max)}
        for s in scene.scatterers
    ]
    return doc


def load_scene(path: str | Path) -> Scene:
    """Read and validate a JSON scene file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: not valid JSON ({exc})") from exc
    return scene_from_dict(doc)


def save_scene(scene: Scene, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(scene_to_dict(scene), indent=1) + "\n")


def canonical_canyon_scene() -> Scene:
    """Street-canyon fixture used by the acceptance run.

    A 61 x 120 receiver grid (0.5 m spacing, 1.5 m antennas) fills a 30 m
    wide street running along +y. The 20 m transmitter stands 75 m west of
    it; a row of narrow buildings with wide gaps along the west kerb shadows
    parts of the street, an east row and background blocks reflect.
    """
    grid = {
        "origin": {"x": 0.0, "y": 0.0, "z": 0.0},
        "rows": 120,
        "cols": 61,
        "spacing": 0.5,
        "height": 1.5,
    }
    # (x0, x1, y0, y1, height)
    west = [(-14.0, -8.0, y0, y0 + 6.0, h) for y0, h in ((-8.0, 8.0), (12.0, 14.0), (32.0, 6.0), (52.0, 11.0))]
    back = [(-40.0, -32.0, -20.0, -12.0, 10.0), (-40.0, -32.0, 62.0, 70.0, 14.0)]
    east = [(44.0, 52.0, y0, y0 + 8.0, h) for y0, h in ((-4.0, 14.0), (16.0, 10.0), (36.0, 18.0), (56.0, 12.0))]
    far_east = [
        (64.0, 72.0, y0, y0 + 8.0, h) for y0, h in ((6.0, 20.0), (46.0, 24.0), (26.0, 9.0), (66.0, 15.0))
    ]
    street_ends = [
        (8.0, 22.0, -26.0, -18.0, 12.0),
        (8.0, 22.0, 78.0, 86.0, 14.0),
        (-2.0, 6.0, -30.0, -24.0, 9.0),
        (24.0, 32.0, 86.0, 92.0, 10.0),
    ]
    north_west = [(-60.0, -52.0, y0, y0 + 8.0, h) for y0, h in ((-40.0, 12.0), (-24.0, 18.0), (80.0, 16.0), (96.0, 10.0))]
    outskirts = [
        (36.0, 42.0, -26.0, -20.0, 8.0),
        (36.0, 42.0, 84.0, 90.0, 11.0),
        (84.0, 92.0, 20.0, 28.0, 16.0),
        (84.0, 92.0, 40.0, 48.0, 22.0),
    ]
    blocks = west + back + east + far_east + street_ends + north_west + outskirts
    boxes = [Scatterer(sid, (x0, y0, 0.0), (x1, y1, h)) for sid, (x0, x1, y0, y1, h) in enumerate(blocks, start=1)]
    receivers = grid_receivers((0.0, 0.0, 0.0), grid["rows"], grid["cols"], grid["spacing"], grid["height"])
    return Scene(
        tx=(-75.0, 31.0, 20.0),
        receivers=receivers,
        scatterers=tuple(boxes),
        frequency=DEFAULT_FREQUENCY_HZ,
        grid=grid,
    )
