"""Tactile probe simulator: object meshes, posed scenes and ray casting.

Coordinates: the ground/water surface is the plane ``z = 0`` and objects sit
entirely below it. A probe enters the surface at ``(px, Py, 0)`` on the probe
line and travels along a unit direction with negative z component for at most
``u_len_max`` units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .errors import DegenerateDirection, PoseOutOfWorkspace, SceneSamplingError

OBJECT_NAMES = ("cuboid", "hemisphere", "prism", "cylinder")
NUM_OBJECTS = len(OBJECT_NAMES)
MAX_SAMPLE_ATTEMPTS = 1000


@dataclass(frozen=True)
class SimConfig:
    px: float = 0.0
    u_len_max: float = 3.0
    workspace: float = 1.0
    xy_range: tuple[float, float] = (-0.3, 0.3)
    z_range: tuple[float, float] = (-1.0, -0.6)
    tilt_limit: float = 10.0
    yaw_limit: float = 180.0
    # held-out test poses: yaw in this band OR x position in this band
    test_rz: tuple[float, float] = (30.0, 60.0)
    test_x: tuple[float, float] = (0.2, 0.3)
    uz_floor: float = 0.2


DEFAULT_SIM = SimConfig()


# --------------------------------------------------------------------------
# meshes


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("vertices must be (V, 3) and triangles (T, 3)")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite vertex")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        if f.size and self.areas().min() <= 1e-12:
            raise ValueError("degenerate triangle")

    def corners(self):
        """``(v0, v1, v2)`` arrays of shape (T, 3)."""
        v, f = self.vertices, self.triangles
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    def areas(self):
        a, b, c = self.corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def edge_counts(self):
        """Map each undirected edge to the number of triangles using it."""
        counts: dict[tuple[int, int], int] = {}
        for tri in self.triangles.tolist():
            for i in range(3):
                a, b = tri[i], tri[(i + 1) % 3]
                key = (a, b) if a < b else (b, a)
                counts[key] = counts.get(key, 0) + 1
        return counts

    def is_closed(self):
        return all(n == 2 for n in self.edge_counts().values())

    def transformed(self, rotation: np.ndarray, translation) -> "TriangleMesh":
        verts = self.vertices @ rotation.T + np.asarray(translation, dtype=np.float64)
        return TriangleMesh(verts, self.triangles)

    def to_obj(self) -> str:
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in self.vertices.tolist()]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.triangles.tolist()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_obj(cls, text: str) -> "TriangleMesh":
        verts, faces = [], []
        for lineno, raw in enumerate(text.split("\n"), 1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v" and len(parts) == 4:
                verts.append([float(p) for p in parts[1:]])
            elif parts[0] == "f" and len(parts) == 4:
                faces.append([int(p) - 1 for p in parts[1:]])
            else:
                raise ValueError(f"line {lineno}: unsupported OBJ record {raw!r}")
        return cls(np.array(verts, dtype=np.float64).reshape(-1, 3),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))


def _centered(verts, faces):
    verts = np.asarray(verts, dtype=np.float64)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    return TriangleMesh(verts - 0.5 * (lo + hi), np.asarray(faces))


def _oriented_outward(verts, faces):
    """Flip triangles whose normal points toward the (convex) mesh centroid."""
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.array(faces, dtype=np.int64)
    center = verts.mean(axis=0)
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    normal = np.cross(b - a, c - a)
    inward = np.einsum("ij,ij->i", normal, a - center) < 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return verts, faces


def make_cuboid(sx=0.8, sy=0.8, sz=0.6) -> TriangleMesh:
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    verts = [(x, y, z) for z in (-hz, hz) for y in (-hy, hy) for x in (-hx, hx)]
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
             (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return _centered(*_oriented_outward(verts, faces))


def make_hemisphere(radius=0.4, rings=8, segments=32) -> TriangleMesh:
    verts = [(0.0, 0.0, radius)]
    for i in range(1, rings + 1):
        polar = 0.5 * math.pi * i / rings
        for j in range(segments):
            az = 2 * math.pi * j / segments
            verts.append((radius * math.sin(polar) * math.cos(az),
                          radius * math.sin(polar) * math.sin(az),
                          radius * math.cos(polar)))
    base = len(verts)
    verts.append((0.0, 0.0, 0.0))

    def ring(i, j):
        return 1 + (i - 1) * segments + (j % segments)

    faces = [(0, ring(1, j), ring(1, j + 1)) for j in range(segments)]
    for i in range(1, rings):
        for j in range(segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces += [(a, c, d), (a, d, b)]
    faces += [(base, ring(rings, j + 1), ring(rings, j)) for j in range(segments)]
    return _centered(*_oriented_outward(verts, faces))


def make_prism(length=0.8, width=0.8, height=0.6) -> TriangleMesh:
    """Triangular prism lying along x with its ridge on top."""
    hx, hw = length / 2, width / 2
    verts = []
    for x in (-hx, hx):
        verts += [(x, -hw, 0.0), (x, hw, 0.0), (x, 0.0, height)]
    faces = [(0, 1, 2), (3, 5, 4),
             (0, 3, 4), (0, 4, 1),
             (1, 4, 5), (1, 5, 2),
             (2, 5, 3), (2, 3, 0)]
    return _centered(*_oriented_outward(verts, faces))


def make_cylinder(radius=0.4, length=0.8, segments=32) -> TriangleMesh:
    """Closed cylinder lying with its axis along x."""
    hx = length / 2
    verts = []
    for x in (-hx, hx):
        for j in range(segments):
            az = 2 * math.pi * j / segments
            verts.append((x, radius * math.cos(az), radius * math.sin(az)))
    c0, c1 = len(verts), len(verts) + 1
    verts += [(-hx, 0.0, 0.0), (hx, 0.0, 0.0)]
    faces = []
    for j in range(segments):
        a, b = j, (j + 1) % segments
        a2, b2 = a + segments, b + segments
        faces += [(a, b, b2), (a, b2, a2), (c0, b, a), (c1, a2, b2)]
    return _centered(*_oriented_outward(verts, faces))


def build_object_set() -> list[TriangleMesh]:
    """The four canonical objects, indexed by object id."""
    return [make_cuboid(), make_hemisphere(), make_prism(), make_cylinder()]


_OBJECTS: list[TriangleMesh] | None = None


def object_set() -> list[TriangleMesh]:
    global _OBJECTS
    if _OBJECTS is None:
        _OBJECTS = build_object_set()
    return _OBJECTS


# --------------------------------------------------------------------------
# scenes


def rotation_matrix(rx, ry, rz) -> np.ndarray:
    """Extrinsic rotation about x, then y, then z (angles in degrees)."""
    ax, ay, az = (math.radians(a) for a in (rx, ry, rz))
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return mz @ my @ mx


@dataclass(frozen=True, eq=False)
class Scene:
    object_id: int
    position: tuple[float, float, float]
    rotation: tuple[float, float, float]
    mesh: TriangleMesh = field(repr=False)

    @cached_property
    def _tri_arrays(self):
        a, b, c = self.mesh.corners()
        return (np.ascontiguousarray(a), np.ascontiguousarray(b - a),
                np.ascontiguousarray(c - a))

    def record(self) -> str:
        x, y, z = self.position
        rx, ry, rz = self.rotation
        return f"{self.object_id} {x!r} {y!r} {z!r} {rx!r} {ry!r} {rz!r}"

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (self.object_id, self.position, self.rotation) == (
            other.object_id, other.position, other.rotation)

    def __hash__(self):
        return hash((self.object_id, self.position, self.rotation))


def place_scene(object_id, position, rotation, sim: SimConfig = DEFAULT_SIM) -> Scene:
    object_id = int(object_id)
    if not 0 <= object_id < NUM_OBJECTS:
        raise ValueError(f"object_id must be in [0, {NUM_OBJECTS})")
    position = tuple(float(p) for p in position)
    rotation = tuple(float(r) for r in rotation)
    rx, ry, rz = rotation
    if abs(rx) > sim.tilt_limit or abs(ry) > sim.tilt_limit:
        raise PoseOutOfWorkspace(f"tilt ({rx}, {ry}) outside ±{sim.tilt_limit}")
    if abs(rz) > sim.yaw_limit:
        raise PoseOutOfWorkspace(f"yaw {rz} outside ±{sim.yaw_limit}")
    mesh = object_set()[object_id].transformed(rotation_matrix(*rotation), position)
    v = mesh.vertices
    if v[:, 2].max() >= 0.0:
        raise PoseOutOfWorkspace("object breaks the surface (z >= 0)")
    if np.abs(v[:, :2]).max() > sim.workspace:
        raise PoseOutOfWorkspace(f"object leaves |x|,|y| <= {sim.workspace}")
    return Scene(object_id, position, rotation, mesh)


def parse_scene_record(line: str, sim: SimConfig = DEFAULT_SIM) -> Scene:
    parts = line.split()
    if len(parts) != 7:
        raise ValueError(f"scene record needs 7 fields, got {len(parts)}")
    vals = [float(p) for p in parts[1:]]
    return place_scene(int(parts[0]), vals[:3], vals[3:], sim)


def in_test_region(x, rz, sim: SimConfig = DEFAULT_SIM) -> bool:
    return (sim.test_rz[0] <= rz <= sim.test_rz[1]) or (sim.test_x[0] <= x <= sim.test_x[1])


def sample_scene(rng: np.random.Generator, split: str = "train",
                 sim: SimConfig = DEFAULT_SIM) -> Scene:
    """Uniform object id and a uniform pose inside the split's region."""
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    want_test = split == "test"
    object_id = int(rng.integers(NUM_OBJECTS))
    for _ in range(MAX_SAMPLE_ATTEMPTS):
        x, y = rng.uniform(*sim.xy_range, size=2)
        z = rng.uniform(*sim.z_range)
        rx, ry = rng.uniform(-sim.tilt_limit, sim.tilt_limit, size=2)
        rz = rng.uniform(-sim.yaw_limit, sim.yaw_limit)
        if in_test_region(x, rz, sim) != want_test:
            continue
        try:
            return place_scene(object_id, (x, y, z), (rx, ry, rz), sim)
        except PoseOutOfWorkspace:
            continue
    raise SceneSamplingError(f"no valid {split} pose after {MAX_SAMPLE_ATTEMPTS} attempts")


# --------------------------------------------------------------------------
# probes


class ProbeRequest(NamedTuple):
    py: float
    u: tuple[float, float, float]

    def as_row(self):
        return (self.py, *self.u)


class CollectedPoint(NamedTuple):
    x: float
    y: float
    z: float
    t: int


def make_probe(py, u) -> ProbeRequest:
    u = np.asarray(u, dtype=np.float64)
    norm = float(np.linalg.norm(u))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError(f"orientation must be unit length, got norm {norm}")
    if u[2] >= 0:
        raise ValueError("orientation must point downward (U_z < 0)")
    return ProbeRequest(float(py), tuple(float(c) for c in u))


def actions_to_directions(actions, sim: SimConfig = DEFAULT_SIM):
    """Vectorised action -> (Py, unit direction) map over the last axis."""
    a = np.asarray(actions, dtype=np.float64)
    if np.any(np.abs(a) > 1.0):
        raise ValueError("action components must lie in [-1, 1]")
    raw = np.stack([a[..., 1], a[..., 2],
                    -(sim.uz_floor + (1.0 - sim.uz_floor) * (a[..., 3] + 1.0) / 2.0)], axis=-1)
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    if np.any(norm < 1e-9):
        raise DegenerateDirection("orientation vector vanished")
    return a[..., 0].copy(), raw / norm


def action_to_probe(action, sim: SimConfig = DEFAULT_SIM) -> ProbeRequest:
    py, u = actions_to_directions(np.asarray(action, dtype=np.float64).reshape(4), sim)
    return ProbeRequest(float(py), tuple(float(c) for c in u))


def ray_cast_batch(scenes: Sequence[Scene], py, dirs, sim: SimConfig = DEFAULT_SIM):
    """Cast one probe into each scene.

    Returns an ``(R, 4)`` array of ``(X, Y, Z, T)`` rows.
    """
    py = np.asarray(py, dtype=np.float64).reshape(-1)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(scenes)
    if py.shape[0] != n or dirs.shape[0] != n:
        raise ValueError("one probe per scene required")
    origins = np.zeros((n, 3))
    origins[:, 0] = sim.px
    origins[:, 1] = py
    arrays = [s._tri_arrays for s in scenes]
    offsets = np.zeros(n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([a[0].shape[0] for a in arrays])
    v0 = np.ascontiguousarray(np.concatenate([a[0] for a in arrays]))
    e1 = np.ascontiguousarray(np.concatenate([a[1] for a in arrays]))
    e2 = np.ascontiguousarray(np.concatenate([a[2] for a in arrays]))
    t, tri = kernels.first_hits(origins, dirs, v0, e1, e2, offsets, float(sim.u_len_max))
    out = np.empty((n, 4))
    out[:, :3] = origins + t[:, None] * dirs
    out[:, 3] = (tri >= 0).astype(np.float64)
    return out


def ray_cast(scene: Scene, probe: ProbeRequest, sim: SimConfig = DEFAULT_SIM) -> CollectedPoint:
    row = ray_cast_batch([scene], [probe.py], [probe.u], sim)[0]
    return CollectedPoint(float(row[0]), float(row[1]), float(row[2]), int(row[3]))
