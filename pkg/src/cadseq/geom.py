"""Geometry evaluation: CAD sequences to voxel solids and surface point clouds.

Sketch loops are discretized to polylines (arcs at <= 6 degree steps,
circles as 64-gons), placed in space by scale -> plane rotation ->
translation, swept along the plane normal, and rasterized into a boolean
occupancy grid over the [-1,1]^3 cube by testing voxel centers. Boolean
combination happens on the grids; point clouds are sampled from the
occupied surface voxels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from . import seqmodel as sm
from .seqmodel import CadCommand, CadSequence, CommandType

DEFAULT_RESOLUTION = 64
DEFAULT_POINTS = 2000
ARC_STEP = math.pi / 30.0  # 6 degrees
CIRCLE_SEGMENTS = 64
MIN_LOOP_AREA = 1e-6
CLOSURE_TOL = 1e-9


class InvalidModelError(Exception):
    """A sequence that cannot be evaluated into a solid (the event IR counts)."""


class OpenLoopError(InvalidModelError):
    pass


class DegenerateLoopError(InvalidModelError):
    pass


class EmptyResultError(InvalidModelError):
    pass


class EmptyCloudError(ValueError):
    pass


# -- frames and sketch discretization ----------------------------------------


def plane_frame(theta: float, phi: float, gamma: float) -> np.ndarray:
    """Orthonormal sketch frame as matrix columns [e_u, e_v, normal].

    The normal is the spherical direction (theta = polar angle from +z,
    phi = azimuth); gamma spins the in-plane axes about the normal.
    """
    n = np.array([math.sin(theta) * math.cos(phi),
                  math.sin(theta) * math.sin(phi),
                  math.cos(theta)])
    ref = np.array([0.0, 0.0, 1.0])
    a = np.cross(ref, n)
    if np.linalg.norm(a) < 1e-12:
        a = np.array([1.0, 0.0, 0.0])
    else:
        a /= np.linalg.norm(a)
    b = np.cross(n, a)
    e_u = math.cos(gamma) * a + math.sin(gamma) * b
    e_v = -math.sin(gamma) * a + math.cos(gamma) * b
    return np.column_stack([e_u, e_v, n])


def extent_interval(e1: float, e2: float, u_level: int) -> tuple[float, float]:
    """Signed sweep interval along the plane normal for an extent type."""
    if u_level == sm.EXTENT_ONE_SIDED:
        return (min(0.0, e1), max(0.0, e1))
    if u_level == sm.EXTENT_SYMMETRIC:
        h = abs(e1) / 2.0
        return (-h, h)
    if u_level == sm.EXTENT_TWO_SIDED:
        return (min(-e2, e1), max(-e2, e1))
    raise InvalidModelError(f"unknown extent type level {u_level}")


def split_loops(commands: list[CadCommand]) -> list[list[CadCommand]]:
    """Group sketch commands into loops; each SOL opens a new one."""
    loops: list[list[CadCommand]] = []
    for c in commands:
        if c.ctype is CommandType.SOL:
            loops.append([])
        elif c.ctype in (CommandType.LINE, CommandType.ARC, CommandType.CIRCLE):
            if not loops:
                raise InvalidModelError("curve before any loop start")
            loops[-1].append(c)
        else:
            raise InvalidModelError(f"{c.ctype.name} inside a sketch")
    return loops


def _arc_points(s: np.ndarray, e: np.ndarray, alpha: float, ccw: bool) -> list[np.ndarray]:
    """Points along an arc from s to e (excluding s), degenerating to a segment."""
    chord = e - s
    half = float(np.linalg.norm(chord)) / 2.0
    if alpha < 1e-6 or half < 1e-12 or abs(math.sin(alpha / 2.0)) < 1e-9:
        return [e]
    radius = half / math.sin(alpha / 2.0)
    d = half / math.tan(alpha / 2.0)  # negative beyond a half turn
    mid = (s + e) / 2.0
    u = chord / (2.0 * half)
    nu = np.array([-u[1], u[0]])
    center = mid + d * nu if ccw else mid - d * nu
    a0 = math.atan2(s[1] - center[1], s[0] - center[0])
    sweep = alpha if ccw else -alpha
    nseg = max(1, math.ceil(alpha / ARC_STEP))
    pts = [center + radius * np.array([math.cos(a0 + sweep * k / nseg),
                                       math.sin(a0 + sweep * k / nseg)])
           for k in range(1, nseg + 1)]
    pts[-1] = e  # pin the endpoint so closure is exact
    return pts


def discretize_loop(loop: list[CadCommand]) -> np.ndarray:
    """Closed polyline (first point repeated last) of a loop, sketch coords."""
    if not loop:
        raise InvalidModelError("empty loop")
    if any(c.ctype is CommandType.CIRCLE for c in loop):
        if len(loop) != 1:
            raise InvalidModelError("circle mixed into a multi-curve loop")
        c = loop[0]
        cx, cy, r = c.value(sm.X), c.value(sm.Y), c.value(sm.R)
        ang = np.linspace(0.0, 2.0 * math.pi, CIRCLE_SEGMENTS + 1)
        return np.column_stack([cx + r * np.cos(ang), cy + r * np.sin(ang)])
    start = np.array([sm.dequantize_param(sm.START_LEVEL, sm.PARAM_RANGES[sm.X])] * 2)
    pts = [start]
    cur = start
    for c in loop:
        end = np.array([c.value(sm.X), c.value(sm.Y)])
        if c.ctype is CommandType.LINE:
            pts.append(end)
        else:
            pts.extend(_arc_points(cur, end, c.value(sm.ALPHA), c.params[sm.F] == 1))
        cur = end
    return np.vstack(pts)


def loop_area(poly: np.ndarray) -> float:
    """Absolute shoelace area of a closed polyline."""
    x, y = poly[:-1, 0], poly[:-1, 1]
    xn, yn = poly[1:, 0], poly[1:, 1]
    return abs(float(np.sum(x * yn - xn * y)) / 2.0)


def min_edge_distance(q: np.ndarray, poly: np.ndarray) -> float:
    """Min distance from a point to the edges of a closed polyline."""
    a = poly[:-1]
    b = poly[1:]
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-30)
    t = np.clip(((q - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(proj - q, axis=1)))


@dataclass
class Profile:
    """Discretized closed loops plus the spatial frame they are swept in."""

    loops: list[np.ndarray]
    frame: np.ndarray    # 3x3 columns [e_u, e_v, normal]
    origin: np.ndarray   # world translation
    scale: float


def evaluate_profile(loop_commands: list[CadCommand], extrude: CadCommand) -> Profile:
    """Discretize and verify a sketch, framed by an extrude's plane parameters.

    Chain loops must return to the fixed start point (OpenLoop otherwise)
    and every loop must enclose a non-trivial area (DegenerateLoop).
    """
    loops = split_loops(loop_commands)
    if not loops:
        raise InvalidModelError("extrude with no sketch loops")
    polys = []
    for loop in loops:
        poly = discretize_loop(loop)
        if float(np.max(np.abs(poly[0] - poly[-1]))) > CLOSURE_TOL:
            raise OpenLoopError(
                f"loop endpoint {poly[-1]} does not close onto {poly[0]}")
        if loop_area(poly) < MIN_LOOP_AREA:
            raise DegenerateLoopError("loop area below 1e-6")
        polys.append(poly)
    frame = plane_frame(extrude.value(sm.THETA), extrude.value(sm.PHI),
                        extrude.value(sm.GAMMA))
    origin = np.array([extrude.value(sm.PX), extrude.value(sm.PY), extrude.value(sm.PZ)])
    return Profile(polys, frame, origin, extrude.value(sm.S))


# -- voxel solids -------------------------------------------------------------


@dataclass
class VoxelSolid:
    """Boolean occupancy over the [-1,1]^3 cube."""

    occupancy: np.ndarray
    resolution: int

    @classmethod
    def empty(cls, resolution: int = DEFAULT_RESOLUTION) -> "VoxelSolid":
        return cls(np.zeros((resolution,) * 3, dtype=bool), resolution)

    @property
    def pitch(self) -> float:
        return 2.0 / self.resolution

    def count(self) -> int:
        return int(self.occupancy.sum())


_GRID_CACHE: dict[int, np.ndarray] = {}


def _voxel_centers(resolution: int) -> np.ndarray:
    if resolution not in _GRID_CACHE:
        axis = -1.0 + (np.arange(resolution) + 0.5) * (2.0 / resolution)
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        _GRID_CACHE[resolution] = np.column_stack(
            [gx.ravel(), gy.ravel(), gz.ravel()])
    return _GRID_CACHE[resolution]


def _rasterize_prism(profile: Profile, t0: float, t1: float, resolution: int) -> np.ndarray:
    """Occupancy of the swept profile: voxel centers inside the prism."""
    if profile.scale < 1e-9 or t1 - t0 < 1e-12:
        return np.zeros((resolution,) * 3, dtype=bool)
    centers = _voxel_centers(resolution)
    local = (centers - profile.origin) @ profile.frame  # rows: (u, v, axial)
    cand = (local[:, 2] >= t0) & (local[:, 2] <= t1)
    u = local[cand, 0] / profile.scale
    v = local[cand, 1] / profile.scale
    verts = np.concatenate(profile.loops, axis=0)
    starts = np.concatenate([[0], np.cumsum([len(p) for p in profile.loops])])
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    boxed = (u >= lo[0]) & (u <= hi[0]) & (v >= lo[1]) & (v <= hi[1])
    inside = np.zeros(cand.sum(), dtype=np.uint8)
    if boxed.any():
        inside[boxed] = kernels.points_in_loops(
            u[boxed], v[boxed], verts[:, 0], verts[:, 1], starts)
    mask = np.zeros(centers.shape[0], dtype=bool)
    mask[np.flatnonzero(cand)] = inside.astype(bool)
    return mask.reshape((resolution,) * 3)


def extrude_to_voxels(profile: Profile, e1: float, e2: float, u_level: int,
                      b_level: int, acc: VoxelSolid) -> VoxelSolid:
    """Sweep a profile and combine it with the accumulated solid.

    On the occupancy grid a "new body" contributes exactly like a union
    (the model is the union of its bodies), and union with an empty
    accumulator is the prism itself; cut and intersect must leave at
    least one occupied voxel.
    """
    t0, t1 = extent_interval(e1, e2, u_level)
    prism = _rasterize_prism(profile, t0, t1, acc.resolution)
    if b_level in (sm.BOOL_NEW, sm.BOOL_UNION):
        occ = acc.occupancy | prism
    elif b_level == sm.BOOL_CUT:
        occ = acc.occupancy & ~prism
    elif b_level == sm.BOOL_INTERSECT:
        occ = acc.occupancy & prism
    else:
        raise InvalidModelError(f"unknown boolean level {b_level}")
    if b_level in (sm.BOOL_CUT, sm.BOOL_INTERSECT) and not occ.any():
        raise EmptyResultError("cut/intersect produced an empty solid")
    return VoxelSolid(occ, acc.resolution)


def evaluate_sequence(seq: CadSequence, resolution: int = DEFAULT_RESOLUTION) -> VoxelSolid:
    """Run every sketch/extrude pair in order into one occupancy grid."""
    report = sm.validate_sequence(seq)
    if not report.ok:
        raise InvalidModelError(f"invalid sequence ({report.rule} at {report.position})")
    acc = VoxelSolid.empty(resolution)
    pending: list[CadCommand] = []
    for cmd in seq.effective():
        if cmd.ctype is CommandType.EOS:
            break
        if cmd.ctype is CommandType.EXTRUDE:
            profile = evaluate_profile(pending, cmd)
            acc = extrude_to_voxels(profile, cmd.value(sm.E1), cmd.value(sm.E2),
                                    cmd.params[sm.U], cmd.params[sm.B], acc)
            pending = []
        else:
            pending.append(cmd)
    if acc.count() == 0:
        raise EmptyResultError("sequence evaluates to an empty solid")
    return acc


# -- point clouds -------------------------------------------------------------


@dataclass
class PointCloud:
    """N points inside the [-1,1]^3 cube."""

    points: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be (N, 3)")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")

    def __len__(self):
        return self.points.shape[0]


def surface_voxels(solid: VoxelSolid) -> np.ndarray:
    """Boolean mask of occupied voxels with at least one empty 6-neighbour."""
    occ = solid.occupancy
    padded = np.pad(occ, 1, constant_values=False)
    interior = np.ones_like(occ)
    for axis in range(3):
        for off in (0, 2):
            sl = [slice(1, -1)] * 3
            sl[axis] = slice(off, off + occ.shape[axis])
            interior &= padded[tuple(sl)]
    return occ & ~interior


def sequence_to_pointcloud(seq: CadSequence, n: int = DEFAULT_POINTS,
                           resolution: int = DEFAULT_RESOLUTION,
                           seed: int = 0) -> PointCloud:
    """Sample n points from the solid's surface voxels, jittered within voxels.

    Raises InvalidModelError whenever the sequence cannot be evaluated;
    that event is exactly what the invalid-ratio metric counts.
    """
    solid = evaluate_sequence(seq, resolution)
    surf = surface_voxels(solid)
    idx = np.argwhere(surf)
    if idx.shape[0] == 0:
        raise EmptyResultError("no surface voxels")
    rng = np.random.default_rng(seed)
    choice = rng.integers(0, idx.shape[0], size=n)
    pitch = solid.pitch
    centers = -1.0 + (idx[choice] + 0.5) * pitch
    jitter = rng.uniform(-0.5, 0.5, size=(n, 3)) * pitch
    return PointCloud(centers + jitter)


def write_pointcloud(path: str, cloud: PointCloud) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y, z in cloud.points:
            fh.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_pointcloud(path: str) -> PointCloud:
    return PointCloud(np.loadtxt(path, dtype=np.float64).reshape(-1, 3))


# -- chamfer ------------------------------------------------------------------


def chamfer_distance(a: PointCloud, b: PointCloud, squared: bool = True) -> float:
    """Symmetric two-term-mean Chamfer distance between point clouds.

    squared=True (default) averages squared nearest-neighbour distances;
    squared=False averages euclidean ones.
    """
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloudError("chamfer on an empty cloud")
    d_ab = kernels.nn_sqdist(a.points, b.points)
    d_ba = kernels.nn_sqdist(b.points, a.points)
    if not squared:
        d_ab = np.sqrt(d_ab)
        d_ba = np.sqrt(d_ba)
    return float(d_ab.mean() + d_ba.mean())
