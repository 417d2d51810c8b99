"""Primitive collision: shapes, narrow-phase tests, broad-phase hashing.

Conventions used throughout:
  - the contact normal points from body B toward body A (separating direction
    for A), and a positive relative normal velocity separates the pair;
  - gap < 0 means penetration by |gap|;
  - entries carry a stable feature key (names plus a feature tag) so impulses
    can be warm-started across steps while the pair persists.
Environment shapes (half-space, box interior) act as body B with no rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .bodies import RigidBody
from .constraints import tangent_basis

_AXES = np.eye(3)


@dataclass
class Sphere:
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError("sphere radius must be positive")


@dataclass
class Capsule:
    """Segment of half_length along the body z axis, inflated by radius."""

    radius: float
    half_length: float

    def __post_init__(self) -> None:
        if self.radius <= 0.0 or self.half_length <= 0.0:
            raise ValueError("capsule radius and half_length must be positive")


@dataclass
class HalfSpace:
    """Points x with normal . x >= offset are outside the solid."""

    normal: np.ndarray
    offset: float = 0.0

    def __post_init__(self) -> None:
        self.normal = np.asarray(self.normal, dtype=float)
        n = float(np.linalg.norm(self.normal))
        if n == 0.0:
            raise ValueError("half-space normal must be nonzero")
        self.normal = self.normal / n


@dataclass
class BoxInterior:
    """Axis-aligned container; bodies live inside and collide with the walls.

    ``faces`` masks which of the six walls exist, ordered
    (-x, +x, -y, +y, -z, +z). An open-topped tub drops the +z wall.
    """

    center: np.ndarray
    half_extents: np.ndarray
    faces: tuple[bool, bool, bool, bool, bool, bool] = (True,) * 6

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=float)
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        if np.any(self.half_extents <= 0.0):
            raise ValueError("box half extents must be positive")


@dataclass
class ContactManifoldEntry:
    body_a: RigidBody
    body_b: Optional[RigidBody]  # None for environment shapes
    point: np.ndarray
    normal: np.ndarray  # unit, from B toward A
    gap: float
    key: tuple

    def __post_init__(self) -> None:
        self.point = np.asarray(self.point, dtype=float)
        self.normal = np.asarray(self.normal, dtype=float)


def collide_sphere_sphere(a: RigidBody, b: RigidBody, margin: float = 0.001) -> Optional[ContactManifoldEntry]:
    ra, rb = a.shape.radius, b.shape.radius
    delta = a.position - b.position
    dist = float(np.linalg.norm(delta))
    gap = dist - ra - rb
    if gap >= margin:
        return None
    if dist > 0.0:
        normal = delta / dist
    else:
        normal = np.array([1.0, 0.0, 0.0])  # coincident centers: fixed tie-break
    point = 0.5 * ((a.position - ra * normal) + (b.position + rb * normal))
    return ContactManifoldEntry(a, b, point, normal, gap, ("ss", a.name, b.name))


def collide_sphere_halfspace(a: RigidBody, plane: HalfSpace, margin: float = 0.001) -> Optional[ContactManifoldEntry]:
    r = a.shape.radius
    gap = float(plane.normal @ a.position) - plane.offset - r
    if gap >= margin:
        return None
    point = a.position - (r + 0.5 * gap) * plane.normal
    return ContactManifoldEntry(a, None, point, plane.normal.copy(), gap, ("sh", a.name))


def collide_sphere_box_interior(a: RigidBody, box: BoxInterior, margin: float = 0.001) -> list[ContactManifoldEntry]:
    """One candidate entry per wall; a sphere wedged in a corner gets several."""
    r = a.shape.radius
    local = a.position - box.center
    out = []
    for axis in range(3):
        for side, sign in ((0, -1.0), (1, 1.0)):
            face = 2 * axis + side
            if not box.faces[face]:
                continue
            # wall at local[axis] = sign * h, inward normal = -sign * e_axis
            gap = box.half_extents[axis] - sign * local[axis] - r
            if gap >= margin:
                continue
            normal = -sign * _AXES[axis]
            point = a.position - (r + 0.5 * gap) * normal
            out.append(ContactManifoldEntry(a, None, point, normal, float(gap), ("sb", a.name, face)))
    return out


def collide_capsule_halfspace(a: RigidBody, plane: HalfSpace, margin: float = 0.001) -> list[ContactManifoldEntry]:
    """Test both end-cap spheres; a lying capsule yields two entries."""
    shp = a.shape
    axis_w = a.rotation_matrix() @ np.array([0.0, 0.0, shp.half_length])
    out = []
    for tag, center in (("cap0", a.position - axis_w), ("cap1", a.position + axis_w)):
        gap = float(plane.normal @ center) - plane.offset - shp.radius
        if gap >= margin:
            continue
        point = center - (shp.radius + 0.5 * gap) * plane.normal
        out.append(ContactManifoldEntry(a, None, point, plane.normal.copy(), float(gap), ("ch", a.name, tag)))
    return out


@dataclass
class ContactRows:
    """Row data for one manifold entry: orthonormal frame, blocks, bias.

    Row order is (normal, tangent1, tangent2). Each block maps a body's
    6-DOF velocity (linear, angular) to the relative contact-point velocity
    of A minus B expressed in that frame. A kinematic side is folded into
    ``bias`` instead of contributing a block.
    """

    frame: np.ndarray  # (3, 3), rows n/t1/t2
    blocks: list[np.ndarray]
    bodies: list[RigidBody]
    bias: np.ndarray


def _body_block(frame: np.ndarray, lever: np.ndarray, sign: float) -> np.ndarray:
    blk = np.zeros((3, 6))
    blk[:, :3] = sign * frame
    blk[:, 3:] = sign * np.cross(lever[None, :], frame)
    return blk


def contact_jacobian(entry: ContactManifoldEntry) -> ContactRows:
    normal = entry.normal
    t1, t2 = tangent_basis(normal)
    frame = np.stack([normal, t1, t2])
    rows = ContactRows(frame, [], [], np.zeros(3))
    for body, sign in ((entry.body_a, 1.0), (entry.body_b, -1.0)):
        if body is None:
            continue
        blk = _body_block(frame, entry.point - body.position, sign)
        if body.kinematic:
            # moving boundary: its surface velocity becomes a row bias
            rows.bias += blk @ np.concatenate([body.lin_vel, body.ang_vel])
        else:
            rows.blocks.append(blk)
            rows.bodies.append(body)
    return rows


def spatial_hash_pairs(positions: np.ndarray, radii: np.ndarray, cell_size: Optional[float] = None) -> list[tuple[int, int]]:
    """Candidate index pairs (i < j) from a uniform grid.

    Cell size defaults to twice the largest radius, so touching spheres are
    always in the same or adjacent cells. Output order is deterministic.
    """
    positions = np.asarray(positions, dtype=float)
    radii = np.asarray(radii, dtype=float)
    n = positions.shape[0]
    if n < 2:
        return []
    if cell_size is None:
        cell_size = 2.0 * float(np.max(radii))
    if cell_size <= 0.0:
        raise ValueError("cell size must be positive")
    cells = np.floor(positions / cell_size).astype(np.int64)
    buckets: dict[tuple[int, int, int], list[int]] = {}
    for i in range(n):
        buckets.setdefault(tuple(cells[i]), []).append(i)
    # half-neighborhood offsets so each cell pair is visited once
    offsets = [
        off
        for off in (tuple(v) for v in np.stack(np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1], indexing="ij"), -1).reshape(-1, 3))
        if off > (0, 0, 0)
    ]
    pairs: list[tuple[int, int]] = []
    for key in sorted(buckets):
        members = buckets[key]
        for a_pos in range(len(members)):
            for b_pos in range(a_pos + 1, len(members)):
                pairs.append((members[a_pos], members[b_pos]))
        for off in offsets:
            other = buckets.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]))
            if not other:
                continue
            for i in members:
                for j in other:
                    pairs.append((i, j) if i < j else (j, i))
    pairs.sort()
    return pairs


def collide_spheres(
    bodies: Sequence[RigidBody],
    margin: float = 0.001,
    pairs: Optional[Iterable[tuple[int, int]]] = None,
) -> list[ContactManifoldEntry]:
    """Sphere-sphere manifold over a body list, hashed broad phase by default."""
    if pairs is None:
        if not bodies:
            return []
        positions = np.stack([b.position for b in bodies])
        radii = np.array([b.shape.radius for b in bodies])
        pairs = spatial_hash_pairs(positions, radii)
    out = []
    for i, j in pairs:
        entry = collide_sphere_sphere(bodies[i], bodies[j], margin)
        if entry is not None:
            out.append(entry)
    return out
