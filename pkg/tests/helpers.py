"""Shared test geometry and independent oracles.

The closest-point oracle here deliberately uses a different
formulation (normal-equations solve plus edge clamping) than the
library kernel so the two can check each other.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from spinerecon.mesh import TriangleMesh


def random_rigid(rng, max_angle_deg=180.0, max_translation=100.0) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.0, max_angle_deg))
    T = np.eye(4)
    T[:3, :3] = Rotation.from_rotvec(angle * axis).as_matrix()
    T[:3, 3] = rng.uniform(-max_translation, max_translation, 3)
    return T


def box_mesh(width, depth, height, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Box surface with a center vertex per face (4 triangles per face).

    The symmetric tessellation keeps the vertex covariance exactly
    diagonal, so principal axes are the world axes.
    """
    hx, hy, hz = width / 2.0, depth / 2.0, height / 2.0
    c = np.asarray(center, dtype=np.float64)
    corners = np.array([(sx, sy, sz) for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
                       dtype=np.float64) * (hx, hy, hz)
    # corner index: 4*(x>0) + 2*(y>0) + (z>0)
    faces = {
        "-x": ((0, 1, 3, 2), (-hx, 0, 0)),
        "+x": ((4, 6, 7, 5), (hx, 0, 0)),
        "-y": ((0, 4, 5, 1), (0, -hy, 0)),
        "+y": ((2, 3, 7, 6), (0, hy, 0)),
        "-z": ((0, 2, 6, 4), (0, 0, -hz)),
        "+z": ((1, 5, 7, 3), (0, 0, hz)),
    }
    verts = [corners]
    tris = []
    for loop, face_center in faces.values():
        center_id = 8 + len(tris) // 4
        verts.append(np.asarray(face_center, dtype=np.float64).reshape(1, 3))
        for k in range(4):
            tris.append((loop[k], loop[(k + 1) % 4], center_id))
    vertices = np.concatenate(verts) + c
    return TriangleMesh(vertices, np.asarray(tris, dtype=np.int64))


def sheet_mesh(width, depth, nx=8, ny=8, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Flat rectangular sheet in the z=const plane, normal +z."""
    cx, cy, cz = center
    xs = cx + np.linspace(-width / 2.0, width / 2.0, nx)
    ys = cy + np.linspace(-depth / 2.0, depth / 2.0, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([gx.ravel(), gy.ravel(), np.full(nx * ny, float(cz))])
    tris = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            v00 = i * ny + j
            v01 = i * ny + j + 1
            v10 = (i + 1) * ny + j
            v11 = (i + 1) * ny + j + 1
            tris.append((v00, v11, v01))
            tris.append((v00, v10, v11))
    return TriangleMesh(verts, np.asarray(tris, dtype=np.int64))


def ellipse_disk(a, b, edge=2.0, z=0.0, rotate_z_deg=0.0) -> TriangleMesh:
    """Flat elliptical disk in the z-plane; cardinal rim vertices exact.

    rotate_z_deg spins the tessellation about z (the geometry stays the
    same ellipse only for 0/90/180/270; other values just reposition
    vertices away from the cardinal axes, handy for slab edge cases).
    """
    per = np.pi * (3 * (a + b) - np.sqrt((3 * a + b) * (a + 3 * b)))
    count = max(16, 4 * int(np.ceil(per / edge / 4.0)))
    theta = 2 * np.pi * np.arange(count) / count + np.radians(rotate_z_deg)
    cos, sin = np.cos(theta), np.sin(theta)
    if rotate_z_deg == 0.0:
        for j, (c, s) in ((0, (1.0, 0.0)), (count // 4, (0.0, 1.0)),
                          (count // 2, (-1.0, 0.0)), (3 * count // 4, (0.0, -1.0))):
            cos[j], sin[j] = c, s
    rings = max(1, int(np.ceil(min(a, b) / edge)))
    verts = [np.array([[0.0, 0.0, z]])]
    for i in range(1, rings + 1):
        f = i / rings
        verts.append(np.column_stack([f * a * cos, f * b * sin, np.full(count, z)]))
    tris = []
    for j in range(count):
        tris.append((0, 1 + j, 1 + (j + 1) % count))
    for i in range(1, rings):
        base_in = 1 + (i - 1) * count
        base_out = 1 + i * count
        for j in range(count):
            jn = (j + 1) % count
            tris.append((base_in + j, base_out + j, base_out + jn))
            tris.append((base_in + j, base_out + jn, base_in + jn))
    return TriangleMesh(np.concatenate(verts), np.asarray(tris, dtype=np.int64))


def _closest_on_segment(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return a + t * ab


def oracle_closest_point(mesh: TriangleMesh, point) -> tuple[np.ndarray, float]:
    """Independent nearest-point reference: per-triangle QP solve + edge clamping."""
    p = np.asarray(point, dtype=np.float64)
    best_p = None
    best_d = np.inf
    for tri in mesh.triangle_points():
        a, b, c = tri
        e1, e2 = b - a, c - a
        g11, g12, g22 = e1 @ e1, e1 @ e2, e2 @ e2
        det = g11 * g22 - g12 * g12
        candidates = []
        if det > 0:
            r1, r2 = (p - a) @ e1, (p - a) @ e2
            s = (g22 * r1 - g12 * r2) / det
            t = (g11 * r2 - g12 * r1) / det
            if s >= 0 and t >= 0 and s + t <= 1:
                candidates.append(a + s * e1 + t * e2)
        candidates.append(_closest_on_segment(p, a, b))
        candidates.append(_closest_on_segment(p, b, c))
        candidates.append(_closest_on_segment(p, c, a))
        for q in candidates:
            d = float(np.linalg.norm(q - p))
            if d < best_d:
                best_d = d
                best_p = q
    return best_p, best_d


def rotation_angle_deg(r: np.ndarray) -> float:
    return float(np.degrees(np.arccos(np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0))))
