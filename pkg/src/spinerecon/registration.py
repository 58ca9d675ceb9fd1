"""Landmark-based affine registration and rigid ICP.

The vertebra frame is built from the eight endplate landmarks: the
lateral basis vector averages the two left-to-right landmark pairs,
the anterior vector the two posterior-to-anterior pairs, and the
longitudinal vector the four plate-to-plate pairs. The frame's
homogeneous matrix is the normalized basis re-scaled by the vector
magnitudes, deliberately without any orthogonalization, so the
alignment can carry shear when the landmark-derived axes are not
perpendicular; `VertebraFrame.skew_degrees` reports how far from 90
degrees the axes are. Registration of a source onto a target frame is
the composition target_matrix @ inverse(source_matrix).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .anatomy import (
    AxesEstimate,
    LandmarkSet,
    PATIENT_AXES,
    detect_vertebra_landmarks,
    fit_spine_curve,
)
from .mesh import (
    LABEL_VERTEBRAL_BODY,
    SurfaceIndex,
    TriangleMesh,
    apply_transform,
    center_of_mass,
    submesh_by_label,
    transform_mesh,
    validate_transform,
)
from .spine import SpineModel, Vertebra

MODES = ("ours", "ours_icp", "icp", "icp_vb")


@dataclass(frozen=True)
class VertebraFrame:
    """Un-normalized local basis (x lateral, y anterior, z longitudinal) and center."""

    x_g: np.ndarray
    y_g: np.ndarray
    z_g: np.ndarray
    c_g: np.ndarray

    def __post_init__(self):
        for name in ("x_g", "y_g", "z_g", "c_g"):
            v = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            v.flags.writeable = False
            object.__setattr__(self, name, v)
        mags = self.scales
        if np.any(mags < 1e-9):
            raise ValueError(f"degenerate frame: basis magnitudes {mags}")
        basis = np.column_stack([self.x_g / mags[0], self.y_g / mags[1], self.z_g / mags[2]])
        if np.linalg.det(basis) <= 0:
            raise ValueError("degenerate frame: left-handed basis")

    @property
    def scales(self) -> np.ndarray:
        """Basis vector magnitudes (width, depth, height of the body)."""
        return np.array([
            np.linalg.norm(self.x_g),
            np.linalg.norm(self.y_g),
            np.linalg.norm(self.z_g),
        ])

    @property
    def skew_degrees(self) -> float:
        """Largest pairwise deviation of the basis axes from 90 degrees."""
        mags = self.scales
        u = [self.x_g / mags[0], self.y_g / mags[1], self.z_g / mags[2]]
        worst = 0.0
        for i in range(3):
            for j in range(i + 1, 3):
                ang = np.degrees(np.arccos(np.clip(u[i] @ u[j], -1.0, 1.0)))
                worst = max(worst, abs(ang - 90.0))
        return worst


def compute_frame(landmarks: LandmarkSet) -> VertebraFrame:
    """Vertebra frame from the eight landmarks.

    x = ((l2-l1) + (l4-l3)) / 2
    y = ((l6-l5) + (l8-l7)) / 2
    z = ((l1-l3) + (l2-l4) + (l5-l7) + (l6-l8)) / 4
    center = mean of all eight landmarks.
    """
    lm = landmarks
    x_g = 0.5 * ((lm.l2 - lm.l1) + (lm.l4 - lm.l3))
    y_g = 0.5 * ((lm.l6 - lm.l5) + (lm.l8 - lm.l7))
    z_g = 0.25 * ((lm.l1 - lm.l3) + (lm.l2 - lm.l4) + (lm.l5 - lm.l7) + (lm.l6 - lm.l8))
    c_g = lm.points().mean(axis=0)
    return VertebraFrame(x_g, y_g, z_g, c_g)


def frame_to_transform(frame: VertebraFrame) -> np.ndarray:
    """Homogeneous local-to-global alignment of the frame.

    Normalized basis columns plus the center, post-multiplied by
    diag(scales, 1); the basis is used exactly as detected, without
    orthogonalization.
    """
    mags = frame.scales
    n = np.eye(4)
    n[:3, 0] = frame.x_g / mags[0]
    n[:3, 1] = frame.y_g / mags[1]
    n[:3, 2] = frame.z_g / mags[2]
    n[:3, 3] = frame.c_g
    return n @ np.diag([mags[0], mags[1], mags[2], 1.0])


def compute_registration(source_frame: VertebraFrame,
                         target_frame: VertebraFrame) -> np.ndarray:
    """Affine transform mapping the source frame onto the target frame."""
    t_s = frame_to_transform(source_frame)
    t_t = frame_to_transform(target_frame)
    validate_transform(t_s)
    r = t_t @ np.linalg.inv(t_s)
    r[3] = (0.0, 0.0, 0.0, 1.0)
    return r


# ---------------------------------------------------------------------------
# Rigid ICP

@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    convergence_tol: float = 1e-4  # mm change of mean correspondence distance
    sample_count: int = 2000
    outlier_trim_fraction: float = 0.0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.sample_count < 3:
            raise ValueError("sample_count must be >= 3")
        if not 0.0 <= self.outlier_trim_fraction < 1.0:
            raise ValueError("outlier_trim_fraction must lie in [0, 1)")


@dataclass(frozen=True)
class IcpResult:
    transform: np.ndarray
    mean_distance: float
    iterations: int
    history: tuple[float, ...] = field(default=())


def _fit_rigid(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Closed-form least-squares rigid transform src -> dst (SVD)."""
    sc = src.mean(axis=0)
    dc = dst.mean(axis=0)
    h = (src - sc).T @ (dst - dc)
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0 or s[1] <= 1e-12 * s[0]:
        raise ValueError("degenerate correspondences: rank-deficient cross-covariance")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = dc - r @ sc
    out = np.eye(4)
    out[:3, :3] = r
    out[:3, 3] = t
    return out


def icp_rigid(source_points, target_index: SurfaceIndex,
              init: np.ndarray | None = None,
              params: IcpParams | None = None) -> IcpResult:
    """Point-to-point rigid ICP against an indexed target surface.

    Alternates exact closest-point correspondence with the closed-form
    SVD rotation fit. The returned transform maps the init-applied
    source points onto the target, i.e. it composes with (and contains
    no scaling from) init. The recorded mean-distance history is
    non-increasing: an iteration that would raise it is discarded and
    the previous transform kept.
    """
    params = params or IcpParams()
    pts = np.asarray(source_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise ValueError("icp needs at least 3 source points")
    spread = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if spread[1] <= 1e-9 * max(spread[0], 1.0):
        raise ValueError("icp source points are collinear")
    if init is not None:
        pts = apply_transform(init, pts)

    n_keep = max(3, int(round(len(pts) * (1.0 - params.outlier_trim_fraction))))
    transform = np.eye(4)
    previous = transform
    history: list[float] = []
    for it in range(params.max_iterations):
        moved = apply_transform(transform, pts)
        closest, dist = target_index.query(moved)
        if n_keep < len(pts):
            keep = np.argsort(dist, kind="stable")[:n_keep]
        else:
            keep = slice(None)
        mean_d = float(dist[keep].mean())
        if history and mean_d > history[-1]:
            transform = previous  # revert the step that made things worse
            break
        history.append(mean_d)
        if len(history) > 1 and abs(history[-2] - history[-1]) < params.convergence_tol:
            break
        if it < params.max_iterations - 1:
            previous = transform
            transform = _fit_rigid(pts[keep], closest[keep])
    # the returned mean was measured at the returned transform
    return IcpResult(transform, history[-1], len(history), tuple(history))


# ---------------------------------------------------------------------------
# Spine-level registration

@dataclass(frozen=True)
class RegistrationRun:
    """Registered spine, one transform per level, and the compute wall time."""

    spine: SpineModel
    transforms: tuple[np.ndarray, ...]
    elapsed_s: float


def detection_mesh(vertebra: Vertebra) -> TriangleMesh:
    """Landmarks come from the vertebral body only; use the labeled submesh when present."""
    mesh = vertebra.mesh
    if mesh.labels is not None and np.any(mesh.labels == LABEL_VERTEBRAL_BODY):
        return submesh_by_label(mesh, LABEL_VERTEBRAL_BODY)
    return mesh


def _detect_all(spine: SpineModel, *, orientation_hint, cos_threshold,
                slab_half_width, use_spine_curve,
                threads: int = 1) -> list[tuple[AxesEstimate, LandmarkSet]]:
    meshes = [detection_mesh(v) for v in spine.vertebrae]
    tangents = [None] * len(meshes)
    if use_spine_curve and len(meshes) >= 2:
        curve = fit_spine_curve([center_of_mass(m) for m in meshes])
        tangents = list(curve.control_tangents())

    def detect(i: int):
        vertebra = spine.vertebrae[i]
        if vertebra.landmarks is not None and vertebra.axes is not None:
            return vertebra.axes, vertebra.landmarks
        try:
            return detect_vertebra_landmarks(
                meshes[i], curve_tangent=tangents[i], orientation_hint=orientation_hint,
                cos_threshold=cos_threshold, slab_half_width=slab_half_width)
        except Exception as e:
            raise RuntimeError(f"{vertebra.level}: landmark detection failed: {e}") from e

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(detect, range(len(meshes))))
    return [detect(i) for i in range(len(meshes))]


def _sample_rows(points: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    if len(points) <= count:
        return points
    idx = rng.choice(len(points), size=count, replace=False)
    return points[idx]


def register_spine(atlas: SpineModel, targets: SpineModel, mode: str = "ours", *,
                   orientation_hint: AxesEstimate = PATIENT_AXES,
                   cos_threshold: float = 0.8,
                   slab_half_width: float | None = None,
                   use_spine_curve: bool = False,
                   icp_params: IcpParams | None = None,
                   seed: int = 0,
                   threads: int = 1) -> RegistrationRun:
    """Register complete atlas vertebrae onto vertebral-body targets.

    Modes:
      ours      landmark-frame affine per level
      ours_icp  the affine refined by rigid ICP of the body surface
                (the affine's scale is retained; ICP adjusts pose only)
      icp       rigid ICP of the full atlas mesh from identity
      icp_vb    rigid ICP of the atlas body submesh, applied to the
                full atlas mesh

    The elapsed time covers landmark detection, transform computation,
    and mesh application; no file I/O happens here.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if atlas.levels != targets.levels:
        raise ValueError(
            f"level mismatch: atlas {atlas.levels} vs targets {targets.levels}"
        )
    icp_params = icp_params or IcpParams()
    rng = np.random.default_rng(seed)

    t0 = time.perf_counter()
    source_anatomy = _detect_all(
        atlas, orientation_hint=orientation_hint, cos_threshold=cos_threshold,
        slab_half_width=slab_half_width, use_spine_curve=use_spine_curve,
        threads=threads)
    if mode in ("ours", "ours_icp"):
        target_anatomy = _detect_all(
            targets, orientation_hint=orientation_hint, cos_threshold=cos_threshold,
            slab_half_width=slab_half_width, use_spine_curve=use_spine_curve,
            threads=threads)

    registered = []
    transforms = []
    for i, vertebra in enumerate(atlas.vertebrae):
        level = vertebra.level
        _, src_lms = source_anatomy[i]
        try:
            if mode in ("ours", "ours_icp"):
                _, tgt_lms = target_anatomy[i]
                affine = compute_registration(compute_frame(src_lms), compute_frame(tgt_lms))
                if mode == "ours":
                    total = affine
                else:
                    body = detection_mesh(vertebra)
                    pts = _sample_rows(body.vertices, icp_params.sample_count, rng)
                    pts = apply_transform(affine, pts)
                    index = SurfaceIndex(targets[i].mesh)
                    refine = icp_rigid(pts, index, params=icp_params)
                    total = refine.transform @ affine
            else:
                source_mesh = vertebra.mesh if mode == "icp" else detection_mesh(vertebra)
                pts = _sample_rows(source_mesh.vertices, icp_params.sample_count, rng)
                index = SurfaceIndex(targets[i].mesh)
                total = icp_rigid(pts, index, params=icp_params).transform
        except Exception as e:
            raise RuntimeError(f"{level}: {mode} registration failed: {e}") from e

        moved_lms = src_lms.transformed(total)
        registered.append(vertebra.with_(
            mesh=transform_mesh(vertebra.mesh, total),
            landmarks=moved_lms,
            axes=None,
            frame=compute_frame(moved_lms),
        ))
        transforms.append(total)
    elapsed = time.perf_counter() - t0
    return RegistrationRun(SpineModel(tuple(registered)), tuple(transforms), elapsed)
