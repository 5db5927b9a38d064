"""Pinhole cameras, pose sampling and box-to-mask projection.

Convention: `CameraPose.rotation` is a world-to-camera quaternion and a
world point X maps into the camera frame as R @ X + t. The camera looks
down +z, x right, y down (pixel row direction). Pixel (row, col) has its
center at image coordinates (col, row).
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyProjectionError
from .transforms import matrix_to_quat, normalize_quat, quat_to_matrix

NEAR_PLANE = 0.01


@dataclass
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ConfigError("image size must be positive")

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]))


@dataclass
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = normalize_quat(np.asarray(self.rotation, dtype=np.float64).reshape(4))
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def rotation_matrix(self):
        return quat_to_matrix(self.rotation)

    def camera_center(self):
        R = self.rotation_matrix()
        return -R.T @ self.translation

    def world_to_camera(self, points):
        R = self.rotation_matrix()
        return np.asarray(points, dtype=np.float64) @ R.T + self.translation

    def to_dict(self):
        return {"quat": self.rotation.tolist(), "trans": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["quat"]), np.asarray(d["trans"]))


def look_at_pose(eye, target, up=(0.0, 1.0, 0.0)):
    """Pose of a camera at `eye` whose optical axis passes through `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    forward = target - eye
    dist = np.linalg.norm(forward)
    if dist == 0.0:
        raise ConfigError("camera eye coincides with look-at target")
    z = forward / dist
    y0 = -up  # camera y points down in a y-up world
    x = np.cross(y0, z)
    nx = np.linalg.norm(x)
    if nx < 1e-12:
        raise ConfigError("view direction parallel to up vector")
    x = x / nx
    y = np.cross(z, x)
    R = np.stack([x, y, z])  # rows are camera axes in world coordinates
    return CameraPose(matrix_to_quat(R), -R @ eye)


@dataclass
class PoseSamplerConfig:
    look_at: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius_range: tuple = (2.0, 4.0)
    elevation_range_deg: tuple = (-30.0, 60.0)
    azimuth_range_deg: tuple = (0.0, 360.0)
    grid_step_deg: float = 30.0

    def __post_init__(self):
        self.look_at = np.asarray(self.look_at, dtype=np.float64).reshape(3)
        for name, rng in (("radius", self.radius_range),
                          ("elevation", self.elevation_range_deg),
                          ("azimuth", self.azimuth_range_deg)):
            if rng[1] < rng[0]:
                raise ConfigError(f"empty {name} range {rng}")
        if self.radius_range[0] <= 0:
            raise ConfigError("radius must be positive")
        if self.grid_step_deg <= 0:
            raise ConfigError("grid step must be positive")


def _pose_on_sphere(cfg, radius, elevation_deg, azimuth_deg):
    el = math.radians(elevation_deg)
    az = math.radians(azimuth_deg)
    offset = radius * np.array(
        [math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)]
    )
    return look_at_pose(cfg.look_at + offset, cfg.look_at)


def sample_random_pose(cfg, rng):
    """One pose with radius/elevation/azimuth drawn uniformly from `cfg`.

    Deterministic for a given numpy Generator state.
    """
    radius = rng.uniform(*cfg.radius_range)
    elevation = rng.uniform(*cfg.elevation_range_deg)
    azimuth = rng.uniform(*cfg.azimuth_range_deg)
    return _pose_on_sphere(cfg, radius, elevation, azimuth)


def _grid_values(lo, hi, step, half_open):
    span = hi - lo
    n_steps = span / step
    if abs(n_steps - round(n_steps)) > 1e-9:
        raise ConfigError(f"grid step {step} does not divide range [{lo}, {hi}]")
    n = int(round(n_steps))
    if half_open and n > 0:
        return [lo + i * step for i in range(n)]
    return [lo + i * step for i in range(n + 1)]


def sample_refinement_grid(cfg):
    """All elevation x azimuth grid poses at the mid-range radius.

    Elevation-major ordering. A full 360 degree azimuth range is treated as
    half open so the seam pose is not emitted twice.
    """
    if cfg.radius_range[1] == cfg.radius_range[0]:
        raise ConfigError("grid sampling needs a non-degenerate radius range")
    radius = 0.5 * (cfg.radius_range[0] + cfg.radius_range[1])
    elevations = _grid_values(*cfg.elevation_range_deg, cfg.grid_step_deg, half_open=False)
    full_circle = abs((cfg.azimuth_range_deg[1] - cfg.azimuth_range_deg[0]) - 360.0) < 1e-9
    azimuths = _grid_values(*cfg.azimuth_range_deg, cfg.grid_step_deg, half_open=full_circle)
    return [_pose_on_sphere(cfg, radius, el, az) for el in elevations for az in azimuths]


def poses_to_json(poses, intrinsics):
    """JSON document for handing a pose set to the guidance service."""
    return json.dumps(
        {"intrinsics": intrinsics.to_dict(), "poses": [p.to_dict() for p in poses]},
        indent=2,
    )


def poses_from_json(text):
    doc = json.loads(text)
    intr = Intrinsics.from_dict(doc["intrinsics"])
    return [CameraPose.from_dict(p) for p in doc["poses"]], intr


# ---------------------------------------------------------------------------
# Box projection

def _clip_box_points(corners_cam):
    """Vertices of the box clipped against the near plane, camera frame.

    Returns the surviving corners plus the intersection points of box edges
    that cross the plane.
    """
    # Corner index bit layout matches BoundingBox3D.corners: (sx, sy, sz)
    # with sz fastest, so flipping one sign bit gives the edge neighbors.
    edges = []
    for a in range(8):
        for bit in (1, 2, 4):
            b = a ^ bit
            if a < b:
                edges.append((a, b))
    keep = [c for c in corners_cam if c[2] > NEAR_PLANE]
    for a, b in edges:
        za, zb = corners_cam[a][2], corners_cam[b][2]
        if (za > NEAR_PLANE) != (zb > NEAR_PLANE):
            t = (NEAR_PLANE - za) / (zb - za)
            keep.append(corners_cam[a] + t * (corners_cam[b] - corners_cam[a]))
    return keep


def _convex_hull_2d(points):
    """Monotone-chain hull, counterclockwise, no duplicate endpoint."""
    pts = sorted({(float(p[0]), float(p[1])) for p in points})
    if len(pts) <= 2:
        return [np.array(p) for p in pts]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return [np.array(p) for p in lower[:-1] + upper[:-1]]


def project_box(box, pose, K):
    """Binary mask of the box projected onto the image plane.

    The box is clipped against the near plane, the surviving points are
    projected, and pixels whose centers fall inside the 2D convex hull of
    the projections are set. Raises EmptyProjectionError when the whole box
    is behind the near plane.
    """
    corners_cam = pose.world_to_camera(box.corners())
    if not np.any(corners_cam[:, 2] > NEAR_PLANE):
        raise EmptyProjectionError("bounding box lies entirely behind the camera")
    points = _clip_box_points(list(corners_cam))
    uv = [np.array([K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy]) for p in points]
    hull = _convex_hull_2d(uv)

    mask = np.zeros((K.height, K.width), dtype=bool)
    if not hull:
        return mask
    cols, rows = np.meshgrid(np.arange(K.width, dtype=np.float64),
                             np.arange(K.height, dtype=np.float64))
    if len(hull) == 1:
        d = np.hypot(cols - hull[0][0], rows - hull[0][1])
        return d <= 1e-9
    if len(hull) == 2:
        a, b = hull
        ab = b - a
        t = ((cols - a[0]) * ab[0] + (rows - a[1]) * ab[1]) / (ab @ ab)
        t = np.clip(t, 0.0, 1.0)
        d = np.hypot(cols - (a[0] + t * ab[0]), rows - (a[1] + t * ab[1]))
        return d <= 1e-9
    inside = np.ones((K.height, K.width), dtype=bool)
    eps = 1e-9
    for i in range(len(hull)):
        a = hull[i]
        b = hull[(i + 1) % len(hull)]
        # hull is counterclockwise in (u, v); inclusive boundary
        inside &= (b[0] - a[0]) * (rows - a[1]) - (b[1] - a[1]) * (cols - a[0]) >= -eps
    mask |= inside
    return mask
