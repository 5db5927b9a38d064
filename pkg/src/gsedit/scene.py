"""Explicit Gaussian-splat scene model.

A scene is a struct-of-arrays point set. Each point carries a position,
an opacity logit (opacity = logistic(logit)), per-axis log standard
deviations, a rotation quaternion and spherical-harmonic color
coefficients. Opacity and scale are stored in unconstrained form so that
gradient steps keep them valid without projection.

Persistence uses the de-facto standard Gaussian-splat PLY layout
(binary little endian, float32 per attribute) so scenes interoperate
with other splat tooling.
"""

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyRegionError, PlyFormatError, ValidationError
from .transforms import normalize_quat, quat_to_matrix

TASKS = ("insert", "replace", "retexture", "stylize")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class Gaussian:
    """A single splat, as a value copy (editing one does not touch the scene)."""

    position: np.ndarray
    opacity_logit: float
    scale_log: np.ndarray
    rotation: np.ndarray
    sh_coeffs: np.ndarray

    @property
    def opacity(self):
        return float(sigmoid(self.opacity_logit))

    def covariance(self):
        R = quat_to_matrix(normalize_quat(self.rotation))
        S = np.diag(np.exp(self.scale_log))
        M = R @ S
        return M @ M.T


class GaussianScene:
    """Ordered Gaussian point set with a shared SH degree.

    Attribute arrays are float64 with leading dimension N. Index order is
    stable: indices are durable identifiers for selections and edit sets.
    """

    def __init__(self, positions, opacity_logits, scale_logs, rotations, sh_coeffs, sh_degree):
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.opacity_logits = np.asarray(opacity_logits, dtype=np.float64).reshape(n)
        self.scale_logs = np.asarray(scale_logs, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(rotations, dtype=np.float64).reshape(n, 4)
        k = (sh_degree + 1) ** 2
        self.sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64).reshape(n, k, 3)
        if not 0 <= sh_degree <= 3:
            raise ValidationError(f"sh_degree must be in [0, 3], got {sh_degree}")
        self.sh_degree = int(sh_degree)

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, i):
        return Gaussian(
            position=self.positions[i].copy(),
            opacity_logit=float(self.opacity_logits[i]),
            scale_log=self.scale_logs[i].copy(),
            rotation=self.rotations[i].copy(),
            sh_coeffs=self.sh_coeffs[i].copy(),
        )

    @property
    def num_sh_coeffs(self):
        return (self.sh_degree + 1) ** 2

    def opacities(self):
        return sigmoid(self.opacity_logits)

    def copy(self):
        return GaussianScene(
            self.positions.copy(),
            self.opacity_logits.copy(),
            self.scale_logs.copy(),
            self.rotations.copy(),
            self.sh_coeffs.copy(),
            self.sh_degree,
        )

    @classmethod
    def empty(cls, sh_degree=0):
        k = (sh_degree + 1) ** 2
        return cls(
            np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)),
            np.zeros((0, 4)), np.zeros((0, k, 3)), sh_degree,
        )

    def extend(self, other):
        """New scene with `other`'s Gaussians appended (both unchanged)."""
        if other.sh_degree != self.sh_degree:
            raise ValidationError("sh_degree mismatch between scenes")
        return GaussianScene(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.opacity_logits, other.opacity_logits]),
            np.concatenate([self.scale_logs, other.scale_logs]),
            np.concatenate([self.rotations, other.rotations]),
            np.concatenate([self.sh_coeffs, other.sh_coeffs]),
            self.sh_degree,
        )

    def take(self, indices):
        """New scene holding only the given indices, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return GaussianScene(
            self.positions[idx],
            self.opacity_logits[idx],
            self.scale_logs[idx],
            self.rotations[idx],
            self.sh_coeffs[idx],
            self.sh_degree,
        )

    def attribute_payload(self):
        """The float32 attribute block exactly as stored on disk.

        Used by tests to compare scene states byte-for-byte.
        """
        return _pack_vertex_rows(self).tobytes()


@dataclass
class BoundingBox3D:
    """Oriented box: `orientation` rotates box-frame axes into world frame."""

    center: np.ndarray
    half_extents: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64).reshape(3)
        if not np.all(self.half_extents > 0):
            raise ValidationError("half_extents must be positive")
        self.orientation = normalize_quat(np.asarray(self.orientation, dtype=np.float64).reshape(4))

    def corners(self):
        """All 8 corners in world coordinates, shape (8, 3)."""
        signs = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        R = quat_to_matrix(self.orientation)
        return self.center + (signs * self.half_extents) @ R.T


@dataclass
class TrainableAttrs:
    position: bool = True
    opacity: bool = True
    scale: bool = True
    rotation: bool = True
    sh: bool = True

    @classmethod
    def sh_only(cls):
        return cls(position=False, opacity=False, scale=False, rotation=False, sh=True)

    def any(self):
        return self.position or self.opacity or self.scale or self.rotation or self.sh


@dataclass
class EditSet:
    """Which Gaussians an edit may touch, and which attributes of them."""

    editable_indices: np.ndarray
    trainable: TrainableAttrs
    task: str

    def __post_init__(self):
        self.editable_indices = np.asarray(self.editable_indices, dtype=np.int64).reshape(-1)
        if self.task not in TASKS:
            raise ValidationError(f"unknown task {self.task!r}")
        if len(np.unique(self.editable_indices)) != len(self.editable_indices):
            raise ValidationError("editable indices must be unique")

    def fixed_indices(self, scene):
        mask = np.ones(len(scene), dtype=bool)
        mask[self.editable_indices] = False
        return np.nonzero(mask)[0]


def select_in_box(scene, box):
    """Indices of Gaussians whose center lies inside the box (inclusive).

    The test uses centers only; the spatial extent of each Gaussian is
    ignored. Boundary points count as inside so ties break reproducibly.
    """
    R = quat_to_matrix(box.orientation)
    local = (scene.positions - box.center) @ R  # R^T * delta, row-wise
    inside = np.all(np.abs(local) <= box.half_extents, axis=1)
    return np.nonzero(inside)[0]


def build_edit_set(scene, box, task, rng=None, jitter=False):
    """Derive the editable subset for a task, duplicating for insertion.

    insert    duplicates of the in-box Gaussians are appended and become the
              editable set; the originals are left untouched.
    replace   the in-box originals are editable, all attributes.
    retexture the in-box originals are editable, SH color only.
    stylize   every Gaussian is editable, all attributes.

    `jitter` resamples duplicate positions uniformly inside the box to break
    symmetry (insert only). Gaussians outside the editable set are never
    modified by any later stage.
    """
    if task not in TASKS:
        raise ValidationError(f"unknown task {task!r}")

    if task == "stylize":
        return scene, EditSet(np.arange(len(scene)), TrainableAttrs(), task)

    selected = select_in_box(scene, box)
    if selected.size == 0:
        raise EmptyRegionError(f"bounding box selects no Gaussians for task {task!r}")

    if task == "insert":
        dup = scene.take(selected)
        if jitter:
            if rng is None:
                rng = np.random.default_rng(0)
            R = quat_to_matrix(box.orientation)
            local = rng.uniform(-box.half_extents, box.half_extents, size=(len(dup), 3))
            dup.positions = box.center + local @ R.T
        new_scene = scene.extend(dup)
        editable = np.arange(len(scene), len(new_scene))
        return new_scene, EditSet(editable, TrainableAttrs(), task)

    if task == "replace":
        return scene, EditSet(selected, TrainableAttrs(), task)

    # retexture
    return scene, EditSet(selected, TrainableAttrs.sh_only(), task)


# ---------------------------------------------------------------------------
# PLY persistence (standard Gaussian-splat layout)

_FIXED_PROPS = ("x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2")
_TAIL_PROPS = ("opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3")


def _required_props(sh_degree):
    n_rest = 3 * ((sh_degree + 1) ** 2 - 1)
    rest = tuple(f"f_rest_{i}" for i in range(n_rest))
    return _FIXED_PROPS + rest + _TAIL_PROPS


def _pack_vertex_rows(scene):
    n = len(scene)
    k = scene.num_sh_coeffs
    props = _required_props(scene.sh_degree)
    dtype = np.dtype([(p, "<f4") for p in props])
    rows = np.zeros(n, dtype=dtype)
    pos = scene.positions.astype("<f4")
    rows["x"], rows["y"], rows["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
    dc = scene.sh_coeffs[:, 0, :].astype("<f4")
    rows["f_dc_0"], rows["f_dc_1"], rows["f_dc_2"] = dc[:, 0], dc[:, 1], dc[:, 2]
    # Higher-order coefficients are stored channel-major: all red, all green,
    # all blue, matching the reference splat files.
    if k > 1:
        rest = scene.sh_coeffs[:, 1:, :].astype("<f4")  # (n, k-1, 3)
        for ch in range(3):
            for j in range(k - 1):
                rows[f"f_rest_{ch * (k - 1) + j}"] = rest[:, j, ch]
    rows["opacity"] = scene.opacity_logits.astype("<f4")
    sc = scene.scale_logs.astype("<f4")
    rows["scale_0"], rows["scale_1"], rows["scale_2"] = sc[:, 0], sc[:, 1], sc[:, 2]
    rot = scene.rotations.astype("<f4")
    for i in range(4):
        rows[f"rot_{i}"] = rot[:, i]
    return rows


def save_ply(scene, path):
    """Write the scene in standard splat PLY form (binary little endian)."""
    rows = _pack_vertex_rows(scene)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(scene)}"]
    header += [f"property float {p}" for p in rows.dtype.names]
    header.append("end_header")
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rows.tobytes())


def load_ply(path):
    """Read a standard splat PLY into a scene.

    Values survive a save/load round trip bit-exactly: attributes are kept
    as float32 payloads widened to float64 in memory.
    """
    with open(path, "rb") as f:
        data = f.read()
    header_end = data.find(b"end_header\n")
    if header_end < 0:
        raise PlyFormatError("missing end_header")
    header = data[:header_end].decode("ascii", errors="replace").splitlines()
    body = data[header_end + len(b"end_header\n"):]

    if not header or header[0].strip() != "ply":
        raise PlyFormatError("not a PLY file")
    fmt = next((ln for ln in header if ln.startswith("format")), "")
    if "binary_little_endian" not in fmt:
        raise PlyFormatError("expected binary_little_endian format")

    count = None
    props = []
    in_vertex = False
    for ln in header:
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] not in ("float", "float32"):
                raise PlyFormatError(f"property {parts[-1]} is not float32")
            props.append(parts[-1])
    if count is None:
        raise PlyFormatError("no vertex element")

    n_rest = sum(1 for p in props if p.startswith("f_rest_"))
    if n_rest % 3 != 0:
        raise PlyFormatError("f_rest count not divisible by 3")
    k = n_rest // 3 + 1
    sh_degree = int(round(np.sqrt(k))) - 1
    if (sh_degree + 1) ** 2 != k or not 0 <= sh_degree <= 3:
        raise PlyFormatError(f"unsupported SH layout with {n_rest} f_rest properties")

    for p in _required_props(sh_degree):
        if p not in props:
            raise PlyFormatError(p)

    dtype = np.dtype([(p, "<f4") for p in props])
    rows = np.frombuffer(body[: count * dtype.itemsize], dtype=dtype, count=count)
    if rows.shape[0] != count:
        raise PlyFormatError("vertex data truncated")

    positions = np.stack([rows["x"], rows["y"], rows["z"]], axis=1).astype(np.float64)
    sh = np.zeros((count, k, 3), dtype=np.float64)
    sh[:, 0, 0] = rows["f_dc_0"]
    sh[:, 0, 1] = rows["f_dc_1"]
    sh[:, 0, 2] = rows["f_dc_2"]
    for ch in range(3):
        for j in range(k - 1):
            sh[:, 1 + j, ch] = rows[f"f_rest_{ch * (k - 1) + j}"]
    opacity = rows["opacity"].astype(np.float64)
    scale = np.stack([rows[f"scale_{i}"] for i in range(3)], axis=1).astype(np.float64)
    rot = np.stack([rows[f"rot_{i}"] for i in range(4)], axis=1).astype(np.float64)

    if count:
        for name, arr in (("position", positions), ("f_dc/f_rest", sh),
                          ("opacity", opacity), ("scale", scale), ("rot", rot)):
            bad = ~np.isfinite(arr.reshape(count, -1)).all(axis=1)
            if bad.any():
                raise ValidationError(f"non-finite {name} at vertex {int(np.nonzero(bad)[0][0])}")

    return GaussianScene(positions, opacity, scale, rot, sh, sh_degree)


def dumps_ply(scene):
    """PLY bytes without touching the filesystem (for tests and reports)."""
    buf = io.BytesIO()
    rows = _pack_vertex_rows(scene)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(scene)}"]
    header += [f"property float {p}" for p in rows.dtype.names]
    header.append("end_header")
    buf.write(("\n".join(header) + "\n").encode("ascii"))
    buf.write(rows.tobytes())
    return buf.getvalue()
