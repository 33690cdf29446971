"""Voxel shape representations and the procedural shape corpus.

Grids are W^3 scalar fields over a 1 m object cube centered at the origin.
Arrays are indexed [ix, iy, iz]; the serialized element order is
ix + W*(iy + W*iz) (x fastest).  Occupancy values live in [0, 1]; distance
fields hold unsigned truncated distances in voxel units.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

DEFAULT_EXTENT = 1.0  # object cube side, meters
DEFAULT_TRUNCATION = 3.0  # voxel units

SHAPE_KINDS = ("box", "ellipsoid", "cylinder", "chair", "car")


class VoxelFormatError(ValueError):
    pass


@dataclass
class VoxelGrid:
    values: np.ndarray  # (W, W, W) float64 in [0, 1]
    extent: float = DEFAULT_EXTENT

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or len(set(self.values.shape)) != 1:
            raise ValueError(f"voxel grid must be cubic, got shape {self.values.shape}")
        if np.min(self.values) < 0.0 or np.max(self.values) > 1.0:
            raise ValueError("occupancy values must lie in [0, 1]")

    @property
    def side(self):
        return self.values.shape[0]

    @property
    def voxel_size(self):
        return self.extent / self.side

    def occupied_fraction(self, threshold=0.5):
        return float(np.mean(self.values >= threshold))

    def centers_world(self):
        """World coordinates of voxel centers along one axis."""
        w = self.side
        return (np.arange(w) - (w - 1) / 2.0) * self.voxel_size


@dataclass
class DistanceField:
    values: np.ndarray  # (W, W, W) float64 in [0, truncation], voxel units
    truncation: float = DEFAULT_TRUNCATION
    extent: float = DEFAULT_EXTENT

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or len(set(self.values.shape)) != 1:
            raise ValueError(f"distance field must be cubic, got shape {self.values.shape}")
        if np.min(self.values) < 0.0 or np.max(self.values) > self.truncation + 1e-12:
            raise ValueError("distances must lie in [0, truncation]")

    @property
    def side(self):
        return self.values.shape[0]


def binarize(grid: VoxelGrid, threshold=0.5) -> VoxelGrid:
    """Threshold occupancies to {0, 1}; the threshold itself maps to 1."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return VoxelGrid((grid.values >= threshold).astype(np.float64), grid.extent)


def df_from_voxels(grid: VoxelGrid, threshold=0.5, truncation=DEFAULT_TRUNCATION) -> DistanceField:
    """Exact Euclidean distance (voxel units) to the nearest occupied voxel.

    Uses the separable exact squared-distance transform; distances are
    clamped at ``truncation``.  A grid with no occupied voxel yields the
    all-truncation field and emits a warning.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if truncation <= 0:
        raise ValueError(f"truncation must be positive, got {truncation}")
    occupied = grid.values >= threshold
    if not occupied.any():
        warnings.warn("df_from_voxels: grid has no occupied voxel; field is all-truncation")
        return DistanceField(np.full(grid.values.shape, float(truncation)), truncation, grid.extent)
    dist = ndimage.distance_transform_edt(~occupied, sampling=1.0)
    return DistanceField(np.minimum(dist, truncation), truncation, grid.extent)


# ---------------------------------------------------------------------------
# procedural shapes


def _center_coords(w):
    # voxel-center world coordinates, (w,w,w) per axis
    c = (np.arange(w) - (w - 1) / 2.0) * (DEFAULT_EXTENT / w)
    return np.meshgrid(c, c, c, indexing="ij")


def _solid(mask, w):
    grid = VoxelGrid(mask.astype(np.float64))
    if not mask.any():
        raise ValueError("procedural shape parameters produce an empty grid")
    return grid


def _box_mask(x, y, z, half, center=(0.0, 0.0, 0.0)):
    hx, hy, hz = half
    cx, cy, cz = center
    return (np.abs(x - cx) <= hx) & (np.abs(y - cy) <= hy) & (np.abs(z - cz) <= hz)


def _cyl_mask_y(x, y, z, radius, half_h, center=(0.0, 0.0, 0.0)):
    cx, cy, cz = center
    return ((x - cx) ** 2 + (z - cz) ** 2 <= radius**2) & (np.abs(y - cy) <= half_h)


def _cyl_mask_x(x, y, z, radius, half_len, center=(0.0, 0.0, 0.0)):
    cx, cy, cz = center
    return ((y - cy) ** 2 + (z - cz) ** 2 <= radius**2) & (np.abs(x - cx) <= half_len)


def procedural_shape(kind, w, rng, params=None):
    """A solid binary shape of the requested family, jittered by ``rng``.

    Shapes always fit the unit cube with at least one voxel of margin.
    Parameter overrides (``params``) are in meters.
    """
    if w < 8:
        raise ValueError(f"voxel side must be >= 8, got {w}")
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind {kind!r} (choose from {SHAPE_KINDS})")
    params = dict(params or {})
    x, y, z = _center_coords(w)
    h = DEFAULT_EXTENT / w
    limit = 0.5 - h  # one-voxel margin

    if kind == "box":
        half = params.get("half_extents")
        if half is None:
            half = rng.uniform(0.12, 0.38, size=3) * np.array([1.0, 0.8, 1.0])
        half = np.minimum(np.asarray(half, dtype=float), limit)
        if np.any(half <= 0):
            raise ValueError("box half-extents must be positive")
        return _solid(_box_mask(x, y, z, half), w)

    if kind == "ellipsoid":
        radii = params.get("radii")
        if radii is None:
            radii = rng.uniform(0.10, 0.40, size=3)
        radii = np.minimum(np.asarray(radii, dtype=float), limit)
        if np.any(radii <= 0):
            raise ValueError("ellipsoid radii must be positive")
        mask = (x / radii[0]) ** 2 + (y / radii[1]) ** 2 + (z / radii[2]) ** 2 <= 1.0
        return _solid(mask, w)

    if kind == "cylinder":
        radius = params.get("radius", rng.uniform(0.10, 0.32))
        half_h = params.get("half_height", rng.uniform(0.15, 0.40))
        radius, half_h = min(radius, limit), min(half_h, limit)
        if radius <= 0 or half_h <= 0:
            raise ValueError("cylinder dimensions must be positive")
        return _solid(_cyl_mask_y(x, y, z, radius, half_h), w)

    if kind == "chair":
        seat_half = rng.uniform(0.16, 0.26)
        seat_y = rng.uniform(-0.08, 0.02)
        seat_th = rng.uniform(0.03, 0.06)
        back_h = rng.uniform(0.18, 0.32)
        back_th = rng.uniform(0.03, 0.07)
        leg_r = rng.uniform(0.03, 0.055, size=4)  # per-leg jitter breaks symmetry
        mask = _box_mask(x, y, z, (seat_half, seat_th, seat_half), (0.0, seat_y, 0.0))
        # back slab rises from the seat along -z
        back_top = min(seat_y + back_h, limit)
        back_cy = (seat_y + back_top) / 2.0
        back_hy = (back_top - seat_y) / 2.0
        mask |= _box_mask(x, y, z, (seat_half, back_hy, back_th), (0.0, back_cy, -(seat_half - back_th)))
        leg_top = seat_y - seat_th
        leg_cy = (leg_top + (-limit)) / 2.0
        leg_hy = (leg_top + limit) / 2.0
        inset = seat_half * 0.7
        for i, (sx, sz) in enumerate([(-1, -1), (-1, 1), (1, -1), (1, 1)]):
            mask |= _box_mask(
                x, y, z, (leg_r[i], leg_hy, leg_r[i]), (sx * inset, leg_cy, sz * inset)
            )
        return _solid(mask, w)

    # car: body box + cabin box + 4 wheel cylinders along x
    body_hx = rng.uniform(0.16, 0.22)
    body_hz = rng.uniform(0.30, 0.40)
    body_hy = rng.uniform(0.07, 0.11)
    body_cy = rng.uniform(-0.10, -0.02)
    cabin_hz = body_hz * rng.uniform(0.35, 0.5)
    cabin_hy = rng.uniform(0.05, 0.09)
    cabin_cz = rng.uniform(-0.12, 0.0)  # cabin sits toward the rear
    wheel_r = rng.uniform(0.05, 0.08)
    mask = _box_mask(x, y, z, (body_hx, body_hy, body_hz), (0.0, body_cy, 0.0))
    mask |= _box_mask(
        x, y, z, (body_hx * 0.8, cabin_hy, cabin_hz), (0.0, body_cy + body_hy + cabin_hy, cabin_cz)
    )
    wheel_y = body_cy - body_hy
    wheel_z = body_hz * 0.6
    for sx in (-1, 1):
        for sz in (-1, 1):
            mask |= _cyl_mask_x(
                x, y, z, wheel_r, body_hx * 0.25, (sx * body_hx, wheel_y, sz * wheel_z)
            )
    return _solid(mask, w)


@dataclass
class ShapeCorpus:
    grids: list
    labels: np.ndarray  # int indices into class_names
    class_names: list
    seed: int
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.grids) != len(self.labels):
            raise ValueError("labels and grids must align")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("labels must index the class list")
        sides = {g.side for g in self.grids}
        if len(sides) > 1:
            raise ValueError(f"all corpus members must share one side, got {sides}")

    def __len__(self):
        return len(self.grids)

    @property
    def side(self):
        return self.grids[0].side if self.grids else 0


def build_corpus(n, w, seed, classes=SHAPE_KINDS):
    """n procedurally generated shapes cycling through the class list."""
    classes = list(classes)
    grids, labels = [], []
    for i in range(n):
        label = i % len(classes)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(7, i))))
        grids.append(procedural_shape(classes[label], w, rng))
        labels.append(label)
    return ShapeCorpus(grids, np.array(labels, dtype=np.int64), classes, int(seed))


# ---------------------------------------------------------------------------
# file formats

VVOX_MAGIC = b"VVOX"
VVOX_VERSION = 1
DTYPE_OCCUPANCY = 0
DTYPE_DISTANCE = 1

VCORP_MAGIC = b"VCRP"
VCORP_VERSION = 1


def _flatten_x_fastest(values):
    # element order ix + W*(iy + W*iz) for arrays indexed [ix, iy, iz]
    return np.asarray(values, dtype="<f4").flatten(order="F")


def _unflatten_x_fastest(flat, w):
    return flat.reshape((w, w, w), order="F").astype(np.float64)


def save_vvox(path, obj):
    """Write a VoxelGrid or DistanceField as a .vvox file."""
    is_df = isinstance(obj, DistanceField)
    dtype = DTYPE_DISTANCE if is_df else DTYPE_OCCUPANCY
    with open(path, "wb") as f:
        f.write(VVOX_MAGIC)
        f.write(struct.pack("<I", VVOX_VERSION))
        f.write(struct.pack("<I", obj.side))
        f.write(struct.pack("<B3x", dtype))
        f.write(_flatten_x_fastest(obj.values).tobytes())


def load_vvox(path):
    """Read a .vvox file; returns VoxelGrid or DistanceField by dtype tag."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != VVOX_MAGIC:
            raise VoxelFormatError(f"bad magic {magic!r} at offset 0 (expected {VVOX_MAGIC!r})")
        header = f.read(12)
        if len(header) != 12:
            raise VoxelFormatError(f"truncated header at offset {4 + len(header)}")
        version, w, dtype = struct.unpack("<IIB3x", header)
        if version != VVOX_VERSION:
            raise VoxelFormatError(f"unsupported version {version} at offset 4")
        n = w * w * w
        buf = f.read(4 * n)
        if len(buf) != 4 * n:
            raise VoxelFormatError(f"truncated payload at offset {16 + len(buf)}")
        values = _unflatten_x_fastest(np.frombuffer(buf, dtype="<f4"), w)
    if dtype == DTYPE_DISTANCE:
        return DistanceField(values, truncation=max(DEFAULT_TRUNCATION, float(values.max())))
    if dtype != DTYPE_OCCUPANCY:
        raise VoxelFormatError(f"unknown dtype tag {dtype} at offset 12")
    return VoxelGrid(np.clip(values, 0.0, 1.0))


def save_corpus(path, corpus: ShapeCorpus):
    with open(path, "wb") as f:
        f.write(VCORP_MAGIC)
        f.write(struct.pack("<I", VCORP_VERSION))
        f.write(struct.pack("<I", len(corpus)))
        f.write(struct.pack("<I", corpus.side))
        f.write(struct.pack("<B3x", DTYPE_OCCUPANCY))
        f.write(struct.pack("<Q", corpus.seed & 0xFFFFFFFFFFFFFFFF))
        f.write(struct.pack("<I", len(corpus.class_names)))
        for name in corpus.class_names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
        for grid, label in zip(corpus.grids, corpus.labels):
            f.write(struct.pack("<I", int(label)))
            f.write(_flatten_x_fastest(grid.values).tobytes())


def load_corpus(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != VCORP_MAGIC:
            raise VoxelFormatError(f"bad magic {magic!r} at offset 0 (expected {VCORP_MAGIC!r})")
        version, count, w, dtype = struct.unpack("<IIIB3x", f.read(16))
        if version != VCORP_VERSION:
            raise VoxelFormatError(f"unsupported corpus version {version}")
        (seed,) = struct.unpack("<Q", f.read(8))
        (n_classes,) = struct.unpack("<I", f.read(4))
        names = []
        for _ in range(n_classes):
            (ln,) = struct.unpack("<I", f.read(4))
            names.append(f.read(ln).decode("utf-8"))
        grids, labels = [], []
        for i in range(count):
            head = f.read(4)
            if len(head) != 4:
                raise VoxelFormatError(f"truncated corpus at item {i}, offset {f.tell()}")
            (label,) = struct.unpack("<I", head)
            buf = f.read(4 * w * w * w)
            if len(buf) != 4 * w * w * w:
                raise VoxelFormatError(f"truncated corpus payload at item {i}, offset {f.tell()}")
            grids.append(VoxelGrid(_unflatten_x_fastest(np.frombuffer(buf, dtype="<f4"), w)))
            labels.append(label)
    return ShapeCorpus(grids, np.array(labels, dtype=np.int64), names, int(seed))


def load_binvox(path):
    """Read-only import of the community run-length voxel format."""
    with open(path, "rb") as f:
        line = f.readline().strip()
        if not line.startswith(b"#binvox"):
            raise VoxelFormatError(f"not a binvox file: header {line!r}")
        dims = None
        while True:
            line = f.readline()
            if not line:
                raise VoxelFormatError("binvox header ends before 'data'")
            tok = line.split()
            if tok and tok[0] == b"dim":
                dims = [int(v) for v in tok[1:4]]
            elif tok and tok[0] == b"data":
                break
        if dims is None or len(set(dims)) != 1:
            raise VoxelFormatError(f"binvox grid must be cubic, got dims {dims}")
        w = dims[0]
        raw = np.frombuffer(f.read(), dtype=np.uint8)
    if raw.size % 2:
        raise VoxelFormatError("binvox run-length payload has odd length")
    values, counts = raw[0::2], raw[1::2]
    flat = np.repeat(values, counts).astype(np.float64)
    if flat.size != w**3:
        raise VoxelFormatError(f"binvox payload expands to {flat.size} voxels, expected {w**3}")
    # binvox order is x, z, y with y fastest
    arr = flat.reshape((w, w, w))  # [ix, iz, iy]
    return VoxelGrid(np.clip(arr.transpose(0, 2, 1), 0.0, 1.0))
