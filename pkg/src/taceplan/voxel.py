"""3D volume and label-mask primitives.

Grids are dense numpy arrays indexed ``[x, y, z]`` with per-axis physical
spacing in millimetres. Volumes hold scalar intensities (Hounsfield units
before windowing, ``[-1, 1]`` after); masks hold labels 0 = background,
1 = liver, 2 = tumor.

Morphology uses a 6-connectivity discrete ball (L1 ball) so that repeated
unit erosions/dilations compose additively. Erosion treats out-of-grid
voxels as foreground and dilation treats them as background, which makes
``erode(m) == complement(dilate(complement(m)))`` hold exactly on the
finite grid; for anatomy interior to the volume both conventions coincide
with zero padding.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import InvalidArgumentError, NoForegroundError

BACKGROUND, LIVER, TUMOR = 0, 1, 2
_MASK_LABELS = frozenset((BACKGROUND, LIVER, TUMOR))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _check_spacing(spacing) -> tuple[float, float, float]:
    s = tuple(float(x) for x in spacing)
    if len(s) != 3 or any(x <= 0 for x in s):
        raise InvalidArgumentError(f"spacing must be 3 positive values, got {spacing}")
    return s


@dataclass(frozen=True, eq=False)
class Volume3:
    """Dense 3D scalar grid with physical spacing (mm per voxel)."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidArgumentError("volume data must be 3D")
        object.__setattr__(self, "data", _freeze(self.data.astype(np.float32, copy=False)))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume_ml(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz / 1000.0

    def slice2d(self, axis: str, index: int) -> np.ndarray:
        """In-plane slice along ``axis`` in {'x','y','z'}."""
        ax = "xyz".index(axis)
        if not 0 <= index < self.dims[ax]:
            raise InvalidArgumentError(
                f"slice index {index} out of range for axis {axis} (dim {self.dims[ax]})"
            )
        return np.take(self.data, index, axis=ax)


@dataclass(frozen=True, eq=False)
class Mask3:
    """Per-voxel label grid sharing dims/spacing with its paired volume."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.data.ndim != 3:
            raise InvalidArgumentError("mask data must be 3D")
        data = self.data.astype(np.uint8, copy=False)
        if data.size and int(data.max()) > TUMOR:
            raise InvalidArgumentError(
                f"mask labels exceed {TUMOR}; allowed labels are {sorted(_MASK_LABELS)}"
            )
        object.__setattr__(self, "data", _freeze(data))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def voxel_volume_ml(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz / 1000.0

    def count(self, label: int) -> int:
        return int(np.count_nonzero(self.data == label))

    def volume_ml(self, label: int) -> float:
        return self.count(label) * self.voxel_volume_ml

    def slice2d(self, axis: str, index: int) -> np.ndarray:
        ax = "xyz".index(axis)
        if not 0 <= index < self.dims[ax]:
            raise InvalidArgumentError(
                f"slice index {index} out of range for axis {axis} (dim {self.dims[ax]})"
            )
        return np.take(self.data, index, axis=ax)


@dataclass(frozen=True)
class StructuringElement:
    """6-connectivity discrete ball: offsets with |dx|+|dy|+|dz| <= radius."""

    radius: int = 1
    footprint: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.radius < 1:
            raise InvalidArgumentError("structuring element radius must be >= 1")
        object.__setattr__(self, "footprint", _freeze(l1_ball(self.radius)))


def l1_ball(radius: int) -> np.ndarray:
    """Boolean (2r+1)^3 footprint of the L1 ball."""
    r = int(radius)
    ax = np.arange(-r, r + 1)
    dx, dy, dz = np.meshgrid(ax, ax, ax, indexing="ij")
    return (np.abs(dx) + np.abs(dy) + np.abs(dz)) <= r


def resample(v: Volume3, target_spacing) -> Volume3:
    """Trilinear resample onto a grid with the given spacing.

    Output dims are the rounded physical extent divided by the target
    spacing (at least 1 per axis); voxels are cell-centered, so identical
    spacing reproduces the input exactly and values never leave the input
    range (linear interpolation, edge clamped).
    """
    target = _check_spacing(target_spacing)
    dims = v.dims
    extent = [dims[i] * v.spacing[i] for i in range(3)]
    new_dims = tuple(max(1, int(round(extent[i] / target[i]))) for i in range(3))

    # Cell-centered mapping: output center (j+0.5)*t sits at input index
    # (j+0.5)*t/s - 0.5.
    coords = np.meshgrid(
        *[
            (np.arange(new_dims[i]) + 0.5) * target[i] / v.spacing[i] - 0.5
            for i in range(3)
        ],
        indexing="ij",
    )
    out = ndimage.map_coordinates(
        v.data.astype(np.float64), np.stack(coords), order=1, mode="nearest"
    )
    return Volume3(out.astype(np.float32), target)


def window_normalize(v: Volume3, lo: float, hi: float) -> Volume3:
    """Clamp intensities to [lo, hi] and map affinely onto [-1, 1]."""
    if lo >= hi:
        raise InvalidArgumentError(f"window requires lo < hi, got ({lo}, {hi})")
    clamped = np.clip(v.data.astype(np.float64), lo, hi)
    out = 2.0 * (clamped - lo) / (hi - lo) - 1.0
    return Volume3(out.astype(np.float32), v.spacing)


def _binary_erode(ind: np.ndarray, radius: int) -> np.ndarray:
    # Iterated unit-cross erosion equals erosion by the radius-r L1 ball.
    # border_value=1: out-of-grid treated as foreground (see module docstring).
    return ndimage.binary_erosion(
        ind, structure=l1_ball(1), iterations=radius, border_value=1
    )


def _binary_dilate(ind: np.ndarray, radius: int) -> np.ndarray:
    return ndimage.binary_dilation(
        ind, structure=l1_ball(1), iterations=radius, border_value=0
    )


def erode(m: Mask3, se: StructuringElement, label: int) -> Mask3:
    """Binary erosion of the indicator of ``label``.

    Voxels leaving the tumor label fall back to liver (they stay organ
    tissue); voxels leaving any other label fall back to background.
    """
    ind = m.data == label
    kept = _binary_erode(ind, se.radius)
    removed = ind & ~kept
    out = np.array(m.data)
    out[removed] = LIVER if label == TUMOR else BACKGROUND
    return Mask3(out, m.spacing)


def dilate(m: Mask3, se: StructuringElement, label: int) -> Mask3:
    """Binary dilation of the indicator of ``label``.

    Grown voxels take ``label`` unless the voxel currently holds a
    higher-precedence label (tumor > liver > background).
    """
    ind = m.data == label
    grown = _binary_dilate(ind, se.radius)
    out = np.array(m.data)
    writable = grown & (m.data < label)
    out[writable] = label
    return Mask3(out, m.spacing)


def gaussian_blur(v: Volume3, sigma: float) -> Volume3:
    """Separable Gaussian blur, kernel truncated at 3 sigma, reflective edges.

    sigma = 0 is the identity; reflective padding plus the renormalized
    kernel preserve the volume mean.
    """
    if sigma < 0:
        raise InvalidArgumentError("sigma must be >= 0")
    if sigma == 0:
        return v
    out = ndimage.gaussian_filter(
        v.data.astype(np.float64), sigma=sigma, truncate=3.0, mode="reflect"
    )
    return Volume3(out.astype(np.float32), v.spacing)


def connected_components(m: Mask3, label: int, min_size: int = 0) -> list[np.ndarray]:
    """26-connectivity components of ``label``, size-filtered and sorted.

    Returns one (n_i, 3) voxel-index array per kept component, largest
    first; components smaller than ``min_size`` are dropped (threshold
    inclusive: a component of exactly ``min_size`` voxels is kept).
    """
    if min_size < 0:
        raise InvalidArgumentError("min_size must be >= 0")
    ind = m.data == label
    labeled, n = ndimage.label(ind, structure=np.ones((3, 3, 3), dtype=bool))
    comps = []
    for i in range(1, n + 1):
        coords = np.argwhere(labeled == i)
        if len(coords) >= min_size:
            comps.append(coords)
    comps.sort(key=len, reverse=True)
    return comps


def crop_patch(
    v: Volume3,
    m: Mask3,
    size,
    around_foreground: bool = True,
    seed: int = 0,
) -> tuple[Volume3, Mask3]:
    """Deterministic random crop of matching volume/mask patches.

    The patch centers on a uniformly sampled tumor voxel when
    ``around_foreground`` is set, otherwise on a uniformly sampled grid
    voxel. Along axes where the patch fits, the window clamps into the
    grid (so size == dims returns the full volume); where it does not,
    out-of-grid regions pad with -1 (volume) and 0 (mask). For foreground
    voxels at least size/2 from every border the sampled voxel is exactly
    the patch center.
    """
    if isinstance(size, int):
        size = (size, size, size)
    size = tuple(int(s) for s in size)
    if any(s < 1 for s in size):
        raise InvalidArgumentError("patch size must be >= 1 per axis")
    if v.dims != m.dims:
        raise InvalidArgumentError("volume and mask dims differ")

    rng = np.random.default_rng(seed)
    if around_foreground:
        fg = np.argwhere(m.data == TUMOR)
        if len(fg) == 0:
            raise NoForegroundError("around_foreground crop on a mask with no tumor voxels")
        center = fg[rng.integers(len(fg))]
    else:
        center = np.array([rng.integers(d) for d in v.dims])

    vol_out = np.full(size, -1.0, dtype=np.float32)
    mask_out = np.zeros(size, dtype=np.uint8)
    src_lo, src_hi, dst_lo, dst_hi = [], [], [], []
    for ax in range(3):
        start = int(center[ax]) - size[ax] // 2
        if size[ax] <= v.dims[ax]:
            start = min(max(start, 0), v.dims[ax] - size[ax])
        s_lo = max(0, start)
        s_hi = min(v.dims[ax], start + size[ax])
        src_lo.append(s_lo)
        src_hi.append(s_hi)
        dst_lo.append(s_lo - start)
        dst_hi.append(s_lo - start + max(0, s_hi - s_lo))
    if all(src_hi[i] > src_lo[i] for i in range(3)):
        src = tuple(slice(src_lo[i], src_hi[i]) for i in range(3))
        dst = tuple(slice(dst_lo[i], dst_hi[i]) for i in range(3))
        vol_out[dst] = v.data[src]
        mask_out[dst] = m.data[src]
    return Volume3(vol_out, v.spacing), Mask3(mask_out, m.spacing)


# --- MVOL on-disk format ---------------------------------------------------
#
# One JSON sidecar header plus one raw little-endian binary payload:
#   <name>.mvol          header: dims, spacing, dtype (f32|u8), order,
#                        byte_order, payload (relative payload filename)
#   <name>.mvol.bin[.gz] payload, x-fastest voxel order, optionally gzipped.

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _save_grid(data: np.ndarray, spacing, path: Path, dtype: str, compress: bool) -> None:
    path = Path(path)
    payload_name = path.name + (".bin.gz" if compress else ".bin")
    header = {
        "dims": list(data.shape),
        "spacing": [float(s) for s in spacing],
        "dtype": dtype,
        "order": "x-fastest",
        "byte_order": "little-endian",
        "payload": payload_name,
    }
    raw = np.asarray(data, dtype=_DTYPES[dtype]).ravel(order="F").tobytes()
    if compress:
        # mtime pinned so identical grids produce identical bytes.
        raw = gzip.compress(raw, mtime=0)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(header, sort_keys=True) + "\n")
    (path.parent / payload_name).write_bytes(raw)


def _load_grid(path: Path) -> tuple[np.ndarray, tuple[float, float, float], str]:
    path = Path(path)
    header = json.loads(path.read_text())
    dtype = header["dtype"]
    if dtype not in _DTYPES:
        raise InvalidArgumentError(f"unsupported MVOL dtype {dtype!r}")
    payload = path.parent / header.get("payload", path.name + ".bin")
    candidates = [payload, payload.with_name(payload.name + ".gz")]
    blob = None
    for cand in candidates:
        if cand.exists():
            blob = cand.read_bytes()
            break
    if blob is None:
        raise FileNotFoundError(f"MVOL payload not found for {path}")
    if blob[:2] == b"\x1f\x8b":
        blob = gzip.decompress(blob)
    dims = tuple(int(d) for d in header["dims"])
    data = np.frombuffer(blob, dtype=_DTYPES[dtype]).reshape(dims, order="F")
    return data, tuple(float(s) for s in header["spacing"]), dtype


def save_volume(v: Volume3, path, compress: bool = False) -> None:
    _save_grid(v.data, v.spacing, Path(path), "f32", compress)


def load_volume(path) -> Volume3:
    data, spacing, dtype = _load_grid(Path(path))
    if dtype != "f32":
        raise InvalidArgumentError(f"expected f32 volume, header says {dtype!r}")
    return Volume3(data.astype(np.float32), spacing)


def save_mask(m: Mask3, path, compress: bool = False) -> None:
    _save_grid(m.data, m.spacing, Path(path), "u8", compress)


def load_mask(path) -> Mask3:
    data, spacing, dtype = _load_grid(Path(path))
    if dtype != "u8":
        raise InvalidArgumentError(f"expected u8 mask, header says {dtype!r}")
    return Mask3(data, spacing)
