import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taceplan.errors import InvalidArgumentError, NoForegroundError
from taceplan.voxel import (
    LIVER,
    TUMOR,
    Mask3,
    StructuringElement,
    Volume3,
    connected_components,
    crop_patch,
    dilate,
    erode,
    gaussian_blur,
    l1_ball,
    load_mask,
    load_volume,
    resample,
    save_mask,
    save_volume,
    window_normalize,
)


def vol(data, spacing=(1, 1, 1)):
    return Volume3(np.asarray(data, dtype=np.float32), spacing)


# --- resample ---------------------------------------------------------------


def trilinear_oracle(data, spacing, target):
    """Brute-force cell-centered trilinear interpolation with edge clamp."""
    dims = data.shape
    new_dims = tuple(max(1, int(round(dims[i] * spacing[i] / target[i]))) for i in range(3))
    out = np.zeros(new_dims)
    for i in range(new_dims[0]):
        for j in range(new_dims[1]):
            for k in range(new_dims[2]):
                pos = [
                    (idx + 0.5) * target[ax] / spacing[ax] - 0.5
                    for ax, idx in enumerate((i, j, k))
                ]
                acc = 0.0
                base = [int(np.floor(p)) for p in pos]
                frac = [p - b for p, b in zip(pos, base)]
                for dx in (0, 1):
                    for dy in (0, 1):
                        for dz in (0, 1):
                            w = (
                                (frac[0] if dx else 1 - frac[0])
                                * (frac[1] if dy else 1 - frac[1])
                                * (frac[2] if dz else 1 - frac[2])
                            )
                            sx = min(max(base[0] + dx, 0), dims[0] - 1)
                            sy = min(max(base[1] + dy, 0), dims[1] - 1)
                            sz = min(max(base[2] + dz, 0), dims[2] - 1)
                            acc += w * data[sx, sy, sz]
                out[i, j, k] = acc
    return out


def test_resample_identity():
    rng = np.random.default_rng(0)
    v = vol(rng.uniform(-1, 1, size=(5, 4, 3)))
    out = resample(v, (1, 1, 1))
    np.testing.assert_array_equal(out.data, v.data)


def test_resample_constant():
    v = vol(np.full((6, 5, 4), 0.5))
    out = resample(v, (2.0, 1.3, 0.7))
    np.testing.assert_allclose(out.data, 0.5, atol=1e-6)


def test_resample_ramp_matches_oracle():
    data = np.zeros((4, 1, 1), dtype=np.float32)
    data[:, 0, 0] = [0, 1, 2, 3]
    v = vol(data)
    out = resample(v, (2, 1, 1))
    expected = trilinear_oracle(data.astype(np.float64), (1, 1, 1), (2, 1, 1))
    np.testing.assert_allclose(out.data, expected, atol=1e-6)


def test_resample_random_matches_oracle():
    rng = np.random.default_rng(3)
    data = rng.uniform(-1, 1, size=(6, 5, 4))
    v = vol(data, spacing=(1.0, 0.8, 1.5))
    out = resample(v, (1.3, 1.0, 1.0))
    expected = trilinear_oracle(data, (1.0, 0.8, 1.5), (1.3, 1.0, 1.0))
    np.testing.assert_allclose(out.data, expected, atol=1e-5)
    assert out.data.min() >= data.min() - 1e-6 and out.data.max() <= data.max() + 1e-6


def test_resample_bad_spacing():
    with pytest.raises(InvalidArgumentError):
        resample(vol(np.zeros((2, 2, 2))), (0, 1, 1))


# --- window_normalize ---------------------------------------------------------


def test_window_endpoints_and_midpoint():
    v = vol(np.array([[[-175.0, 600.0, 212.5, -500.0, 1000.0]]]))
    out = window_normalize(v, -175, 600)
    np.testing.assert_allclose(out.data[0, 0], [-1.0, 1.0, 0.0, -1.0, 1.0], atol=1e-6)


def test_window_idempotent_on_windowed():
    rng = np.random.default_rng(1)
    v = vol(rng.uniform(-200, 700, size=(4, 4, 4)))
    once = window_normalize(v, -175, 600)
    twice = window_normalize(once, -1, 1)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-6)


def test_window_bad_range():
    with pytest.raises(InvalidArgumentError):
        window_normalize(vol(np.zeros((2, 2, 2))), 5, 5)


# --- morphology ---------------------------------------------------------------


def test_erode_cube_to_center():
    m = np.zeros((7, 7, 7), dtype=np.uint8)
    m[2:5, 2:5, 2:5] = TUMOR
    out = erode(Mask3(m), StructuringElement(1), TUMOR)
    assert out.count(TUMOR) == 1
    assert out.data[3, 3, 3] == TUMOR
    # eroded-away tumor voxels fall back to liver
    assert out.data[2, 2, 2] == LIVER


def test_dilate_point_to_cross():
    m = np.zeros((5, 5, 5), dtype=np.uint8)
    m[2, 2, 2] = TUMOR
    out = dilate(Mask3(m), StructuringElement(1), TUMOR)
    assert out.count(TUMOR) == 7
    expected = {(2, 2, 2), (1, 2, 2), (3, 2, 2), (2, 1, 2), (2, 3, 2), (2, 2, 1), (2, 2, 3)}
    assert set(map(tuple, np.argwhere(out.data == TUMOR))) == expected


def test_dilate_precedence_never_overwrites_tumor():
    m = np.zeros((5, 5, 5), dtype=np.uint8)
    m[2, 2, 2] = LIVER
    m[2, 2, 3] = TUMOR
    out = dilate(Mask3(m), StructuringElement(1), LIVER)
    assert out.data[2, 2, 3] == TUMOR


def brute_morph(ind, radius, op):
    """Direct-definition erosion/dilation with the documented conventions:
    erosion reads out-of-grid as foreground, dilation as background."""
    offsets = np.argwhere(l1_ball(radius)) - radius
    out = np.zeros_like(ind)
    dims = ind.shape
    for v in np.ndindex(dims):
        vals = []
        for off in offsets:
            q = np.add(v, off)
            inside = all(0 <= q[a] < dims[a] for a in range(3))
            vals.append(ind[tuple(q)] if inside else (op == "erode"))
        out[v] = all(vals) if op == "erode" else any(vals)
    return out


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_erode_dilate_duality_and_oracle(seed):
    rng = np.random.default_rng(seed)
    ind = rng.random((8, 8, 8)) < 0.4
    m = Mask3((ind * TUMOR).astype(np.uint8))
    se = StructuringElement(1)
    eroded = erode(m, se, TUMOR).data == TUMOR
    dilated = dilate(m, se, TUMOR).data == TUMOR
    np.testing.assert_array_equal(eroded, brute_morph(ind, 1, "erode"))
    np.testing.assert_array_equal(dilated, brute_morph(ind, 1, "dilate"))
    # duality on the indicator grid
    comp = Mask3(((~ind) * TUMOR).astype(np.uint8))
    dual = ~(dilate(comp, se, TUMOR).data == TUMOR)
    np.testing.assert_array_equal(eroded, dual)


def test_closing_contains_blob():
    rng = np.random.default_rng(7)
    ind = rng.random((10, 10, 10)) < 0.35
    m = Mask3((ind * TUMOR).astype(np.uint8))
    se = StructuringElement(1)
    closed = erode(dilate(m, se, TUMOR), se, TUMOR).data == TUMOR
    brute = brute_morph(brute_morph(ind, 1, "dilate"), 1, "erode")
    np.testing.assert_array_equal(closed, brute)
    assert np.all(closed[ind])  # closing is extensive


# --- gaussian blur -------------------------------------------------------------


def test_blur_sigma_zero_identity():
    rng = np.random.default_rng(2)
    v = vol(rng.uniform(-1, 1, (5, 5, 5)))
    assert gaussian_blur(v, 0.0) is v


def test_blur_constant_unchanged():
    v = vol(np.full((6, 6, 6), 0.3))
    np.testing.assert_allclose(gaussian_blur(v, 1.5).data, 0.3, atol=1e-6)


def test_blur_impulse_matches_kernel_outer_product():
    n = 13
    data = np.zeros((n, n, n))
    data[6, 6, 6] = 1.0
    out = gaussian_blur(vol(data), 1.0)
    radius = int(3.0 * 1.0 + 0.5)
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * x**2)
    k /= k.sum()
    expected = k[:, None, None] * k[None, :, None] * k[None, None, :]
    sub = out.data[6 - radius : 6 + radius + 1, 6 - radius : 6 + radius + 1, 6 - radius : 6 + radius + 1]
    np.testing.assert_allclose(sub, expected, atol=1e-6)


def test_blur_preserves_mean():
    rng = np.random.default_rng(5)
    v = vol(rng.uniform(-1, 1, (9, 8, 7)))
    out = gaussian_blur(v, 1.7)
    assert abs(float(out.data.mean()) - float(v.data.mean())) < 1e-5


def test_blur_negative_sigma():
    with pytest.raises(InvalidArgumentError):
        gaussian_blur(vol(np.zeros((3, 3, 3))), -0.1)


# --- connected components -------------------------------------------------------


def test_components_empty():
    assert connected_components(Mask3(np.zeros((4, 4, 4), dtype=np.uint8)), TUMOR) == []


def test_components_size_filter():
    m = np.zeros((20, 20, 20), dtype=np.uint8)
    m[1:9, 1:9, 1:8] = TUMOR  # gap below keeps blobs 26-disconnected
    m[12:17, 12:17, 12:16] = TUMOR
    big, small = 8 * 8 * 7, 5 * 5 * 4
    comps = connected_components(Mask3(m), TUMOR, min_size=300)
    assert [len(c) for c in comps] == [big]
    assert small < 300 <= big


def test_components_threshold_inclusive():
    m = np.zeros((12, 12, 12), dtype=np.uint8)
    m[1:11, 1:11, 1:4] = TUMOR
    assert m.sum() // TUMOR == 300
    comps = connected_components(Mask3(m), TUMOR, min_size=300)
    assert len(comps) == 1 and len(comps[0]) == 300


def test_components_partition():
    rng = np.random.default_rng(11)
    m = Mask3(((rng.random((12, 12, 12)) < 0.2) * TUMOR).astype(np.uint8))
    comps = connected_components(m, TUMOR, min_size=0)
    assert sum(len(c) for c in comps) == m.count(TUMOR)
    seen = set()
    for c in comps:
        for voxelxyz in map(tuple, c):
            assert voxelxyz not in seen
            seen.add(voxelxyz)


# --- crop_patch -----------------------------------------------------------------


def _phantom_pair():
    rng = np.random.default_rng(4)
    data = rng.uniform(-1, 1, (12, 12, 12)).astype(np.float32)
    m = np.zeros((12, 12, 12), dtype=np.uint8)
    m[4:8, 4:8, 4:8] = TUMOR
    return Volume3(data), Mask3(m)


def test_crop_full_volume():
    v, m = _phantom_pair()
    for seed in range(5):
        pv, pm = crop_patch(v, m, (12, 12, 12), around_foreground=False, seed=seed)
        np.testing.assert_array_equal(pv.data, v.data)
        np.testing.assert_array_equal(pm.data, m.data)


def test_crop_deterministic():
    v, m = _phantom_pair()
    a = crop_patch(v, m, 6, around_foreground=True, seed=42)
    b = crop_patch(v, m, 6, around_foreground=True, seed=42)
    np.testing.assert_array_equal(a[0].data, b[0].data)
    np.testing.assert_array_equal(a[1].data, b[1].data)


def test_crop_foreground_centers():
    v, m = _phantom_pair()
    for seed in range(1000):
        _, pm = crop_patch(v, m, 5, around_foreground=True, seed=seed)
        assert pm.data[2, 2, 2] == TUMOR


def test_crop_padding_values():
    v, m = _phantom_pair()
    pv, pm = crop_patch(v, m, 30, around_foreground=True, seed=1)
    assert pv.dims == (30, 30, 30)
    assert pv.data[0, 0, 0] == -1.0
    assert pm.data[0, 0, 0] == 0


def test_crop_no_foreground():
    v, _ = _phantom_pair()
    empty = Mask3(np.zeros((12, 12, 12), dtype=np.uint8))
    with pytest.raises(NoForegroundError):
        crop_patch(v, empty, 4, around_foreground=True, seed=0)


# --- MVOL I/O --------------------------------------------------------------------


def test_mvol_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    v = vol(rng.uniform(-1, 1, (5, 6, 7)), spacing=(0.8, 0.8, 3.0))
    save_volume(v, tmp_path / "x.mvol")
    back = load_volume(tmp_path / "x.mvol")
    np.testing.assert_array_equal(back.data, v.data)
    assert back.spacing == v.spacing

    m = Mask3(((rng.random((5, 6, 7)) < 0.3) * TUMOR).astype(np.uint8), spacing=(0.8, 0.8, 3.0))
    save_mask(m, tmp_path / "m.mvol")
    np.testing.assert_array_equal(load_mask(tmp_path / "m.mvol").data, m.data)


def test_mvol_gzip_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    v = vol(rng.uniform(-1, 1, (4, 3, 2)))
    save_volume(v, tmp_path / "z.mvol", compress=True)
    assert (tmp_path / "z.mvol.bin.gz").exists()
    np.testing.assert_array_equal(load_volume(tmp_path / "z.mvol").data, v.data)


def test_mvol_x_fastest_order(tmp_path):
    data = np.arange(8, dtype=np.float32).reshape(2, 2, 2)  # [x,y,z]
    save_volume(Volume3(data), tmp_path / "o.mvol")
    raw = np.frombuffer((tmp_path / "o.mvol.bin").read_bytes(), dtype="<f4")
    # x varies fastest in the byte stream
    expected = [data[x, y, z] for z in range(2) for y in range(2) for x in range(2)]
    np.testing.assert_array_equal(raw, expected)
    header = json.loads((tmp_path / "o.mvol").read_text())
    assert header["order"] == "x-fastest" and header["byte_order"] == "little-endian"


def test_mvol_dtype_mismatch(tmp_path):
    v = vol(np.zeros((2, 2, 2)))
    save_volume(v, tmp_path / "v.mvol")
    with pytest.raises(InvalidArgumentError):
        load_mask(tmp_path / "v.mvol")


# --- invariants ------------------------------------------------------------------


def test_volume_immutable():
    v = vol(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 5


def test_mask_rejects_bad_labels():
    with pytest.raises(InvalidArgumentError):
        Mask3(np.full((2, 2, 2), 7, dtype=np.uint8))
