from __future__ import annotations

import numpy as np
import pytest

from waxpad.imaging import ColorPlaneSet, RasterImage
from waxpad.lpq import (
    LpqConfig,
    LpqError,
    lpq_code_map,
    lpq_histogram,
    mb_lpq,
)


def windowed_dft_codes(plane: np.ndarray, window_size: int) -> np.ndarray:
    """Brute-force oracle: per-window DFT at the four analysis frequencies,
    then sign quantization in the same bit order as the implementation."""
    r = window_size // 2
    a = 1.0 / window_size
    freqs = [(a, 0.0), (0.0, a), (a, a), (a, -a)]  # (ux, uy)
    h, w = plane.shape
    out = np.zeros((h - 2 * r, w - 2 * r), dtype=np.uint8)
    for y in range(r, h - r):
        for x in range(r, w - r):
            responses = []
            for ux, uy in freqs:
                acc = 0j
                for dy in range(-r, r + 1):
                    for dx in range(-r, r + 1):
                        acc += plane[y + dy, x + dx] * np.exp(
                            -2j * np.pi * (ux * dx + uy * dy)
                        )
                responses.append(acc)
            components = [f.real for f in responses] + [f.imag for f in responses]
            code = 0
            for j, value in enumerate(components):
                if value > 0:
                    code |= 1 << j
            out[y - r, x - r] = code
    return out


def planes_from(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> ColorPlaneSet:
    return ColorPlaneSet(
        y=RasterImage(y), cb=RasterImage(cb), cr=RasterImage(cr)
    )


class TestCodeMap:
    def test_constant_plane_all_zero(self):
        for value in (0.0, 128.0, 255.0, 13.25):
            codes = lpq_code_map(np.full((12, 17), value), LpqConfig(5)).codes
            assert (codes == 0).all()

    def test_valid_region_dims(self):
        codes = lpq_code_map(np.random.default_rng(0).uniform(0, 255, (20, 14)), LpqConfig(5))
        assert (codes.height, codes.width) == (16, 10)

    def test_dc_offset_invariance_integer_planes(self):
        rng = np.random.default_rng(1)
        plane = rng.integers(0, 200, size=(18, 18)).astype(np.float64)
        base = lpq_code_map(plane, LpqConfig(5)).codes
        shifted = lpq_code_map(plane + 10.0, LpqConfig(5)).codes
        np.testing.assert_array_equal(base, shifted)

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            plane = rng.uniform(0, 255, size=(16, 16))
            mine = lpq_code_map(plane, LpqConfig(5)).codes
            assert np.array_equal(mine, windowed_dft_codes(plane, 5))

    def test_oracle_agreement_other_window(self):
        rng = np.random.default_rng(3)
        plane = rng.uniform(0, 255, size=(15, 13))
        mine = lpq_code_map(plane, LpqConfig(7)).codes
        assert np.array_equal(mine, windowed_dft_codes(plane, 7))

    def test_plane_smaller_than_window(self):
        with pytest.raises(LpqError, match="smaller"):
            lpq_code_map(np.zeros((4, 9)), LpqConfig(5))

    def test_window_must_be_odd(self):
        with pytest.raises(LpqError):
            LpqConfig(window_size=4)

    def test_accepts_raster_plane(self):
        plane = RasterImage(np.random.default_rng(4).uniform(0, 255, (9, 9)))
        assert lpq_code_map(plane, LpqConfig(5)).codes.shape == (5, 5)

    def test_multichannel_rejected(self):
        with pytest.raises(LpqError):
            lpq_code_map(RasterImage(np.zeros((9, 9, 3))), LpqConfig(5))


class TestDecorrelation:
    def test_constant_still_zero(self):
        codes = lpq_code_map(np.full((12, 12), 50.0), LpqConfig(5, decorrelation=True)).codes
        assert (codes == 0).all()

    def test_deterministic_and_generally_different(self):
        rng = np.random.default_rng(5)
        plane = rng.uniform(0, 255, size=(16, 16))
        on1 = lpq_code_map(plane, LpqConfig(5, decorrelation=True)).codes
        on2 = lpq_code_map(plane, LpqConfig(5, decorrelation=True)).codes
        off = lpq_code_map(plane, LpqConfig(5)).codes
        np.testing.assert_array_equal(on1, on2)
        assert not np.array_equal(on1, off)

    def test_dc_invariance_preserved(self):
        rng = np.random.default_rng(6)
        plane = rng.integers(0, 200, size=(14, 14)).astype(np.float64)
        config = LpqConfig(5, decorrelation=True)
        np.testing.assert_array_equal(
            lpq_code_map(plane, config).codes, lpq_code_map(plane + 25.0, config).codes
        )


class TestHistogram:
    def test_concentration(self):
        from waxpad.lpq import LpqCodeMap

        hist = lpq_histogram(LpqCodeMap(codes=np.zeros((10, 10), dtype=np.uint8)))
        assert hist[0] == 1.0
        assert hist[1:].sum() == 0.0

    def test_uniform_codes(self):
        from waxpad.lpq import LpqCodeMap

        hist = lpq_histogram(LpqCodeMap(codes=np.arange(256, dtype=np.uint8).reshape(16, 16)))
        np.testing.assert_allclose(hist, 1 / 256)

    def test_sums_to_one(self):
        from waxpad.lpq import LpqCodeMap

        rng = np.random.default_rng(7)
        hist = lpq_histogram(LpqCodeMap(codes=rng.integers(0, 256, (13, 9), dtype=np.uint8)))
        assert abs(hist.sum() - 1.0) < 1e-9

    def test_empty_map_rejected(self):
        from waxpad.lpq import LpqCodeMap

        with pytest.raises(LpqError):
            lpq_histogram(LpqCodeMap(codes=np.zeros((0, 0), dtype=np.uint8)))


class TestMbLpq:
    def test_default_dim(self):
        rng = np.random.default_rng(8)
        planes = planes_from(*(rng.uniform(0, 255, (64, 64)) for _ in range(3)))
        feature = mb_lpq(planes)
        assert feature.dim == 3 * 9 * 256 == 6912

    def test_degenerate_grid_equals_plain_histogram(self):
        rng = np.random.default_rng(9)
        y = rng.uniform(0, 255, (32, 32))
        planes = planes_from(y, y, y)
        feature = mb_lpq(planes, grid=(1, 1))
        expected = lpq_histogram(lpq_code_map(y, LpqConfig(5)))
        np.testing.assert_allclose(feature.values[:256], expected)
        assert feature.dim == 3 * 256

    def test_swapping_blocks_swaps_segments(self):
        rng = np.random.default_rng(10)
        y = rng.uniform(0, 255, (64, 64))
        planes = planes_from(y, y.copy(), y.copy())
        base = mb_lpq(planes).values
        # Blocks (0,0) and (0,1) are both 21x21 at the default grid.
        swapped = y.copy()
        swapped[0:21, 0:21], swapped[0:21, 21:42] = (
            y[0:21, 21:42].copy(),
            y[0:21, 0:21].copy(),
        )
        perm = mb_lpq(planes_from(swapped, y.copy(), y.copy())).values
        np.testing.assert_allclose(perm[0:256], base[256:512])
        np.testing.assert_allclose(perm[256:512], base[0:256])
        np.testing.assert_allclose(perm[512:], base[512:])

    def test_dc_offset_invariance(self):
        rng = np.random.default_rng(11)
        arrays = [rng.integers(0, 200, (64, 64)).astype(np.float64) for _ in range(3)]
        base = mb_lpq(planes_from(*arrays)).values
        shifted = mb_lpq(planes_from(*(a + 30.0 for a in arrays))).values
        np.testing.assert_array_equal(base, shifted)

    def test_segments_normalized(self):
        rng = np.random.default_rng(12)
        planes = planes_from(*(rng.uniform(0, 255, (64, 64)) for _ in range(3)))
        values = mb_lpq(planes).values
        for start in range(0, values.shape[0], 256):
            assert abs(values[start : start + 256].sum() - 1.0) < 1e-9

    def test_block_smaller_than_window(self):
        rng = np.random.default_rng(13)
        planes = planes_from(*(rng.uniform(0, 255, (12, 12)) for _ in range(3)))
        with pytest.raises(LpqError, match="smaller"):
            mb_lpq(planes, grid=(3, 3))
