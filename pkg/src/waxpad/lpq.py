"""Local Phase Quantization codes and the multi-block color variant.

Each valid pixel gets an 8-bit code built from the signs of four local
short-term Fourier coefficients computed over an MxM window at the lowest
nonzero frequencies. The multi-block variant tiles the Y/Cb/Cr planes with a
grid, codes each block independently, and concatenates the normalized
256-bin code histograms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import ColorPlaneSet, RasterImage


class LpqError(Exception):
    pass


# Spatial correlation coefficient of the whitening model used when
# config.decorrelation is on (first-order Markov model over window pixels).
DECORRELATION_RHO = 0.9


@dataclass(frozen=True)
class LpqConfig:
    """window_size must be odd; the analysis frequency is 1 / window_size."""

    window_size: int = 5
    decorrelation: bool = False

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise LpqError(f"window_size must be an odd integer >= 3, got {self.window_size}")

    @property
    def frequency(self) -> float:
        return 1.0 / self.window_size


@dataclass
class LpqCodeMap:
    """Codes for the valid (fully covered) region: dims shrink by window_size - 1."""

    codes: np.ndarray  # 2-d uint8

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]


@dataclass
class BlockHistogramFeature:
    """Concatenated per-channel, per-block code histograms (channel-major, then
    blocks in row-major order); each 256-bin segment is normalized to sum 1."""

    grid: tuple[int, int]
    channels: int
    values: np.ndarray

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def _corr1d_valid(arr: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """Valid-mode correlation along one axis: out[i] = sum_k arr[i+k] * taps[k]."""
    n = arr.shape[axis]
    m = taps.shape[0]
    out_len = n - m + 1
    shape = list(arr.shape)
    shape[axis] = out_len
    out = np.zeros(shape, dtype=np.result_type(arr.dtype, taps.dtype))
    index = [slice(None)] * arr.ndim
    for k in range(m):
        index[axis] = slice(k, k + out_len)
        out += taps[k] * arr[tuple(index)]
    return out


def _corr1d_zero_dc(arr: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """Valid correlation with a zero-sum filter, applied by summation by parts.

    Filters whose taps sum to zero are rewritten as a first difference of the
    input followed by correlation with the tap prefix sums. Algebraically
    identical, but constant regions difference to exact zeros, so flat inputs
    produce responses that are exactly 0.0 rather than rounding residue.
    """
    prefix = np.cumsum(taps)[:-1]  # final prefix sum is the (zero) tap total
    index_a = [slice(None)] * arr.ndim
    index_b = [slice(None)] * arr.ndim
    index_a[axis] = slice(0, arr.shape[axis] - 1)
    index_b[axis] = slice(1, arr.shape[axis])
    diff = arr[tuple(index_a)] - arr[tuple(index_b)]
    return _corr1d_valid(diff, prefix, axis)


def _stft_kernels(window_size: int) -> tuple[np.ndarray, np.ndarray]:
    r = window_size // 2
    offsets = np.arange(-r, r + 1)
    ones = np.ones(window_size)
    wave = np.exp(-2j * np.pi * offsets / window_size)
    return ones, wave


def _frequency_responses(plane: np.ndarray, config: LpqConfig) -> np.ndarray:
    """Complex responses at u1=(a,0), u2=(0,a), u3=(a,a), u4=(a,-a).

    Axis convention: rows are y, columns are x, and the response at pixel p is
    sum_d plane[p + d] * exp(-2j*pi*(ux*dx + uy*dy)) over window offsets d.
    """
    m = config.window_size
    if plane.shape[0] < m or plane.shape[1] < m:
        raise LpqError(
            f"plane {plane.shape[1]}x{plane.shape[0]} is smaller than the "
            f"{m}x{m} analysis window"
        )
    ones, wave = _stft_kernels(m)
    rows_box = _corr1d_valid(plane, ones, axis=0)
    rows_wave = _corr1d_zero_dc(plane, wave, axis=0)
    f1 = _corr1d_zero_dc(rows_box, wave, axis=1)  # u = (a, 0)
    f2 = _corr1d_valid(rows_wave, ones, axis=1)  # u = (0, a)
    f3 = _corr1d_zero_dc(rows_wave, wave, axis=1)  # u = (a, a)
    # u = (a, -a): the separable passes give F((-a, a)); for real input the
    # response at the negated frequency is the exact complex conjugate.
    f4 = np.conj(_corr1d_zero_dc(rows_wave, np.conj(wave), axis=1))
    return np.stack([f1, f2, f3, f4])


def _decorrelation_transform(config: LpqConfig) -> np.ndarray:
    """Whitening matrix for the 8 coefficient components.

    Window pixels are modeled with covariance rho^distance; the induced 8x8
    coefficient covariance is eigen-decomposed and the (sign-fixed)
    eigenvector basis is used as the decorrelating transform.
    """
    m = config.window_size
    r = m // 2
    coords = np.array([(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)])
    dist = np.linalg.norm(coords[:, None, :] - coords[None, :, :], axis=-1)
    cov = DECORRELATION_RHO**dist

    freqs = np.array([(1, 0), (0, 1), (1, 1), (1, -1)], dtype=np.float64) / m  # (ux, uy)
    phase = 2 * np.pi * (coords[:, 1][None, :] * freqs[:, 0][:, None]
                         + coords[:, 0][None, :] * freqs[:, 1][:, None])
    kernel = np.exp(-1j * phase)  # rows: F1..F4 over window pixels
    basis = np.vstack([kernel.real, kernel.imag])  # bit order: Re F1..F4, Im F1..F4

    coeff_cov = basis @ cov @ basis.T
    eigvals, eigvecs = np.linalg.eigh(coeff_cov)
    order = np.argsort(eigvals)[::-1]
    vecs = eigvecs[:, order]
    # Fix eigenvector signs deterministically: largest-magnitude entry positive.
    for j in range(vecs.shape[1]):
        pivot = np.argmax(np.abs(vecs[:, j]))
        if vecs[pivot, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return vecs.T


def lpq_code_map(plane: RasterImage | np.ndarray, config: LpqConfig = LpqConfig()) -> LpqCodeMap:
    """8-bit phase codes for every fully covered pixel of a single-channel plane.

    Bit j is 1 iff component j of [Re F1..F4, Im F1..F4] is strictly positive,
    and the code is sum(bit_j * 2^j). Exact zeros therefore quantize to 0,
    which makes constant inputs map to code 0 everywhere.
    """
    if isinstance(plane, RasterImage):
        if plane.channels != 1:
            raise LpqError("lpq_code_map expects a single-channel plane")
        arr = plane.plane()
    else:
        arr = np.asarray(plane, dtype=np.float64)
        if arr.ndim != 2:
            raise LpqError("lpq_code_map expects a 2-d plane")
    responses = _frequency_responses(arr, config)
    components = np.concatenate([responses.real, responses.imag])  # (8, h', w')
    if config.decorrelation:
        transform = _decorrelation_transform(config)
        flat = components.reshape(8, -1)
        components = (transform @ flat).reshape(components.shape)
    bits = components > 0
    weights = (1 << np.arange(8)).reshape(8, 1, 1)
    codes = np.sum(bits * weights, axis=0).astype(np.uint8)
    return LpqCodeMap(codes=codes)


def lpq_histogram(code_map: LpqCodeMap) -> np.ndarray:
    """Normalized 256-bin histogram of the code map."""
    if code_map.codes.size == 0:
        raise LpqError("cannot build a histogram from an empty code map")
    counts = np.bincount(code_map.codes.ravel(), minlength=256).astype(np.float64)
    return counts / counts.sum()


def _block_edges(extent: int, blocks: int) -> list[tuple[int, int]]:
    # Floor-division block size; remainder pixels go to the last block.
    size = extent // blocks
    edges = []
    for i in range(blocks):
        start = i * size
        stop = (i + 1) * size if i < blocks - 1 else extent
        edges.append((start, stop))
    return edges


def mb_lpq(
    planes: ColorPlaneSet,
    grid: tuple[int, int] = (3, 3),
    config: LpqConfig = LpqConfig(),
) -> BlockHistogramFeature:
    """Multi-block LPQ over the three color planes.

    Every plane is partitioned into grid blocks, each block is coded
    independently, and the histograms are concatenated channel-major with
    blocks in row-major order. Output dim = channels * rows * cols * 256.
    """
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise LpqError("grid must have at least one block per axis")
    segments: list[np.ndarray] = []
    for image in planes.planes:
        arr = image.plane()
        row_edges = _block_edges(arr.shape[0], rows)
        col_edges = _block_edges(arr.shape[1], cols)
        for r0, r1 in row_edges:
            for c0, c1 in col_edges:
                block = arr[r0:r1, c0:c1]
                if block.shape[0] < config.window_size or block.shape[1] < config.window_size:
                    raise LpqError(
                        f"block {block.shape[1]}x{block.shape[0]} is smaller than the "
                        f"{config.window_size}x{config.window_size} analysis window"
                    )
                segments.append(lpq_histogram(lpq_code_map(block, config)))
    return BlockHistogramFeature(grid=grid, channels=3, values=np.concatenate(segments))
