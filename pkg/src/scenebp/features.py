"""Per-pixel image features.

Provides the 9-dim color+gradient pixel descriptor used by the matching
cost, a 24-dim multi-scale histogram-of-oriented-gradients descriptor
used by the texture cost, a full-image orientation histogram used to
probe texture foreshortening, and a 17-features-per-scale filter-bank
descriptor (Laws masks, oriented edges, chroma means) used by the
single-image depth model.

All gradients are central differences with replicated borders.
Orientations are unsigned local edge directions in [0, 180) degrees,
i.e. perpendicular to the intensity gradient, so a vertical step edge
lands in the bin containing 90 degrees.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .imgio import Image, luminance

__all__ = [
    "pixel_features",
    "hog_pyramid",
    "orientation_histogram",
    "monocular_features",
    "HOG_CELL_SIZES",
    "HOG_BINS",
]

HOG_CELL_SIZES = (8, 16, 32)
HOG_BINS = 8


def _central_diff(plane: np.ndarray, axis: int) -> np.ndarray:
    """Central difference along one axis with replicate padding."""
    pad = [(0, 0)] * plane.ndim
    pad[axis] = (1, 1)
    p = np.pad(plane, pad, mode="edge")
    hi = [slice(None)] * plane.ndim
    lo = [slice(None)] * plane.ndim
    hi[axis] = slice(2, None)
    lo[axis] = slice(None, -2)
    return (p[tuple(hi)] - p[tuple(lo)]) / 2.0


def pixel_features(image: Image) -> np.ndarray:
    """Return an (H, W, 9) array: 3 colors, 3 x-gradients, 3 y-gradients.

    Grayscale inputs are replicated to 3 channels first so the layout is
    uniform.  The image is expected to be bias/gain normalized.
    """
    data = image.data
    if image.channels == 1:
        data = np.repeat(data, 3, axis=2)
    gx = _central_diff(data, axis=1)
    gy = _central_diff(data, axis=0)
    return np.concatenate([data, gx, gy], axis=2)


def _edge_orientation(image: Image) -> tuple[np.ndarray, np.ndarray]:
    """Gradient magnitude and unsigned edge orientation in [0, pi)."""
    lum = luminance(image)
    gx = _central_diff(lum, axis=1)
    gy = _central_diff(lum, axis=0)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx) + 0.5 * np.pi, np.pi)
    return mag, ang


def _cell_edges(extent: int, size: int) -> np.ndarray:
    edges = np.arange(0, extent + size, size)
    edges[-1] = min(edges[-1], extent)
    if edges[-1] != extent:
        edges = np.append(edges, extent)
    return np.unique(edges)


def hog_pyramid(image: Image, cell_sizes=HOG_CELL_SIZES,
                n_bins: int = HOG_BINS) -> np.ndarray:
    """Per-pixel oriented-gradient histograms at several cell sizes.

    Gradient magnitudes are accumulated into ``n_bins`` hard-assigned
    orientation bins over [0, 180) degrees inside non-overlapping square
    cells; each cell histogram is L1 normalized (zero-energy cells stay
    all-zero) and every pixel takes the histograms of its enclosing
    cells.  Cell sums come from integral images.  Returns an array of
    shape (H, W, n_bins * len(cell_sizes)).
    """
    mag, ang = _edge_orientation(image)
    height, width = mag.shape
    bins = np.clip((ang / np.pi * n_bins).astype(int), 0, n_bins - 1)
    weighted = np.where(bins[:, :, None] == np.arange(n_bins), mag[:, :, None], 0.0)
    integral = np.zeros((height + 1, width + 1, n_bins))
    integral[1:, 1:] = weighted.cumsum(axis=0).cumsum(axis=1)

    out = np.zeros((height, width, n_bins * len(cell_sizes)))
    for k, size in enumerate(cell_sizes):
        rows = _cell_edges(height, size)
        cols = _cell_edges(width, size)
        r0, r1 = rows[:-1], rows[1:]
        c0, c1 = cols[:-1], cols[1:]
        sums = (integral[r1][:, c1] - integral[r1][:, c0]
                - integral[r0][:, c1] + integral[r0][:, c0])
        totals = sums.sum(axis=2, keepdims=True)
        hists = np.divide(sums, totals, out=np.zeros_like(sums),
                          where=totals > 0)
        per_pixel = np.repeat(np.repeat(hists, np.diff(rows), axis=0),
                              np.diff(cols), axis=1)
        out[:, :, k * n_bins:(k + 1) * n_bins] = per_pixel
    return out


def orientation_histogram(image: Image, n_bins: int = 36,
                          smooth_sigma: float = 0.0) -> np.ndarray:
    """Full-image magnitude-weighted edge-orientation histogram.

    Returns ``n_bins`` values over [0, 180) degrees, L1 normalized.
    ``smooth_sigma`` > 0 applies circular Gaussian smoothing (units of
    bins), which suppresses discretization ripple when the histogram is
    used to estimate foreshortening from the min/max ratio.
    """
    mag, ang = _edge_orientation(image)
    bins = np.clip((ang / np.pi * n_bins).astype(int), 0, n_bins - 1)
    hist = np.bincount(bins.ravel(), weights=mag.ravel(), minlength=n_bins)
    if smooth_sigma > 0:
        radius = int(np.ceil(3.0 * smooth_sigma))
        offsets = np.arange(-radius, radius + 1)
        kernel = np.exp(-0.5 * (offsets / smooth_sigma) ** 2)
        kernel /= kernel.sum()
        hist = sum(w * np.roll(hist, shift) for w, shift in zip(kernel, offsets))
    total = hist.sum()
    return hist / total if total > 0 else hist


# Filter bank for the single-image depth features: 9 separable 3x3 masks
# built from the 1-d Laws kernels (level, edge, spot) plus 6 odd
# derivative-of-Gaussian kernels spaced 30 degrees apart.
_L3 = np.array([1.0, 2.0, 1.0])
_E3 = np.array([-1.0, 0.0, 1.0])
_S3 = np.array([-1.0, 2.0, -1.0])
LAWS_MASKS = tuple(np.outer(a, b) for a in (_L3, _E3, _S3)
                   for b in (_L3, _E3, _S3))


def _oriented_edge_kernels(n_angles: int = 6, radius: int = 2) -> tuple:
    coords = np.arange(-radius, radius + 1, dtype=float)
    xs, ys = np.meshgrid(coords, coords)
    envelope = np.exp(-0.5 * (xs ** 2 + ys ** 2))
    kernels = []
    for k in range(n_angles):
        phi = np.pi * k / n_angles
        kern = (xs * np.cos(phi) + ys * np.sin(phi)) * envelope
        kern /= np.abs(kern).sum()
        kernels.append(kern)
    return tuple(kernels)


EDGE_KERNELS = _oriented_edge_kernels()
MONOCULAR_SCALES = (1, 2, 4)
HEIGHT_LEVELS = 40


def _pool(data: np.ndarray, factor: int) -> np.ndarray:
    """Block-average downsampling with edge padding to a multiple of
    ``factor``."""
    if factor == 1:
        return data
    height, width = data.shape[:2]
    pad_r = (-height) % factor
    pad_c = (-width) % factor
    pad = [(0, pad_r), (0, pad_c)] + [(0, 0)] * (data.ndim - 2)
    p = np.pad(data, pad, mode="edge")
    hh, ww = p.shape[0] // factor, p.shape[1] // factor
    p = p.reshape((hh, factor, ww, factor) + p.shape[2:])
    return p.mean(axis=(1, 3))


def _scale_responses(data: np.ndarray) -> np.ndarray:
    """Filter-bank responses for one scale: 9 Laws energies + 6 oriented
    edge energies on luminance, plus 2 chroma local means for color."""
    if data.shape[2] == 3:
        img = Image(data)
        lum = luminance(img)
        chroma = [data[:, :, 0] - lum, data[:, :, 2] - lum]
    else:
        lum = data[:, :, 0]
        chroma = []
    # remove the local average first so every mask (including the
    # all-positive level mask) responds only to local structure
    lum = lum - ndimage.uniform_filter(lum, size=5, mode="nearest")
    planes = [np.abs(ndimage.correlate(lum, m, mode="nearest"))
              for m in LAWS_MASKS]
    planes += [np.abs(ndimage.correlate(lum, k, mode="nearest"))
               for k in EDGE_KERNELS]
    planes += [ndimage.uniform_filter(c, size=3, mode="nearest")
               for c in chroma]
    return np.stack(planes, axis=2)


def monocular_features(image: Image) -> tuple[np.ndarray, np.ndarray]:
    """Multi-scale filter-bank features for single-image depth.

    Returns ``(features, height_levels)``.  Features have 17 responses
    per scale for color input (15 for grayscale, which has no chroma
    planes) at scales 1, 1/2 and 1/4, upsampled back to full resolution,
    followed by normalized (x, y) coordinates and a constant bias 1:
    54 dims for color, 48 for grayscale.  ``height_levels`` holds
    floor(40 * row / H) in 0..39 for every pixel.
    """
    height, width = image.height, image.width
    if height < HEIGHT_LEVELS:
        raise ValueError(
            f"image must have at least {HEIGHT_LEVELS} rows for height binning")
    blocks = []
    for factor in MONOCULAR_SCALES:
        resp = _scale_responses(_pool(image.data, factor))
        up = np.repeat(np.repeat(resp, factor, axis=0), factor, axis=1)
        blocks.append(up[:height, :width])
    cols = np.arange(width) / max(width - 1, 1)
    rows = np.arange(height) / max(height - 1, 1)
    xn = np.broadcast_to(cols[None, :], (height, width))[:, :, None]
    yn = np.broadcast_to(rows[:, None], (height, width))[:, :, None]
    bias = np.ones((height, width, 1))
    feats = np.concatenate(blocks + [xn, yn, bias], axis=2)
    levels = (HEIGHT_LEVELS * np.arange(height)) // height
    level_map = np.broadcast_to(levels[:, None], (height, width)).copy()
    return feats, level_map
