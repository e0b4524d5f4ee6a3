"""Synthetic scene generation for controlled evaluation.

Builds textured stereo pairs with known piecewise-planar disparity, so
recovered planes can be scored against ground truth.  The renderer runs
the correspondence convention of the stereo model in reverse: the right
image at integer column u receives the left texture at column u + d via
a scanline forward warp with a nearest-wins rule at fold-overs, and
disoccluded holes are filled with fresh noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imgio import Image
from .mcmc import as_generator
from .stereo import PlaneParams, plane_disparity

__all__ = [
    "noise_texture",
    "quadrant_planar_scene",
    "layered_disparity",
    "render_stereo_pair",
    "patch_depth_scene",
    "write_stereo_corpus",
    "MotionScene",
    "forward_motion_scene",
]


def noise_texture(rng, height: int, width: int, channels: int = 3,
                  smooth: float = 0.0) -> np.ndarray:
    """Uniform noise texture in [0.05, 0.95], optionally smoothed."""
    rng = as_generator(rng)
    tex = rng.uniform(size=(height, width, channels))
    if smooth > 0:
        tex = ndimage.uniform_filter(tex, size=(smooth, smooth, 1),
                                     mode="nearest")
        lo, hi = tex.min(), tex.max()
        tex = (tex - lo) / max(hi - lo, 1e-12)
    return 0.05 + 0.9 * tex


def quadrant_planar_scene(rng, height: int, width: int,
                          slope: float = 0.08, d_lo: float = 2.0,
                          d_hi: float = 10.0):
    """Four random disparity planes on a 2x2 quadrant layout.

    Returns (disparity, labels, planes) where planes is a dict of
    PlaneParams keyed by quadrant id.  Disparities are kept positive and
    below ``d_hi`` + a margin by construction.
    """
    rng = as_generator(rng)
    h2, w2 = height // 2, width // 2
    labels = np.zeros((height, width), dtype=int)
    labels[:h2, w2:] = 1
    labels[h2:, :w2] = 2
    labels[h2:, w2:] = 3
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    disparity = np.zeros((height, width))
    planes = {}
    for i in range(4):
        region = labels == i
        rx, ry = xs[region], ys[region]
        for _ in range(100):
            a = rng.uniform(-slope, slope)
            b = rng.uniform(-slope, slope)
            c = rng.uniform(d_lo, d_hi)
            d = a * rx + b * ry + c
            if d.min() >= 0.5 and d.max() <= d_hi + 4.0:
                break
        planes[i] = PlaneParams(a, b, c)
        disparity[region] = plane_disparity(planes[i], xs[region], ys[region])
    return disparity, labels, planes


def layered_disparity(height: int, width: int, background: float = 2.0,
                      foreground: float = 6.0, box=None) -> np.ndarray:
    """Two fronto-parallel layers: a foreground box over a background."""
    if box is None:
        box = (height // 4, 3 * height // 4, width // 4, 3 * width // 4)
    d = np.full((height, width), background)
    r0, r1, c0, c1 = box
    d[r0:r1, c0:c1] = foreground
    return d


def render_stereo_pair(texture: np.ndarray, disparity: np.ndarray,
                       rng) -> tuple[Image, Image]:
    """Render (left, right) so that left (x, y) matches right (x - d, y).

    The left image is the texture itself.  Each right column takes the
    left texture sampled at column u + d of the pixel that lands on it;
    when several left pixels land on the same right column the largest
    disparity (nearest surface) wins.  Unclaimed right columns are
    disoccluded and get fresh noise.
    """
    rng = as_generator(rng)
    texture = np.asarray(texture, dtype=float)
    if texture.ndim == 2:
        texture = texture[:, :, None]
    height, width, channels = texture.shape
    if disparity.shape != (height, width):
        raise ValueError("disparity must match texture shape")
    right = np.zeros_like(texture)
    claimed_d = np.full((height, width), -np.inf)
    src_col = np.zeros((height, width))
    for y in range(height):
        d_row = disparity[y]
        u = np.arange(width) - d_row
        ui = np.rint(u).astype(int)
        for x in range(width):
            t = ui[x]
            if 0 <= t < width and d_row[x] > claimed_d[y, t]:
                claimed_d[y, t] = d_row[x]
                src_col[y, t] = t + d_row[x]
    holes = ~np.isfinite(claimed_d)
    xs = np.clip(src_col, 0.0, width - 1.0)
    x0 = np.floor(xs).astype(int)
    frac = (xs - x0)[:, :, None]
    x1 = np.minimum(x0 + 1, width - 1)
    rows = np.arange(height)[:, None]
    right = (1.0 - frac) * texture[rows, x0] + frac * texture[rows, x1]
    right[holes] = rng.uniform(0.05, 0.95, size=(int(holes.sum()), channels))
    return Image(texture.copy()), Image(right)


def patch_depth_scene(rng, height: int, width: int, patch: int = 12,
                      d_lo: float = 2.0, d_hi: float = 9.0,
                      noise: float = 0.08, focal_base: float = 100.0,
                      quantize: bool = True, layout: str = "grid"):
    """Scene whose appearance encodes depth: colored patches.

    Each patch's red level sets its disparity affinely (redder means
    nearer), so a linear predictor on chromatic features can recover
    depth while a per-row baseline cannot (the patch values are drawn
    fresh per scene).  Luminance noise is added equally to all channels,
    which perturbs matching detail without touching the chromatic cue.
    ``quantize`` rounds each patch to an integer disparity so rendered
    correspondences are exact copies.  ``layout`` is "grid" for a 2-d
    patch grid or "bands" for full-width horizontal bands (constant
    disparity along each row, hence no occlusion).  Returns (texture,
    disparity, depth) with depth = focal_base / disparity.
    """
    rng = as_generator(rng)
    n_rows = (height + patch - 1) // patch
    if layout == "bands":
        n_cols, patch_w = 1, width
    elif layout == "grid":
        n_cols, patch_w = (width + patch - 1) // patch, patch
    else:
        raise ValueError(f"unknown layout {layout!r}")
    red = rng.uniform(0.2, 0.9, size=(n_rows, n_cols))
    cell_r = np.repeat(np.repeat(red, patch, axis=0), patch_w, axis=1)
    cell_r = cell_r[:height, :width]
    disparity = d_lo + (d_hi - d_lo) * (cell_r - 0.2) / 0.7
    if quantize:
        disparity = np.rint(disparity)
    texture = np.empty((height, width, 3))
    texture[:, :, 0] = cell_r
    texture[:, :, 1] = 0.5
    texture[:, :, 2] = 0.5
    texture += rng.uniform(-noise, noise, size=(height, width))[:, :, None]
    texture = np.clip(texture, 0.02, 0.98)
    return texture, disparity, focal_base / disparity


def write_stereo_corpus(root, scenes, rng) -> None:
    """Write pair folders (left.ppm, right.ppm, gt.pfm with depth).

    ``scenes`` is an iterable of (texture, disparity, depth) triples.
    """
    from pathlib import Path

    from .imgio import save_image, save_pfm

    rng = as_generator(rng)
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for i, (texture, disparity, depth) in enumerate(scenes):
        sub = root / f"pair{i:03d}"
        sub.mkdir(exist_ok=True)
        left, right = render_stereo_pair(texture, disparity, rng)
        save_image(left, sub / "left.ppm")
        save_image(right, sub / "right.ppm")
        save_pfm(depth.astype(np.float32), sub / "gt.pfm")


# ----------------------------------------------------------------------
# forward-motion sequences with exact geometry
# ----------------------------------------------------------------------


@dataclass
class MotionScene:
    """Two consecutive stereo pairs of a scene translating along the
    camera axis, with exact per-pixel ground truth for the first left
    frame.

    ``velocity`` holds the dimensionless per-frame approach rate
    v = (depth change per frame) / (focal * baseline), so the radial
    flow of a pixel at disparity d is r -> r / (1 - d v).
    """

    left0: Image
    right0: Image
    left1: Image
    right1: Image
    disparity: np.ndarray
    velocity: np.ndarray
    labels: np.ndarray
    epipole: tuple[float, float]
    focal: float
    baseline: float


def _wave_texture(rng, base: float, depth: float, focal: float,
                  n_waves: int = 3):
    """Smooth analytic texture with image-plane wavelengths of 4.5 to 18
    pixels when viewed at ``depth``, split between a fine band (sharp
    stereo matching) and a coarse band (distinctive corner patches).
    Being an exact function of world coordinates, it can be sampled at
    any zoom without interpolation."""
    amps = rng.uniform(0.5, 1.0, size=n_waves)
    amps *= 0.22 / amps.sum()
    waves = []
    for m in range(n_waves):
        if m % 2 == 0:
            lam_px = rng.uniform(4.5, 7.0)
        else:
            lam_px = rng.uniform(9.0, 18.0)
        omega = 2.0 * np.pi * focal / (lam_px * depth)
        theta = rng.uniform(0.0, np.pi)
        waves.append((amps[m], omega * np.cos(theta), omega * np.sin(theta),
                      rng.uniform(0.0, 2.0 * np.pi)))

    def tex(wx, wy):
        val = np.full_like(np.asarray(wx, dtype=float), base)
        for amp, ox, oy, phase in waves:
            val = val + amp * np.sin(ox * wx + oy * wy + phase)
        return val

    return tex


def forward_motion_scene(rng, height: int = 64, width: int = 96,
                         focal: float = 100.0, baseline: float = 2.0,
                         cam_speed: float = 2.0,
                         background_depth: float = 50.0,
                         objects=None, n_waves: int = 6) -> MotionScene:
    """Render two stereo frames of fronto-parallel surfaces approaching
    the camera.

    The camera advances ``cam_speed`` world units per frame along its
    viewing axis; each object additionally approaches at its own
    ``speed``.  ``objects`` is a list of dicts with keys ``rect``
    (world-unit X0, X1, Y0, Y1 at the principal-point-centred frame),
    ``depth`` (first-frame distance), and ``speed``.  Surfaces are
    painted far to near, so nearer objects occlude.  All intensities
    come from analytic textures, hence every rendered frame is exact
    and ground-truth flow follows the radial rule about the principal
    point.
    """
    rng = as_generator(rng)
    if objects is None:
        objects = [dict(rect=(-4.0, 4.0, -3.0, 3.0), depth=25.0, speed=3.0)]
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    fh = focal * baseline
    surfaces = [dict(rect=None, depth=background_depth, speed=0.0)]
    surfaces += [dict(o) for o in objects]
    for idx, srf in enumerate(surfaces):
        srf["tex"] = _wave_texture(
            rng, base=(0.5, 0.68, 0.34, 0.78, 0.26)[idx % 5],
            depth=srf["depth"], focal=focal, n_waves=n_waves)
        srf["rate"] = cam_speed + srf["speed"]
        if srf["depth"] - srf["rate"] <= 1e-6:
            raise ValueError("surface passes through the camera by frame 1")

    ys, xs = np.mgrid[0:height, 0:width].astype(float)

    def render(tau, cam_x):
        gray = np.zeros((height, width))
        label = np.zeros((height, width), dtype=int)
        depth = np.zeros((height, width))
        # far-to-near paint order; background first regardless
        order = sorted(range(len(surfaces)),
                       key=lambda i: -(surfaces[i]["depth"]
                                       - tau * surfaces[i]["rate"]))
        order.remove(0)
        for idx in [0] + order:
            srf = surfaces[idx]
            z = srf["depth"] - tau * srf["rate"]
            wx = (xs - cx) * z / focal + cam_x
            wy = (ys - cy) * z / focal
            if srf["rect"] is None:
                mask = np.ones((height, width), dtype=bool)
            else:
                x0, x1, y0, y1 = srf["rect"]
                mask = (wx >= x0) & (wx <= x1) & (wy >= y0) & (wy <= y1)
            gray[mask] = srf["tex"](wx[mask], wy[mask])
            label[mask] = idx
            depth[mask] = z
        return np.clip(gray, 0.02, 0.98), label, depth

    frames = {}
    for tau in (0, 1):
        for side, cam_x in (("left", 0.0), ("right", baseline)):
            gray, lab, dep = render(tau, cam_x)
            frames[(tau, side)] = Image(np.repeat(gray[:, :, None], 3, axis=2))
            if tau == 0 and side == "left":
                labels0, depth0 = lab, dep
    rates = np.array([srf["rate"] for srf in surfaces])
    return MotionScene(
        left0=frames[(0, "left")], right0=frames[(0, "right")],
        left1=frames[(1, "left")], right1=frames[(1, "right")],
        disparity=fh / depth0, velocity=rates[labels0] / fh,
        labels=labels0, epipole=(cx, cy), focal=focal, baseline=baseline)
