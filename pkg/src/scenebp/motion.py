"""Three-frame structure and motion on forward-moving stereo sequences.

The camera and all scene motion are assumed parallel to the viewing
axis, so every pixel slides radially away from a fixed epipole and the
whole motion field reduces to one scalar per surface: the dimensionless
approach rate v with r_{t+1} = r_t / (1 - d v) and
d_{t+1} = d / (1 - d v).  The pipeline estimates the epipole from
sparse corner matches, infers disparity planes on the stereo pair,
solves a discrete MRF over superpixels for v, and then re-scores the
planes with the added temporal data term, alternating until the
fourth-view prediction stops improving.

The held-out right frame at t+1 is never used by the estimator; it only
scores predictions (the fourth-view error), which is the module's
evaluation metric on sequences without ground truth.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .bp import max_product
from .features import pixel_features
from .graphs import FactorGraph, FiniteDomain
from .imgio import Image, luminance
from .mcmc import as_generator
from .segment import Segmentation, fh_segment
from .stereo import (InferConfig, StereoEnergyParams, disparity_from_planes,
                     infer_planes)

__all__ = [
    "Epipole",
    "EpipoleUnreliableError",
    "Match",
    "MotionParams",
    "VelocityField",
    "FrameTriple",
    "MotionResult",
    "sparse_matches",
    "estimate_epipole",
    "forward_project",
    "next_disparity",
    "velocity_cost_tables",
    "solve_velocity",
    "motion_plane_cost",
    "predict_fourth_view",
    "fourth_view_error",
    "alternate",
    "match_velocities",
    "load_frame_pairs",
    "save_velocity_pfm",
]

# Penalty for plane candidates that put 1 - d v outside the valid range
# or project almost all pixels off the frame.  Large enough to dominate
# any feasible match cost but finite, so belief propagation tables stay
# NaN-free.
INVALID_PLANE_COST = 1e9


class EpipoleUnreliableError(ValueError):
    """The match set does not pin down a unique epipole."""


@dataclass(frozen=True)
class Epipole:
    """Image location all flow rays pass through; may lie far outside
    the frame."""

    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError("epipole coordinates must be finite")

    def __iter__(self):
        return iter((self.x, self.y))


@dataclass(frozen=True)
class Match:
    """Corner correspondence (x, y) in frame t -> (x1, y1) in frame t+1."""

    x: float
    y: float
    x1: float
    y1: float
    score: float


@dataclass(frozen=True)
class MotionParams:
    """Velocity-MRF weights and label grid.

    The default grid holds ``n_labels`` uniform values on
    [-v_max / 8, v_max] with v_max = 0.8 / d_max, which anchors an exact
    zero label (index n_labels/8 - 1 of the span) while spending most of
    the range on approaching motion; d * v then stays at or below 0.8
    for disparities up to d_max.  ``velocity_labels`` overrides the grid
    outright.
    """

    lambda_v: float = 50.0
    tau_v: float = 5.0
    lambda_k: np.ndarray = field(default_factory=lambda: np.ones(9))
    n_labels: int = 64
    v_min: float | None = None
    v_max: float | None = None
    d_max: float = 32.0
    velocity_labels: np.ndarray | None = None
    prior_weight: float = 1.0
    bp_iters: int = 60
    min_visible: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "lambda_k",
                           np.asarray(self.lambda_k, dtype=float))
        if (self.lambda_v < 0 or self.tau_v < 0
                or np.any(self.lambda_k < 0)):
            raise ValueError("motion weights must be non-negative")
        if not 0.0 <= self.min_visible <= 1.0:
            raise ValueError("min_visible must be a fraction in [0, 1]")

    def labels(self) -> np.ndarray:
        if self.velocity_labels is not None:
            return np.asarray(self.velocity_labels, dtype=float)
        hi = self.v_max if self.v_max is not None else 0.8 / self.d_max
        lo = self.v_min if self.v_min is not None else -hi / 8.0
        grid = np.linspace(lo, hi, self.n_labels)
        nearest = int(np.argmin(np.abs(grid)))
        if abs(grid[nearest]) < 0.51 * (grid[1] - grid[0]):
            grid[nearest] = 0.0
        return grid


@dataclass
class VelocityField:
    """Per-superpixel velocity assignment over a fixed label grid."""

    values: np.ndarray
    labels: np.ndarray
    indices: np.ndarray

    def pixel_map(self, segmentation: Segmentation) -> np.ndarray:
        return self.values[segmentation.labels]

    @classmethod
    def constant(cls, segmentation: Segmentation, labels: np.ndarray,
                 v: float) -> "VelocityField":
        labels = np.asarray(labels, dtype=float)
        idx = int(np.argmin(np.abs(labels - v)))
        n = segmentation.n_segments
        return cls(values=np.full(n, labels[idx]), labels=labels,
                   indices=np.full(n, idx, dtype=int))


@dataclass
class FrameTriple:
    """The three observed frames; ``right1`` is the held-out fourth view
    used only for scoring."""

    left0: Image
    right0: Image
    left1: Image
    right1: Image | None = None


@dataclass
class MotionResult:
    planes: dict
    velocities: VelocityField
    error_history: list
    epipole: Epipole
    segmentation: Segmentation
    matches: list


# ----------------------------------------------------------------------
# kinematics
# ----------------------------------------------------------------------


def forward_project(p, d, v, epipole):
    """Next-frame position of pixels at (x, y) = ``p`` with disparity d
    and velocity v: slide radially from the epipole by 1 / (1 - d v).

    ``p`` is (..., 2); d and v broadcast against its leading shape.
    """
    p = np.asarray(p, dtype=float)
    d = np.asarray(d, dtype=float)
    v = np.asarray(v, dtype=float)
    denom = 1.0 - d * v
    if np.any(denom <= 0):
        raise ValueError("1 - d*v must stay positive for forward projection")
    e = np.array([epipole.x, epipole.y]) if isinstance(epipole, Epipole) \
        else np.asarray(epipole, dtype=float)
    return e + (p - e) / denom[..., None]


def next_disparity(d, v):
    """Disparity after one frame of approach: d / (1 - d v)."""
    d = np.asarray(d, dtype=float)
    v = np.asarray(v, dtype=float)
    denom = 1.0 - d * v
    if np.any(denom <= 0):
        raise ValueError("1 - d*v must stay positive")
    out = d / denom
    return float(out) if out.ndim == 0 else out


# ----------------------------------------------------------------------
# sparse corner matching
# ----------------------------------------------------------------------


def _harris_corners(lum: np.ndarray, window: int = 5, k: float = 0.04,
                    frac: float = 0.01, margin: int = 6,
                    max_corners: int = 300) -> np.ndarray:
    """(N, 2) integer corner coordinates (x, y), strongest first."""
    gx = np.gradient(lum, axis=1)
    gy = np.gradient(lum, axis=0)
    sxx = ndimage.uniform_filter(gx * gx, size=window, mode="nearest")
    syy = ndimage.uniform_filter(gy * gy, size=window, mode="nearest")
    sxy = ndimage.uniform_filter(gx * gy, size=window, mode="nearest")
    resp = sxx * syy - sxy ** 2 - k * (sxx + syy) ** 2
    peak = ndimage.maximum_filter(resp, size=window, mode="nearest")
    # absolute floor keeps flat images cornerless even though frac * max
    # would vanish there
    thresh = max(1e-10, frac * float(resp.max()))
    mask = (resp >= peak) & (resp > thresh)
    mask[:margin, :] = mask[-margin:, :] = False
    mask[:, :margin] = mask[:, -margin:] = False
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return np.zeros((0, 2), dtype=int)
    order = np.argsort(resp[ys, xs])[::-1][:max_corners]
    return np.stack([xs[order], ys[order]], axis=1)


def _best_zncc(patch: np.ndarray, lum: np.ndarray, cx: int, cy: int,
               radius: int, half: int):
    """Best zero-mean NCC match of ``patch`` in a window around (cx, cy).

    Returns ((x, y), score) or None when no candidate patch fits in the
    image or every candidate is flat.
    """
    size = 2 * half + 1
    y0 = max(cy - radius - half, 0)
    y1 = min(cy + radius + half, lum.shape[0] - 1)
    x0 = max(cx - radius - half, 0)
    x1 = min(cx + radius + half, lum.shape[1] - 1)
    block = lum[y0:y1 + 1, x0:x1 + 1]
    if block.shape[0] < size or block.shape[1] < size:
        return None
    wins = np.lib.stride_tricks.sliding_window_view(block, (size, size))
    cand = wins.reshape(wins.shape[0], wins.shape[1], -1)
    cand = cand - cand.mean(axis=2, keepdims=True)
    norms = np.linalg.norm(cand, axis=2)
    ref = patch.ravel() - patch.mean()
    ref_norm = np.linalg.norm(ref)
    if ref_norm < 1e-12:
        return None
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = (cand @ ref) / (norms * ref_norm)
    scores[norms < 1e-12] = -np.inf
    flat = int(np.argmax(scores))
    iy, ix = divmod(flat, scores.shape[1])
    best = float(scores[iy, ix])
    if not np.isfinite(best):
        return None
    # quadratic sub-pixel refinement of the correlation peak
    def _offset(lo, c, hi):
        den = lo - 2.0 * c + hi
        if den >= -1e-12 or not (np.isfinite(lo) and np.isfinite(hi)):
            return 0.0
        return float(np.clip(0.5 * (lo - hi) / den, -0.5, 0.5))

    dx = dy = 0.0
    if 0 < ix < scores.shape[1] - 1:
        dx = _offset(scores[iy, ix - 1], best, scores[iy, ix + 1])
    if 0 < iy < scores.shape[0] - 1:
        dy = _offset(scores[iy - 1, ix], best, scores[iy + 1, ix])
    return (x0 + ix + half + dx, y0 + iy + half + dy), best


def sparse_matches(frame_t: Image, frame_t1: Image, patch: int = 5,
                   search_radius: int = 12, max_corners: int = 300,
                   min_score: float = 0.8) -> list[Match]:
    """Harris corners in frame t matched to frame t+1 by zero-mean NCC
    over a local search window, kept only when the reverse match lands
    back within one pixel (symmetric-best filtering).

    Returns an empty list on textureless input.
    """
    lum0 = luminance(frame_t)
    lum1 = luminance(frame_t1)
    corners = _harris_corners(lum0, margin=patch + 1,
                              max_corners=max_corners)
    matches = []
    for x, y in corners:
        ref = lum0[y - patch:y + patch + 1, x - patch:x + patch + 1]
        fwd = _best_zncc(ref, lum1, x, y, search_radius, patch)
        if fwd is None or fwd[1] < min_score:
            continue
        (x1, y1), score = fwd
        xi1, yi1 = int(round(x1)), int(round(y1))
        back_patch = lum1[yi1 - patch:yi1 + patch + 1,
                          xi1 - patch:xi1 + patch + 1]
        if back_patch.shape != ref.shape:
            continue
        back = _best_zncc(back_patch, lum0, xi1, yi1, search_radius, patch)
        if back is None:
            continue
        (xb, yb), _ = back
        if abs(xb - x) <= 1 and abs(yb - y) <= 1:
            matches.append(Match(float(x), float(y), float(x1), float(y1),
                                 score))
    return matches


# ----------------------------------------------------------------------
# epipole estimation (normalized 8-point)
# ----------------------------------------------------------------------


def _normalize_transform(pts: np.ndarray) -> np.ndarray:
    """Hartley conditioning transform (centroid to origin, mean dist √2)."""
    centroid = pts.mean(axis=0)
    dist = np.linalg.norm(pts - centroid, axis=1).mean()
    if dist < 1e-9:
        raise EpipoleUnreliableError("matches are all at one point")
    s = np.sqrt(2.0) / dist
    return np.array([[s, 0.0, -s * centroid[0]],
                     [0.0, s, -s * centroid[1]],
                     [0.0, 0.0, 1.0]])


def _fundamental_matrix(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Normalized linear fundamental-matrix fit for axial camera motion.

    Translation along the optical axis (the only motion this module
    models) makes the fundamental matrix antisymmetric, so the usual
    eight-point system is solved inside that three-dimensional subspace:
    rows q^T F p = 0 reduce to a (cross, flow_x, flow_y) basis.  A common
    conditioning transform is used for both frames because a congruence
    F -> T^T F T preserves antisymmetry.  Rank 2 holds by construction.
    Raises EpipoleUnreliableError when the constraint matrix does not
    single out one solution (static or otherwise degenerate motion).
    """
    t = _normalize_transform(np.vstack([p, q]))
    ph = np.column_stack([p, np.ones(len(p))]) @ t.T
    qh = np.column_stack([q, np.ones(len(q))]) @ t.T
    a = np.stack([qh[:, 0] * ph[:, 1] - qh[:, 1] * ph[:, 0],
                  qh[:, 0] - ph[:, 0],
                  qh[:, 1] - ph[:, 1]], axis=1)
    _, sv, vt = np.linalg.svd(a)
    if sv[0] < 1e-12 or sv[1] < 1e-9 * sv[0]:
        raise EpipoleUnreliableError(
            "degenerate match configuration; fundamental matrix not unique")
    f01, f02, f12 = vt[-1]
    fn = np.array([[0.0, f01, f02],
                   [-f01, 0.0, f12],
                   [-f02, -f12, 0.0]])
    return t.T @ fn @ t


def _radial_consensus(p: np.ndarray, q: np.ndarray, inlier_px: float,
                      trials: int, rng) -> np.ndarray:
    """Inlier mask for matches radially consistent with one flow center.

    Samples pairs of flow lines, intersects them to get a candidate
    center, and scores every match by the perpendicular component of its
    flow relative to the ray from the center through the point.  Near-static
    matches (|flow| below noise) cannot vote for candidates but are kept
    as inliers, since any center is consistent with zero flow.
    """
    n = len(p)
    flows = q - p
    mag = np.hypot(flows[:, 0], flows[:, 1])
    voters = np.flatnonzero(mag >= 0.25)
    if len(voters) < 2:
        return np.ones(n, dtype=bool)
    best, keep = -1, np.ones(n, dtype=bool)
    for _ in range(trials):
        i, j = rng.choice(voters, size=2, replace=False)
        d1, d2 = flows[i] / mag[i], flows[j] / mag[j]
        lhs = np.array([[d1[0], -d2[0]], [d1[1], -d2[1]]])
        if abs(np.linalg.det(lhs)) < 1e-9:
            continue
        t1, _ = np.linalg.solve(lhs, p[j] - p[i])
        center = p[i] + t1 * d1
        u = p - center
        un = np.maximum(np.hypot(u[:, 0], u[:, 1]), 1e-9)
        perp = np.abs(u[:, 0] * flows[:, 1] - u[:, 1] * flows[:, 0]) / un
        inliers = perp <= inlier_px
        count = int(inliers.sum())
        if count > best:
            best, keep = count, inliers
    if best < 8:
        return np.ones(n, dtype=bool)
    return keep


def estimate_epipole(matches: list[Match], inlier_px: float = 0.5,
                     trials: int = 400, rng=None) -> Epipole:
    """Epipole in frame t from sparse matches.

    Fits the axial-motion fundamental matrix (normalized eight-point
    system restricted to the antisymmetric family, rank 2 by
    construction) and de-homogenizes its right null direction.  When
    enough matches are available, a consensus loop over candidate flow
    centers discards correspondences whose flow is not radial about the
    common center (occlusion-locked and texture-aliased matches) before
    the final fit; the loop uses a fixed seed unless ``rng`` is given,
    so results are reproducible.  Raises EpipoleUnreliableError when the
    constraint system is rank-deficient (static scene or otherwise
    degenerate configuration) or the null direction lies at infinity.
    """
    if len(matches) < 8:
        raise ValueError("need at least 8 matches to estimate the epipole")
    p = np.array([[m.x, m.y] for m in matches])
    q = np.array([[m.x1, m.y1] for m in matches])
    keep = np.ones(len(matches), dtype=bool)
    if len(matches) >= 12:
        if rng is None:
            rng = np.random.default_rng(8)
        keep = _radial_consensus(p, q, inlier_px, trials, rng)
    f = _fundamental_matrix(p[keep], q[keep])
    _, _, vf = np.linalg.svd(f)
    e = vf[-1]
    if abs(e[2]) < 1e-12 * np.linalg.norm(e):
        raise EpipoleUnreliableError("epipole at infinity")
    return Epipole(float(e[0] / e[2]), float(e[1] / e[2]))


def match_velocities(matches: list[Match], epipole: Epipole,
                     disparity: np.ndarray,
                     min_radius: float = 3.0) -> list[tuple]:
    """Per-match velocity estimates (x, y, v) from the radial expansion
    rule: v = (rho - 1) / (rho d) with rho the epipole-distance ratio.

    Matches too close to the epipole or at near-zero disparity are
    dropped as unreliable.
    """
    height, width = disparity.shape
    out = []
    for m in matches:
        r0 = np.hypot(m.x - epipole.x, m.y - epipole.y)
        r1 = np.hypot(m.x1 - epipole.x, m.y1 - epipole.y)
        if r0 < min_radius or r1 < 1e-9:
            continue
        xi = int(round(m.x))
        yi = int(round(m.y))
        if not (0 <= xi < width and 0 <= yi < height):
            continue
        d = disparity[yi, xi]
        if abs(d) < 1e-6:
            continue
        rho = r1 / r0
        out.append((m.x, m.y, (rho - 1.0) / (rho * d)))
    return out


# ----------------------------------------------------------------------
# velocity MRF
# ----------------------------------------------------------------------


def _interp_2d(grid: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Bilinear lookup in an (H, W, K) grid at fractional positions,
    clamped to the border."""
    height, width = grid.shape[:2]
    xs = np.clip(xs, 0.0, width - 1.0)
    ys = np.clip(ys, 0.0, height - 1.0)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    top = (1.0 - fx) * grid[y0, x0] + fx * grid[y0, x1]
    bot = (1.0 - fx) * grid[y1, x0] + fx * grid[y1, x1]
    return (1.0 - fy) * top + fy * bot


def _radial_match_cost(phi_t, phi_t1, rows, cols, d, v, epipole, lam,
                       invalid_cost, min_visible):
    """Temporal match energy summed over one superpixel's pixels.

    ``d`` and ``v`` broadcast to (M, P) over the P pixels at (rows,
    cols); rows of the (M,) result correspond to candidate labels or
    candidate planes.  Pixels projecting off the frame do not vote;
    their share is imputed at the mean visible cost (so the sum stays
    comparable across labels, the same filled-pixels-only policy the
    fourth-view score uses).  A candidate is assigned ``invalid_cost``
    outright when any pixel violates 1 - d v > 0 or fewer than
    ``min_visible`` of the pixels stay on the frame; v = 0 maps every
    pixel to itself, so at least one velocity label is always valid.
    """
    height, width = phi_t1.shape[:2]
    denom = np.atleast_2d(1.0 - np.asarray(d, dtype=float)
                          * np.asarray(v, dtype=float))
    bad = denom <= 1e-9
    safe = np.where(bad, 1.0, denom)
    qx = epipole.x + (cols[None, :] - epipole.x) / safe
    qy = epipole.y + (rows[None, :] - epipole.y) / safe
    visible = ((qx >= 0) & (qx <= width - 1)
               & (qy >= 0) & (qy <= height - 1))
    feats = _interp_2d(phi_t1, qy, qx)
    diff = phi_t[rows, cols][None, :, :] - feats
    cost = (diff ** 2) @ lam
    n_pix = cost.shape[1]
    n_vis = visible.sum(axis=1)
    vis_sum = np.where(visible, cost, 0.0).sum(axis=1)
    total = n_pix * vis_sum / np.maximum(n_vis, 1)
    invalid = bad.any(axis=1) | (n_vis < min_visible * n_pix)
    return np.where(invalid, invalid_cost, total)


def velocity_cost_tables(frames, segmentation: Segmentation, planes: dict,
                         epipole: Epipole, params: MotionParams,
                         seed: dict | None = None, features=None):
    """Unary and pairwise energy tables of the velocity MRF.

    Returns (labels, data, pair) where ``data`` is (n_segments,
    n_labels) with +inf at labels that violate 1 - d v > 0 anywhere in
    the superpixel, and ``pair`` maps each adjacent pair (i, j) to the
    truncated-linear table min(tau_v, lambda_v |v_i - v_j|).  ``seed``
    optionally anchors superpixels to prior velocities with the same
    truncated-linear form scaled by ``prior_weight``.  ``features``
    overrides the (phi_t, phi_t1) pixel features.
    """
    left_t, left_t1 = frames
    if features is None:
        phi_t = pixel_features(left_t)
        phi_t1 = pixel_features(left_t1)
    else:
        phi_t, phi_t1 = features
    labels = params.labels()
    n_seg = segmentation.n_segments
    data = np.zeros((n_seg, len(labels)))
    for i, px in enumerate(segmentation.superpixels):
        rows, cols = px[:, 0], px[:, 1]
        d = planes[i].a * cols + planes[i].b * rows + planes[i].c
        data[i] = _radial_match_cost(phi_t, phi_t1, rows, cols, d[None, :],
                                     labels[:, None], epipole,
                                     params.lambda_k, np.inf,
                                     params.min_visible)
        if seed is not None and i in seed:
            data[i] = data[i] + params.prior_weight * np.minimum(
                params.tau_v, params.lambda_v * np.abs(labels - seed[i]))
    if not np.all(np.isfinite(data).any(axis=1)):
        raise ValueError("a superpixel has no kinematically valid label; "
                         "include v = 0 in the label grid")
    gaps = np.abs(labels[:, None] - labels[None, :])
    table = np.minimum(params.tau_v, params.lambda_v * gaps)
    pair = {key: table for key in segmentation.boundaries}
    return labels, data, pair


def solve_velocity(frames, segmentation: Segmentation, planes: dict,
                   epipole: Epipole, params: MotionParams,
                   seed: dict | None = None, features=None) -> VelocityField:
    """MAP velocity per superpixel by max-product on the adjacency graph.

    The unary cost of label v sums weighted squared feature differences
    between each pixel and its radial forward projection into the next
    frame at the superpixel's plane disparity; adjacent superpixels pay
    a truncated-linear velocity gap.  Labels that would move any pixel
    through the camera (1 - d v <= 0) are excluded outright.
    """
    labels, data, pair = velocity_cost_tables(
        frames, segmentation, planes, epipole, params, seed=seed,
        features=features)
    n_seg = segmentation.n_segments
    domains = [FiniteDomain(tuple(range(len(labels)))) for _ in range(n_seg)]
    unary = {i: (lambda c, row=data[i]: -float(row[int(c)]))
             for i in range(n_seg)}
    pairwise = {key: (lambda a, b, t=tab: -float(t[int(a), int(b)]))
                for key, tab in pair.items()}
    graph = FactorGraph(domains, unary, pairwise)
    assignment = max_product(graph, schedule="synchronous",
                             max_iters=params.bp_iters)
    indices = np.array([int(c) for c in assignment], dtype=int)
    return VelocityField(values=labels[indices], labels=labels,
                         indices=indices)


def motion_plane_cost(frames, segmentation: Segmentation,
                      velocities: VelocityField, epipole: Epipole,
                      params: MotionParams, features=None):
    """Per-superpixel temporal data term at fixed velocities, as an
    ``extra_unary`` callback for plane inference.

    Candidate planes that push any pixel through the camera pay a large
    finite penalty per offending pixel, so the incumbent (always valid)
    plane is never displaced by an invalid one.
    """
    left_t, left_t1 = frames
    if features is None:
        phi_t = pixel_features(left_t)
        phi_t1 = pixel_features(left_t1)
    else:
        phi_t, phi_t1 = features

    def extra(i, stack):
        px = segmentation.superpixels[i]
        rows, cols = px[:, 0], px[:, 1]
        stack = np.asarray(stack, dtype=float)
        d = (stack[:, 0:1] * cols[None, :] + stack[:, 1:2] * rows[None, :]
             + stack[:, 2:3])
        return _radial_match_cost(phi_t, phi_t1, rows, cols, d,
                                  velocities.values[i], epipole,
                                  params.lambda_k, INVALID_PLANE_COST,
                                  params.min_visible)

    return extra


# ----------------------------------------------------------------------
# fourth-view prediction
# ----------------------------------------------------------------------


def predict_fourth_view(left_t: Image, segmentation: Segmentation,
                        planes: dict, velocities: VelocityField,
                        epipole: Epipole):
    """Warp the first left frame to the unobserved right frame at t+1.

    Each pixel moves radially from the epipole by 1 / (1 - d v) and then
    left by its next-frame disparity d / (1 - d v); collisions keep the
    larger next-frame disparity (nearer surface).  Returns (prediction,
    filled) where unfilled pixels are zero and excluded from scoring.
    """
    data = left_t.data
    height, width = data.shape[:2]
    d = disparity_from_planes(segmentation, planes)
    v = velocities.pixel_map(segmentation)
    denom = 1.0 - d * v
    pred = np.zeros_like(data)
    filled = np.zeros((height, width), dtype=bool)
    best = np.full((height, width), -np.inf)
    for y in range(height):
        for x in range(width):
            if denom[y, x] <= 1e-9:
                continue
            qx = epipole.x + (x - epipole.x) / denom[y, x]
            qy = epipole.y + (y - epipole.y) / denom[y, x]
            d1 = d[y, x] / denom[y, x]
            tx = int(round(qx - d1))
            ty = int(round(qy))
            if 0 <= tx < width and 0 <= ty < height and d1 > best[ty, tx]:
                best[ty, tx] = d1
                pred[ty, tx] = data[y, x]
                filled[ty, tx] = True
    return pred, filled


def fourth_view_error(triple: FrameTriple, segmentation: Segmentation,
                      planes: dict, velocities: VelocityField,
                      epipole: Epipole) -> float:
    """Pixel RMS between the warped prediction and the held-out right
    frame at t+1, over filled pixels only."""
    if triple.right1 is None:
        raise ValueError("triple has no held-out fourth frame to score")
    pred, filled = predict_fourth_view(triple.left0, segmentation, planes,
                                       velocities, epipole)
    if not filled.any():
        raise ValueError("prediction is empty; nothing to score")
    diff = pred[filled] - triple.right1.data[filled]
    return float(np.sqrt(np.mean(diff ** 2)))


# ----------------------------------------------------------------------
# alternation
# ----------------------------------------------------------------------


def _seed_velocities(matches, segmentation, disparity, epipole):
    """Median match velocity per superpixel, plus the global median."""
    samples = match_velocities(matches, epipole, disparity)
    per_sp: dict[int, list] = {}
    for x, y, v in samples:
        sp = int(segmentation.labels[int(round(y)), int(round(x))])
        per_sp.setdefault(sp, []).append(v)
    seed = {i: float(np.median(vs)) for i, vs in per_sp.items()}
    overall = float(np.median([v for _, _, v in samples])) if samples else 0.0
    return seed, overall


def alternate(triple: FrameTriple, params: MotionParams | None = None,
              stereo_params: StereoEnergyParams | None = None,
              config: InferConfig | None = None,
              segmentation: Segmentation | None = None, iters: int = 3,
              rng=None, epipole: Epipole | None = None, seg_k: float = 300.0,
              seg_min_size: int = 50) -> MotionResult:
    """Alternate velocity labeling and plane refinement on one triple.

    Pipeline: epipole from sparse matches -> stereo plane inference ->
    per-superpixel velocity seeds from the matches -> ``iters`` rounds
    of {solve the velocity MRF; re-run plane inference warm-started with
    the temporal data term at fixed velocities}.

    ``error_history`` has ``iters + 1`` entries when the held-out fourth
    frame is present: entry 0 scores the best single-velocity field (the
    global median of the match velocities, i.e. camera egomotion alone)
    and each later entry scores one full alternation.  Without the
    fourth frame the history is empty.
    """
    if params is None:
        params = MotionParams()
    if stereo_params is None:
        stereo_params = StereoEnergyParams()
    rng = as_generator(rng)
    if segmentation is None:
        segmentation = fh_segment(triple.left0, k=seg_k,
                                  min_size=seg_min_size)
    matches = sparse_matches(triple.left0, triple.left1)
    if epipole is None:
        epipole = estimate_epipole(matches)
    res = infer_planes(triple.left0, triple.right0, segmentation,
                       stereo_params, config, rng)
    planes = res.planes
    seed, v_global = _seed_velocities(
        matches, segmentation, disparity_from_planes(segmentation, planes),
        epipole)
    labels = params.labels()
    frames = (triple.left0, triple.left1)
    phi_t = pixel_features(triple.left0)
    phi_t1 = pixel_features(triple.left1)
    history = []
    score = triple.right1 is not None
    if score:
        base = VelocityField.constant(segmentation, labels, v_global)
        history.append(fourth_view_error(triple, segmentation, planes,
                                         base, epipole))
    velocities = None
    for it in range(iters):
        velocities = solve_velocity(frames, segmentation, planes, epipole,
                                    params, seed=seed if it == 0 else None,
                                    features=(phi_t, phi_t1))
        extra = motion_plane_cost(frames, segmentation, velocities, epipole,
                                  params, features=(phi_t, phi_t1))
        res = infer_planes(triple.left0, triple.right0, segmentation,
                           stereo_params, config, rng, init_planes=planes,
                           extra_unary=extra)
        planes = res.planes
        if score:
            history.append(fourth_view_error(triple, segmentation, planes,
                                             velocities, epipole))
    return MotionResult(planes=planes, velocities=velocities,
                        error_history=history, epipole=epipole,
                        segmentation=segmentation, matches=matches)


# ----------------------------------------------------------------------
# sequence I/O
# ----------------------------------------------------------------------


def load_frame_pairs(root) -> list[tuple[Image, Image]]:
    """Stereo pairs from numbered frame folders holding left/right PGM
    or PPM files, sorted by folder name."""
    from pathlib import Path

    from .imgio import load_image

    root = Path(root)
    pairs = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        left = next((sub / f"left{ext}" for ext in (".pgm", ".ppm")
                     if (sub / f"left{ext}").exists()), None)
        right = next((sub / f"right{ext}" for ext in (".pgm", ".ppm")
                      if (sub / f"right{ext}").exists()), None)
        if left is None or right is None:
            warnings.warn(f"skipping incomplete frame folder {sub.name}")
            continue
        pairs.append((load_image(left), load_image(right)))
    if not pairs:
        raise ValueError(f"no frame pairs found under {root}")
    return pairs


def save_velocity_pfm(velocities: VelocityField,
                      segmentation: Segmentation, path) -> None:
    from .imgio import save_pfm

    save_pfm(velocities.pixel_map(segmentation).astype(np.float32), path)
