"""Slanted-plane stereo.

Disparity over each superpixel is modeled by a plane d(x, y) = A*x +
B*y + C.  The pipeline initializes with dense integer-label BP stereo in
both directions, marks occlusions by mutual consistency, fits planes per
superpixel with RANSAC, and then refines the plane assignment by rounds
of candidate proposal plus discrete max-product BP on the superpixel
graph.  The objective being minimized decomposes as

    E(Z) = E_match(Z) + E_smooth(Z) + E_texture(Z)

where the match term compares 9-dim pixel features between the images
along the correspondence p_right = (x - d, y), the smoothness term
penalizes disparity gaps along superpixel boundaries with a truncated
per-boundary total, and the texture term couples each plane's A and B to
linear predictions from per-pixel orientation histograms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .bp import grid_max_product, max_product
from .features import hog_pyramid, pixel_features
from .graphs import FactorGraph, FiniteDomain
from .imgio import Image
from .mcmc import as_generator
from .segment import Segmentation

__all__ = [
    "PlaneParams",
    "DisparityMap",
    "StereoEnergyParams",
    "DenseStereoParams",
    "InferConfig",
    "InferResult",
    "FitDegenerateError",
    "plane_disparity",
    "disparity_from_planes",
    "dense_stereo",
    "mutual_consistency",
    "ransac_plane_fit",
    "match_energy",
    "smoothness_energy",
    "texture_energy",
    "total_energy",
    "plane_selection_round",
    "infer_planes",
    "save_planes_csv",
    "load_planes_csv",
]

DEFAULT_DATA_TRUNC = 5.0
HOG_DIM = 24
N_MATCH_WEIGHTS = 9


class FitDegenerateError(ValueError):
    """Raised when a plane fit has too few usable or non-collinear pixels."""


@dataclass(frozen=True)
class PlaneParams:
    """Disparity plane d(x, y) = a*x + b*y + c."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)
                and np.isfinite(self.c)):
            raise ValueError("plane parameters must be finite")


def plane_disparity(plane: PlaneParams, x, y):
    """Evaluate the plane's disparity at pixel coordinates (x, y)."""
    return plane.a * np.asarray(x, dtype=float) + plane.b * np.asarray(
        y, dtype=float) + plane.c


@dataclass
class DisparityMap:
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.valid is None:
            self.valid = np.ones(self.values.shape, dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != self.values.shape:
            raise ValueError("valid mask must match disparity shape")


@dataclass(frozen=True)
class StereoEnergyParams:
    """Weights of the three stereo energies.

    lambda_match: 9 per-feature match weights; kappa_border: constant
    cost for out-of-bounds correspondences, sized like one typical
    mismatched pixel so planes are neither rewarded for faking low
    disparity near the frame edge (too large) nor for hiding pixels
    off-frame (too small); lambda_s/tau_s: smoothness weight and
    per-boundary truncation; lambda_a/lambda_b/tau_t and the two 24-dim
    beta vectors: texture-prediction weights.
    """

    lambda_match: np.ndarray = field(
        default_factory=lambda: np.ones(N_MATCH_WEIGHTS))
    kappa_border: float = 0.05
    lambda_s: float = 2.0
    tau_s: float = 200.0
    lambda_a: float = 0.5
    lambda_b: float = 0.5
    tau_t: float = 4.0
    beta_a: np.ndarray = field(default_factory=lambda: np.zeros(HOG_DIM))
    beta_b: np.ndarray = field(default_factory=lambda: np.zeros(HOG_DIM))

    def __post_init__(self):
        object.__setattr__(self, "lambda_match",
                           np.asarray(self.lambda_match, dtype=float))
        object.__setattr__(self, "beta_a", np.asarray(self.beta_a, dtype=float))
        object.__setattr__(self, "beta_b", np.asarray(self.beta_b, dtype=float))
        if self.lambda_match.shape != (N_MATCH_WEIGHTS,):
            raise ValueError(f"lambda_match must have {N_MATCH_WEIGHTS} entries")
        if self.beta_a.shape != (HOG_DIM,) or self.beta_b.shape != (HOG_DIM,):
            raise ValueError(f"beta vectors must have {HOG_DIM} entries")
        for name in ("lambda_s", "tau_s", "lambda_a", "lambda_b", "tau_t"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class DenseStereoParams:
    data_trunc: float = DEFAULT_DATA_TRUNC
    lam: float = 0.5
    tau: float = 2.0
    iters: int = 30


@dataclass(frozen=True)
class InferConfig:
    d_max: int = 32
    rounds: int = 6
    candidates: int = 15
    sigma_ab: float = 0.007
    sigma_c: float = 0.1
    occlusion_tol: float = 1.0
    ransac_iters: int = 100
    ransac_tol: float = 1.0
    bp_iters: int = 30
    stop_early: bool = True
    dense: DenseStereoParams = field(default_factory=DenseStereoParams)


@dataclass
class InferResult:
    planes: dict
    energy_history: list
    initial_planes: dict
    occlusion: np.ndarray
    dense_left: DisparityMap


def _as_features(image_or_features) -> np.ndarray:
    if isinstance(image_or_features, Image):
        return pixel_features(image_or_features)
    return np.asarray(image_or_features, dtype=float)


def disparity_from_planes(segmentation: Segmentation, planes: dict) -> np.ndarray:
    """Rasterize per-superpixel planes into an (H, W) disparity map."""
    out = np.zeros(segmentation.labels.shape)
    for i, px in enumerate(segmentation.superpixels):
        out[px[:, 0], px[:, 1]] = plane_disparity(planes[i], px[:, 1], px[:, 0])
    return out


def dense_stereo(left: Image, right: Image, d_max: int,
                 params: DenseStereoParams | None = None) -> DisparityMap:
    """Integer-label BP stereo on the pixel grid.

    The data cost for label d at pixel (x, y) is the truncated squared
    distance between the left pixel feature and the right feature at
    (x - d, y); columns with x < d pay the border constant.  Smoothness
    is truncated-linear in the label difference.
    """
    if params is None:
        params = DenseStereoParams()
    if (left.height, left.width) != (right.height, right.width):
        raise ValueError("stereo pair dimensions must match")
    phi_l = pixel_features(left)
    phi_r = pixel_features(right)
    height, width = left.height, left.width
    n_labels = d_max + 1
    cost = np.full((height, width, n_labels), params.data_trunc)
    for d in range(n_labels):
        if d >= width:
            break
        sq = np.sum((phi_l[:, d:] - phi_r[:, :width - d or None]) ** 2, axis=2)
        cost[:, d:, d] = np.minimum(sq, params.data_trunc)
    labels = grid_max_product(cost, params.lam, params.tau, iters=params.iters)
    return DisparityMap(values=labels.astype(float),
                        valid=np.ones((height, width), dtype=bool))


def mutual_consistency(d_left: np.ndarray, d_right: np.ndarray,
                       tol: float = 1.0) -> np.ndarray:
    """Occlusion mask: pixel p is occluded when the right map disagrees
    at its correspondence, |dL(p) - dR(x - dL(p), y)| > tol, or the
    correspondence leaves the image."""
    d_left = np.asarray(d_left, dtype=float)
    d_right = np.asarray(d_right, dtype=float)
    if d_left.shape != d_right.shape:
        raise ValueError("disparity maps must have the same shape")
    height, width = d_left.shape
    xs = np.arange(width)[None, :]
    xr = np.rint(xs - d_left).astype(int)
    oob = (xr < 0) | (xr >= width)
    xr_safe = np.clip(xr, 0, width - 1)
    rows = np.arange(height)[:, None]
    gap = np.abs(d_left - d_right[rows, xr_safe])
    return oob | (gap > tol)


def _exact_plane(px: np.ndarray, d: np.ndarray) -> PlaneParams | None:
    """Plane through 3 pixels, or None when they are collinear."""
    design = np.column_stack([px[:, 1], px[:, 0], np.ones(3)])
    det = np.linalg.det(design)
    if abs(det) < 1e-9:
        return None
    a, b, c = np.linalg.solve(design, d)
    return PlaneParams(a, b, c)


def _lstsq_plane(px: np.ndarray, d: np.ndarray) -> PlaneParams:
    design = np.column_stack([px[:, 1], px[:, 0], np.ones(len(px))])
    theta, *_ = np.linalg.lstsq(design, d, rcond=None)
    return PlaneParams(*theta)


def ransac_plane_fit(pixels: np.ndarray, disparities: np.ndarray,
                     mask: np.ndarray, iters: int = 100,
                     inlier_tol: float = 1.0, rng=None) -> PlaneParams:
    """Robust plane fit from (row, col) pixels and their disparities.

    ``mask`` marks usable (non-occluded) pixels.  The best hypothesis by
    inlier count (ties by lower squared residual) is refit by least
    squares on its inliers.  Raises FitDegenerateError when fewer than 3
    usable pixels exist or no non-collinear triple can be drawn.
    """
    rng = as_generator(rng)
    pixels = np.asarray(pixels)
    disparities = np.asarray(disparities, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    usable = np.nonzero(mask)[0]
    if len(usable) < 3:
        raise FitDegenerateError("need at least 3 usable pixels")
    px = pixels[usable]
    d = disparities[usable]
    best = None  # (count, -sse, plane)
    found_triple = False
    for _ in range(iters):
        plane = None
        for _attempt in range(20):
            idx = rng.choice(len(px), size=3, replace=False)
            plane = _exact_plane(px[idx], d[idx])
            if plane is not None:
                break
        if plane is None:
            continue
        found_triple = True
        resid = plane_disparity(plane, px[:, 1], px[:, 0]) - d
        inl = np.abs(resid) <= inlier_tol
        count = int(inl.sum())
        sse = float(np.sum(resid[inl] ** 2))
        key = (count, -sse)
        if best is None or key > best[0]:
            best = (key, inl)
    if not found_triple:
        raise FitDegenerateError("all pixel triples are collinear")
    inl = best[1]
    if inl.sum() >= 3:
        return _lstsq_plane(px[inl], d[inl])
    return _lstsq_plane(px, d)


def _interp_feature_columns(grid: np.ndarray, rows: np.ndarray,
                            x: np.ndarray) -> np.ndarray:
    """Bilinear (linear in x) feature lookup at fractional columns.

    ``grid`` is (H, W, K); ``rows`` holds integer row indices
    broadcastable against ``x``.  Out-of-range x must be masked by the
    caller; here x is clipped."""
    width = grid.shape[1]
    x0 = np.floor(x).astype(int)
    frac = x - x0
    x0 = np.clip(x0, 0, width - 1)
    x1 = np.clip(x0 + 1, 0, width - 1)
    return ((1.0 - frac)[..., None] * grid[rows, x0]
            + frac[..., None] * grid[rows, x1])


def _superpixel_match(phi_l, phi_r, rows, cols, planes_abc, params):
    """Match energy of one superpixel for a stack of candidate planes.

    ``planes_abc`` is (M, 3); returns (M,) energies."""
    width = phi_l.shape[1]
    a, b, c = planes_abc[:, 0:1], planes_abc[:, 1:2], planes_abc[:, 2:3]
    d = a * cols[None, :] + b * rows[None, :] + c
    xr = cols[None, :] - d
    oob = (xr < 0) | (xr > width - 1)
    feats = _interp_feature_columns(phi_r, rows[None, :], xr)
    diff = phi_l[rows, cols][None, :, :] - feats
    per_px = (diff ** 2) @ params.lambda_match
    per_px = np.where(oob, params.kappa_border, per_px)
    return per_px.sum(axis=1)


def _superpixel_texture(dot_a, dot_b, rows, cols, planes_abc, params):
    """Texture energy of one superpixel for a stack of candidate planes."""
    a, b, c = planes_abc[:, 0:1], planes_abc[:, 1:2], planes_abc[:, 2:3]
    d = a * cols[None, :] + b * rows[None, :] + c
    ea = params.lambda_a * (d * dot_a[rows, cols][None, :] - a) ** 2
    eb = params.lambda_b * (d * dot_b[rows, cols][None, :] - b) ** 2
    return np.minimum(params.tau_t, ea + eb).sum(axis=1)


def _boundary_table(quad, planes_i, planes_j, params):
    """(Mi, Mj) smoothness energies between candidate stacks of two
    adjacent superpixels.

    Both planes are evaluated at the midpoint of each boundary pixel
    pair, so the per-pair gap measures the surface jump across the
    boundary and vanishes when the two planes coincide."""
    mx = 0.5 * (quad[:, 1] + quad[:, 3])
    my = 0.5 * (quad[:, 0] + quad[:, 2])
    d_p = (planes_i[:, 0:1] * mx[None, :] + planes_i[:, 1:2] * my[None, :]
           + planes_i[:, 2:3])
    d_q = (planes_j[:, 0:1] * mx[None, :] + planes_j[:, 1:2] * my[None, :]
           + planes_j[:, 2:3])
    gaps = np.abs(d_p[:, None, :] - d_q[None, :, :]).sum(axis=2)
    return np.minimum(params.tau_s, params.lambda_s * gaps)


def _planes_array(planes) -> np.ndarray:
    return np.array([[p.a, p.b, p.c] for p in planes])


def match_energy(left, right, segmentation: Segmentation, planes: dict,
                 params: StereoEnergyParams) -> float:
    """Sum over pixels of weighted squared feature differences along the
    correspondence (x - d, y); out-of-bounds pixels pay kappa_border."""
    phi_l = _as_features(left)
    phi_r = _as_features(right)
    total = 0.0
    for i, px in enumerate(segmentation.superpixels):
        stack = _planes_array([planes[i]])
        total += _superpixel_match(phi_l, phi_r, px[:, 0], px[:, 1],
                                   stack, params)[0]
    return float(total)


def smoothness_energy(segmentation: Segmentation, planes: dict,
                      params: StereoEnergyParams) -> float:
    """Sum over unordered adjacent superpixel pairs of the truncated
    total absolute disparity gap along their shared boundary."""
    total = 0.0
    for (i, j), quad in segmentation.boundaries.items():
        table = _boundary_table(quad, _planes_array([planes[i]]),
                                _planes_array([planes[j]]), params)
        total += table[0, 0]
    return float(total)


def texture_energy(hog, segmentation: Segmentation, planes: dict,
                   params: StereoEnergyParams) -> float:
    """Sum over pixels of the truncated squared error between the
    HOG-linear predictions d*(beta.H) and the plane's A and B."""
    hog = np.asarray(hog, dtype=float)
    dot_a = hog @ params.beta_a
    dot_b = hog @ params.beta_b
    total = 0.0
    for i, px in enumerate(segmentation.superpixels):
        stack = _planes_array([planes[i]])
        total += _superpixel_texture(dot_a, dot_b, px[:, 0], px[:, 1],
                                     stack, params)[0]
    return float(total)


def total_energy(left, right, hog, segmentation: Segmentation, planes: dict,
                 params: StereoEnergyParams):
    """Return (E_match, E_smooth, E_texture, E_total)."""
    e_m = match_energy(left, right, segmentation, planes, params)
    e_s = smoothness_energy(segmentation, planes, params)
    e_t = texture_energy(hog, segmentation, planes, params)
    return e_m, e_s, e_t, e_m + e_s + e_t


def plane_selection_round(segmentation: Segmentation, candidates: dict,
                          phi_l, phi_r, hog, params: StereoEnergyParams,
                          bp_iters: int = 30, extra_unary=None):
    """Select one candidate plane per superpixel by discrete max-product.

    ``candidates[i]`` is a list of PlaneParams for superpixel i.  The
    unary energy of a candidate is its match + texture term; pairwise
    energies are boundary smoothness terms.  ``extra_unary(i, stack)``,
    if given, returns an additional (M,) energy for superpixel i
    evaluated at an (M, 3) stack of candidate [a, b, c] rows; it is
    added to the unary tables and to the reported energy.  Returns
    (chosen planes dict, total energy of the chosen assignment)."""
    hog = np.asarray(hog, dtype=float)
    dot_a = hog @ params.beta_a
    dot_b = hog @ params.beta_b
    n_seg = segmentation.n_segments
    stacks = {i: _planes_array(candidates[i]) for i in range(n_seg)}
    unary_tables = {}
    for i, px in enumerate(segmentation.superpixels):
        rows, cols = px[:, 0], px[:, 1]
        unary_tables[i] = (
            _superpixel_match(phi_l, phi_r, rows, cols, stacks[i], params)
            + _superpixel_texture(dot_a, dot_b, rows, cols, stacks[i], params))
        if extra_unary is not None:
            unary_tables[i] = unary_tables[i] + np.asarray(
                extra_unary(i, stacks[i]), dtype=float)
    pair_tables = {
        key: _boundary_table(quad, stacks[key[0]], stacks[key[1]], params)
        for key, quad in segmentation.boundaries.items()}

    domains = [FiniteDomain(tuple(range(len(candidates[i]))))
               for i in range(n_seg)]
    unary = {i: (lambda c, t=unary_tables[i]: -float(t[int(c)]))
             for i in range(n_seg)}
    pairwise = {key: (lambda ci, cj, t=tab: -float(t[int(ci), int(cj)]))
                for key, tab in pair_tables.items()}
    graph = FactorGraph(domains, unary, pairwise)
    assignment = max_product(graph, schedule="synchronous",
                             max_iters=bp_iters)
    chosen = {i: candidates[i][assignment[i]] for i in range(n_seg)}
    energy = sum(unary_tables[i][assignment[i]] for i in range(n_seg))
    energy += sum(tab[assignment[i], assignment[j]]
                  for (i, j), tab in pair_tables.items())
    return chosen, float(energy)


def _initial_planes(segmentation, d_left, occluded, config, rng):
    planes = {}
    for i, px in enumerate(segmentation.superpixels):
        d = d_left[px[:, 0], px[:, 1]]
        usable = ~occluded[px[:, 0], px[:, 1]]
        try:
            planes[i] = ransac_plane_fit(px, d, usable,
                                         iters=config.ransac_iters,
                                         inlier_tol=config.ransac_tol,
                                         rng=rng)
        except FitDegenerateError:
            source = d[usable] if usable.sum() > 0 else d
            planes[i] = PlaneParams(0.0, 0.0, float(np.median(source)))
    return planes


def infer_planes(left: Image, right: Image, segmentation: Segmentation,
                 params: StereoEnergyParams, config: InferConfig | None = None,
                 rng=None, init_planes=None, extra_unary=None) -> InferResult:
    """Full slanted-plane inference.

    Dense BP stereo in both directions -> mutual-consistency occlusion
    mask -> RANSAC plane per superpixel -> rounds of candidate proposal
    (Gaussian noise on A, B, C around the current plane) and max-product
    selection on the superpixel graph.  The best-total-energy assignment
    ever seen is retained; the energy history starts at the
    initialization and is non-increasing by construction.

    ``init_planes`` warm-starts from a previous assignment, skipping the
    dense pass and RANSAC; the result then reports no occlusion mask or
    dense map.  ``extra_unary(i, stack)`` adds a per-superpixel data
    term to candidate scoring and the retained energy (see
    plane_selection_round); the energy history then tracks the extended
    objective.
    """
    if config is None:
        config = InferConfig()
    rng = as_generator(rng)
    if init_planes is None:
        d_left = dense_stereo(left, right, config.d_max, config.dense)
        flip_l = Image(left.data[:, ::-1].copy())
        flip_r = Image(right.data[:, ::-1].copy())
        d_right = dense_stereo(flip_r, flip_l, config.d_max, config.dense)
        d_right = DisparityMap(values=d_right.values[:, ::-1].copy(),
                               valid=None)
        occluded = mutual_consistency(d_left.values, d_right.values,
                                      tol=config.occlusion_tol)
        planes = _initial_planes(segmentation, d_left.values, occluded,
                                 config, rng)
    else:
        d_left = None
        occluded = None
        planes = dict(init_planes)
    init_planes = dict(planes)
    phi_l = pixel_features(left)
    phi_r = pixel_features(right)
    hog = hog_pyramid(left)
    _, _, _, best_energy = total_energy(phi_l, phi_r, hog, segmentation,
                                        planes, params)
    if extra_unary is not None:
        best_energy += sum(
            float(np.asarray(extra_unary(i, _planes_array([planes[i]])))[0])
            for i in range(segmentation.n_segments))
    best_planes = dict(planes)
    history = [best_energy]
    for _ in range(config.rounds):
        candidates = {}
        for i in range(segmentation.n_segments):
            cur = planes[i]
            cands = [cur]
            for _ in range(config.candidates):
                cands.append(PlaneParams(
                    cur.a + config.sigma_ab * rng.standard_normal(),
                    cur.b + config.sigma_ab * rng.standard_normal(),
                    cur.c + config.sigma_c * rng.standard_normal()))
            candidates[i] = cands
        planes, energy = plane_selection_round(
            segmentation, candidates, phi_l, phi_r, hog, params,
            bp_iters=config.bp_iters, extra_unary=extra_unary)
        improved = energy < best_energy
        if improved:
            best_energy = energy
            best_planes = dict(planes)
        history.append(best_energy)
        if config.stop_early and not improved:
            break
    return InferResult(planes=best_planes, energy_history=history,
                       initial_planes=init_planes, occlusion=occluded,
                       dense_left=d_left)


def save_planes_csv(planes: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["superpixel_id", "A", "B", "C"])
        for i in sorted(planes):
            p = planes[i]
            writer.writerow([i, repr(p.a), repr(p.b), repr(p.c)])


def load_planes_csv(path) -> dict:
    planes = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["superpixel_id", "A", "B", "C"]:
            raise ValueError("unexpected plane CSV header")
        for row in reader:
            planes[int(row[0])] = PlaneParams(float(row[1]), float(row[2]),
                                              float(row[3]))
    return planes
