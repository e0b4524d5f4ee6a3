"""Single-image depth estimation learned from stereo pairs.

A per-pixel linear predictor w . X(p) maps multi-scale filter-bank
features to disparity, with one weight block per discrete height level
(40 levels over the image rows).  Training never sees ground truth:
disparities are bootstrapped from the stereo data+smoothness energy,
then coordinate descent alternates per-level least squares for w with
grid BP re-inference of the disparity maps under the full objective

    E(d) = lambda_d * sum_p min(||Phi1(p) - Phi2(x - d, y)||^2, tau_d)
         + lambda_s * sum_{4-adj} min(|d(p) - d(q)|, tau_s)
         + sum_p (d(p) - w . X(p))^2.

Also provides view prediction (forward warp + bias/gain transfer), the
variance-normalized distortion metric, and the per-row ground-plane
baseline used for comparison.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bp import grid_max_product
from .features import HEIGHT_LEVELS, monocular_features, pixel_features
from .imgio import Image, load_image, load_pfm
from .stereo import DisparityMap

__all__ = [
    "MdeParams",
    "ViewPrediction",
    "BootstrapResult",
    "mde_energy",
    "joint_infer",
    "monocular_infer",
    "bootstrap_em",
    "view_predict",
    "distortion",
    "ground_plane_baseline",
    "fit_disparity_scale",
    "rms_vs_groundtruth",
    "load_mde_corpus",
    "write_metrics_csv",
]


@dataclass(frozen=True)
class MdeParams:
    """Weights of the single-image depth objective.

    ``w`` has one weight block per height level: shape (40, D) where D
    is the feature dimension (54 color / 48 grayscale)."""

    w: np.ndarray
    lambda_d: float = 1.0
    tau_d: float = 5.0
    lambda_s: float = 1.0
    tau_s: float = 2.0
    d_max: int = 15

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        if self.w.ndim != 2 or self.w.shape[0] != HEIGHT_LEVELS:
            raise ValueError(f"w must have shape ({HEIGHT_LEVELS}, D)")
        for name in ("lambda_d", "tau_d", "lambda_s", "tau_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.d_max < 0:
            raise ValueError("d_max must be nonnegative")

    @classmethod
    def zeros(cls, n_features: int, **kwargs) -> "MdeParams":
        return cls(w=np.zeros((HEIGHT_LEVELS, n_features)), **kwargs)


@dataclass
class ViewPrediction:
    image: Image
    filled: np.ndarray  # False where no warped value landed


def _mono_prediction(params: MdeParams, feats: np.ndarray,
                     levels: np.ndarray) -> np.ndarray:
    """Per-pixel predicted disparity w[level(p)] . X(p)."""
    return np.einsum("hwd,hwd->hw", feats, params.w[levels])


def _data_cost_volume(phi_1, phi_2, d_max, tau_d):
    """(H, W, d_max+1) truncated squared feature distances; columns whose
    correspondence leaves the image pay the truncation value."""
    height, width, _ = phi_1.shape
    cost = np.full((height, width, d_max + 1), tau_d)
    for d in range(min(d_max + 1, width)):
        sq = np.sum((phi_1[:, d:] - phi_2[:, :width - d]) ** 2, axis=2)
        cost[:, d:, d] = np.minimum(sq, tau_d)
    return cost


def mde_energy(pair, d: np.ndarray, params: MdeParams, features=None):
    """Evaluate (data, smooth, mono, total) for a disparity map.

    ``pair`` is (left, right); fractional disparities use linear
    interpolation of the right features along the row.  ``features``
    may carry precomputed (feats, levels) for the left image."""
    left, right = pair
    d = np.asarray(d, dtype=float)
    phi_1 = pixel_features(left)
    phi_2 = pixel_features(right)
    height, width = d.shape
    xs = np.arange(width)[None, :] - d
    oob = (xs < 0) | (xs > width - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, width - 1)
    x1 = np.minimum(x0 + 1, width - 1)
    frac = np.clip(xs - x0, 0.0, 1.0)
    rows = np.arange(height)[:, None]
    feat2 = (1 - frac)[:, :, None] * phi_2[rows, x0] \
        + frac[:, :, None] * phi_2[rows, x1]
    sq = np.sum((phi_1 - feat2) ** 2, axis=2)
    per_px = np.where(oob, params.tau_d, np.minimum(sq, params.tau_d))
    data = params.lambda_d * per_px.sum()

    gaps_h = np.abs(d[:, :-1] - d[:, 1:])
    gaps_v = np.abs(d[:-1, :] - d[1:, :])
    smooth = params.lambda_s * (np.minimum(gaps_h, params.tau_s).sum()
                                + np.minimum(gaps_v, params.tau_s).sum())

    feats, levels = monocular_features(left) if features is None else features
    mono = np.sum((d - _mono_prediction(params, feats, levels)) ** 2)
    return float(data), float(smooth), float(mono), float(data + smooth + mono)


def joint_infer(pair, params: MdeParams, use_data: bool = True,
                use_mono: bool = True, iters: int = 30,
                features=None) -> DisparityMap:
    """Minimize the selected energy terms over integer labels 0..d_max.

    ``use_data`` needs the right image; ``use_mono`` needs the predictor
    weights.  ``features`` may carry precomputed (feats, levels) for the
    left image."""
    left, right = pair
    labels = np.arange(params.d_max + 1, dtype=float)
    height, width = left.height, left.width
    cost = np.zeros((height, width, params.d_max + 1))
    if use_data:
        phi_1 = pixel_features(left)
        phi_2 = pixel_features(right)
        cost += params.lambda_d * _data_cost_volume(
            phi_1, phi_2, params.d_max, params.tau_d)
    if use_mono:
        feats, levels = monocular_features(left) if features is None else features
        pred = _mono_prediction(params, feats, levels)
        cost += (labels[None, None, :] - pred[:, :, None]) ** 2
    out = grid_max_product(cost, params.lambda_s,
                           params.lambda_s * params.tau_s, iters=iters)
    return DisparityMap(values=out.astype(float),
                        valid=np.ones((height, width), dtype=bool))


def monocular_infer(image: Image, params: MdeParams,
                    iters: int = 30) -> DisparityMap:
    """Disparity from the single-image predictor plus smoothness only."""
    return joint_infer((image, None), params, use_data=False, use_mono=True,
                       iters=iters)


def _level_regression(feats_list, levels_list, disp_list,
                      n_features: int) -> np.ndarray:
    """Per-height-level least squares of disparity on features.

    Rank-deficient normal equations fall back to a small ridge."""
    w = np.zeros((HEIGHT_LEVELS, n_features))
    for level in range(HEIGHT_LEVELS):
        xs, ys = [], []
        for feats, levels, d in zip(feats_list, levels_list, disp_list):
            sel = levels == level
            if np.any(sel):
                xs.append(feats[sel])
                ys.append(d[sel])
        if not xs:
            continue
        design = np.concatenate(xs)
        target = np.concatenate(ys)
        gram = design.T @ design
        rhs = design.T @ target
        if np.linalg.matrix_rank(gram) < n_features:
            gram = gram + 1e-6 * np.eye(n_features)
        w[level] = np.linalg.solve(gram, rhs)
    return w


@dataclass
class BootstrapResult:
    params: MdeParams
    objective_history: list
    disparities: list


def bootstrap_em(corpus, params: MdeParams, iters: int = 3,
                 bp_iters: int = 30, features=None) -> BootstrapResult:
    """Coordinate descent on the joint objective over a stereo corpus.

    Disparity maps are initialized from the data+smoothness terms alone,
    then each iteration refits w by per-level least squares (exactly
    minimizing the mono term) and re-infers every disparity map under
    the full objective.  The tracked objective is the corpus total and
    is non-increasing whenever the grid inference is exact.  ``features``
    may carry one precomputed (feats, levels) per pair."""
    cached = []
    for i, (left, right) in enumerate(corpus):
        feats, levels = (monocular_features(left) if features is None
                         else features[i])
        cached.append((left, right, feats, levels))
    disparities = [
        joint_infer((left, right), params, use_data=True, use_mono=False,
                    iters=bp_iters).values
        for left, right, _, _ in cached]
    if iters == 0:
        return BootstrapResult(params=params, objective_history=[],
                               disparities=disparities)
    n_features = cached[0][2].shape[2]
    history = []
    for _ in range(iters):
        w = _level_regression([c[2] for c in cached], [c[3] for c in cached],
                              disparities, n_features)
        params = replace(params, w=w)
        history.append(_corpus_objective(cached, disparities, params))
        disparities = [
            joint_infer((left, right), params, iters=bp_iters,
                        features=(feats, levels)).values
            for left, right, feats, levels in cached]
        history.append(_corpus_objective(cached, disparities, params))
    return BootstrapResult(params=params, objective_history=history,
                           disparities=disparities)


def _corpus_objective(cached, disparities, params) -> float:
    total = 0.0
    for (left, right, feats, levels), d in zip(cached, disparities):
        total += mde_energy((left, right), d, params,
                            features=(feats, levels))[3]
    return total


def view_predict(left: Image, d: np.ndarray, target_stats) -> ViewPrediction:
    """Predict the other view by forward-warping the left image.

    Each left pixel maps to column x - d(p) (rounded); collisions keep
    the largest-disparity (nearest) source.  Intensities are bias/gain
    mapped from the left image's per-channel moments to
    ``target_stats = (means, stds)``.  Holes are filled from the nearest
    filled neighbor on the row, preferring the side whose source has the
    lower disparity; the filled mask is False there."""
    d = np.asarray(d, dtype=float)
    height, width = d.shape
    if (height, width) != (left.height, left.width):
        raise ValueError("disparity must match image dims")
    target_mean, target_std = (np.asarray(v, dtype=float) for v in target_stats)
    src_mean = left.channel_means()
    src_std = left.channel_stds()
    gain = np.where(src_std > 0, target_std / np.where(src_std > 0, src_std, 1.0),
                    1.0)
    mapped = (left.data - src_mean) * gain + target_mean

    out = np.zeros_like(left.data)
    best_d = np.full((height, width), -np.inf)
    xs = np.arange(width)[None, :]
    targets = np.rint(xs - d).astype(int)
    for y in range(height):
        for x in range(width):
            t = targets[y, x]
            if 0 <= t < width and d[y, x] > best_d[y, t]:
                best_d[y, t] = d[y, x]
                out[y, t] = mapped[y, x]
    filled = np.isfinite(best_d)
    for y in range(height):
        row_filled = np.nonzero(filled[y])[0]
        if len(row_filled) == 0:
            continue
        holes = np.nonzero(~filled[y])[0]
        for x in holes:
            left_idx = row_filled[row_filled < x]
            right_idx = row_filled[row_filled > x]
            if len(left_idx) and len(right_idx):
                l, r = left_idx[-1], right_idx[0]
                src = l if best_d[y, l] <= best_d[y, r] else r
            elif len(left_idx):
                src = left_idx[-1]
            else:
                src = right_idx[0]
            out[y, x] = out[y, src]
    return ViewPrediction(image=Image(out), filled=filled)


def distortion(pred: Image, actual: Image, variances, mask=None) -> float:
    """Mean squared prediction error as a fraction of target variance.

    (1 / (P*C)) * sum over masked pixels and channels of
    (pred - actual)^2 / variance_c.  Predicting the per-channel mean of
    the masked target yields exactly 1.0."""
    if pred.data.shape != actual.data.shape:
        raise ValueError("prediction and target dims must match")
    variances = np.asarray(variances, dtype=float)
    if np.any(variances <= 0):
        raise ValueError("variances must be positive")
    if mask is None:
        mask = np.ones(pred.data.shape[:2], dtype=bool)
    diff = (pred.data - actual.data)[mask]
    n_px = int(mask.sum())
    if n_px == 0:
        raise ValueError("empty evaluation mask")
    return float(np.sum(diff ** 2 / variances) / (n_px * pred.channels))


def ground_plane_baseline(training_maps) -> np.ndarray:
    """Per-row mean disparity over the training maps."""
    stack = np.stack([np.asarray(m, dtype=float) for m in training_maps])
    return stack.mean(axis=(0, 2))


def fit_disparity_scale(disparity_maps, depth_maps) -> float:
    """Single scale c minimizing sum (d - c/Z)^2 over the corpus."""
    num, den = 0.0, 0.0
    for d, z in zip(disparity_maps, depth_maps):
        inv = 1.0 / np.asarray(z, dtype=float)
        num += float(np.sum(np.asarray(d) * inv))
        den += float(np.sum(inv ** 2))
    if den == 0:
        raise ValueError("degenerate depth maps")
    return num / den


def rms_vs_groundtruth(d: np.ndarray, depth: np.ndarray, c: float) -> float:
    """sqrt(mean (d - c/Z)^2)."""
    err = np.asarray(d, dtype=float) - c / np.asarray(depth, dtype=float)
    return float(np.sqrt(np.mean(err ** 2)))


def load_mde_corpus(root):
    """Load pair folders (left.ppm, right.ppm, optional gt.pfm).

    Returns a list of dicts with keys name, left, right, gt."""
    root = Path(root)
    pairs = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        left = sub / "left.ppm"
        right = sub / "right.ppm"
        if not (left.exists() and right.exists()):
            warnings.warn(f"skipping {sub.name}: missing left.ppm/right.ppm")
            continue
        gt_path = sub / "gt.pfm"
        pairs.append({
            "name": sub.name,
            "left": load_image(left),
            "right": load_image(right),
            "gt": load_pfm(gt_path) if gt_path.exists() else None,
        })
    if not pairs:
        raise ValueError(f"no pairs found under {root}")
    return pairs


def write_metrics_csv(path, rows) -> None:
    """Write (pair, distortion, rms) measurement rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair", "distortion", "rms"])
        for row in rows:
            writer.writerow(list(row))
