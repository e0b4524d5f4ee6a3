"""Unsupervised learning of the stereo energy weights.

Hard conditional EM over a corpus of stereo pairs: the E step infers a
plane assignment Z_i per pair with the full slanted-plane pipeline
(warm-started after the first pass so its energy never worsens), and
the M step updates the weights three ways:

* the per-feature match weights lambda_k have a closed form (each is a
  Gaussian precision fit to the matched feature residuals),
* the texture predictor vectors beta_A, beta_B come from least squares
  regression of A_i(p)/d(p) and B_i(p)/d(p) on the orientation
  histograms H(p),
* the smoothness and texture weights (lambda_S, tau_S, lambda_A,
  lambda_B) follow stochastic contrastive-divergence ascent: the
  gradient of the conditional log-likelihood is estimated by comparing
  the energy gradient at Z_i against its average over perturbed
  assignments obtained with a single Metropolis sweep.

Training logs the corpus mean energy and a held-out view-prediction
distortion per iteration.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .features import hog_pyramid, pixel_features
from .imgio import Image
from .mcmc import as_generator
from .mde import distortion, view_predict
from .segment import Segmentation, fh_segment
from .stereo import (HOG_DIM, N_MATCH_WEIGHTS, InferConfig, PlaneParams,
                     StereoEnergyParams, disparity_from_planes, infer_planes,
                     plane_disparity, total_energy)
from .stereo import _initial_planes as _ransac_init
from .stereo import _interp_feature_columns

__all__ = [
    "PairLatent",
    "TrainState",
    "BETA_Y_FIELDS",
    "hard_e_step",
    "energy_gradient",
    "metropolis_sweep",
    "cd_gradient",
    "fit_lambda_match",
    "fit_texture_regression",
    "m_step",
    "train",
    "train_supervised",
    "save_params_json",
    "load_params_json",
]

# the CD-trained block of the parameter vector (beta_y); the match
# weights (beta_u) and the texture predictors have closed forms
BETA_Y_FIELDS = ("lambda_s", "tau_s", "lambda_a", "lambda_b")


@dataclass
class PairLatent:
    """Cached per-pair quantities plus the current plane assignment."""

    left: Image
    right: Image
    segmentation: Segmentation
    phi_l: np.ndarray
    phi_r: np.ndarray
    hog: np.ndarray
    planes: dict | None = None

    @classmethod
    def from_pair(cls, left: Image, right: Image,
                  segmentation: Segmentation | None = None,
                  seg_k: float = 300.0, seg_min_size: int = 50):
        if segmentation is None:
            segmentation = fh_segment(left, k=seg_k, min_size=seg_min_size)
        return cls(left=left, right=right, segmentation=segmentation,
                   phi_l=pixel_features(left), phi_r=pixel_features(right),
                   hog=hog_pyramid(left))

    def disparity(self) -> np.ndarray:
        return disparity_from_planes(self.segmentation, self.planes)

    def energy(self, params: StereoEnergyParams):
        return total_energy(self.phi_l, self.phi_r, self.hog,
                            self.segmentation, self.planes, params)


@dataclass
class TrainState:
    params: StereoEnergyParams
    latents: list
    iteration: int = 0
    energy_history: list = field(default_factory=list)
    log_rows: list = field(default_factory=list)


def hard_e_step(pair, params: StereoEnergyParams,
                segmentation: Segmentation | None = None,
                config: InferConfig | None = None, rng=None,
                init_planes=None):
    """Infer the plane assignment for one pair under the current weights.

    ``pair`` is (left, right).  With ``init_planes`` the inference is
    warm-started from the previous assignment, so the returned energy
    cannot exceed that of the previous assignment under these weights.
    Returns the full inference result (``.planes`` is Z_i)."""
    left, right = pair
    if segmentation is None:
        segmentation = fh_segment(left)
    return infer_planes(left, right, segmentation, params, config=config,
                        rng=rng, init_planes=init_planes)


def _boundary_gaps(segmentation: Segmentation, planes: dict) -> np.ndarray:
    """Summed midpoint disparity gap per stored boundary, order-aligned
    with ``segmentation.boundaries``."""
    gaps = np.empty(len(segmentation.boundaries))
    for b, ((i, j), quad) in enumerate(segmentation.boundaries.items()):
        mx = 0.5 * (quad[:, 1] + quad[:, 3])
        my = 0.5 * (quad[:, 0] + quad[:, 2])
        d_i = plane_disparity(planes[i], mx, my)
        d_j = plane_disparity(planes[j], mx, my)
        gaps[b] = np.abs(d_i - d_j).sum()
    return gaps


def energy_gradient(segmentation: Segmentation, hog: np.ndarray, planes: dict,
                    params: StereoEnergyParams) -> dict:
    """Gradient of the smoothness+texture energy in the CD-trained
    weights, as a dict over BETA_Y_FIELDS.

    Truncated terms contribute to tau_S only; untruncated terms
    contribute their gap sum (lambda_S) or squared residuals
    (lambda_A, lambda_B)."""
    grad = {name: 0.0 for name in BETA_Y_FIELDS}
    gaps = _boundary_gaps(segmentation, planes)
    truncated = params.lambda_s * gaps >= params.tau_s
    grad["lambda_s"] = float(gaps[~truncated].sum())
    grad["tau_s"] = float(truncated.sum())
    for i, px in enumerate(segmentation.superpixels):
        plane = planes[i]
        d = plane_disparity(plane, px[:, 1], px[:, 0])
        h = hog[px[:, 0], px[:, 1]]
        r_a = d * (h @ params.beta_a) - plane.a
        r_b = d * (h @ params.beta_b) - plane.b
        q = params.lambda_a * r_a ** 2 + params.lambda_b * r_b ** 2
        keep = q < params.tau_t
        grad["lambda_a"] += float((r_a[keep] ** 2).sum())
        grad["lambda_b"] += float((r_b[keep] ** 2).sum())
    return grad


def _smooth_texture_energy(segmentation, hog, planes, params) -> float:
    gaps = _boundary_gaps(segmentation, planes)
    e_s = np.minimum(params.tau_s, params.lambda_s * gaps).sum()
    e_t = 0.0
    for i, px in enumerate(segmentation.superpixels):
        plane = planes[i]
        d = plane_disparity(plane, px[:, 1], px[:, 0])
        h = hog[px[:, 0], px[:, 1]]
        r_a = d * (h @ params.beta_a) - plane.a
        r_b = d * (h @ params.beta_b) - plane.b
        q = params.lambda_a * r_a ** 2 + params.lambda_b * r_b ** 2
        e_t += np.minimum(params.tau_t, q).sum()
    return float(e_s + e_t)


def _local_energy(segmentation, hog, planes, params, index, plane) -> float:
    """Smoothness+texture terms that depend on superpixel ``index``
    holding ``plane`` (all other assignments fixed)."""
    px = segmentation.superpixels[index]
    d = plane_disparity(plane, px[:, 1], px[:, 0])
    h = hog[px[:, 0], px[:, 1]]
    r_a = d * (h @ params.beta_a) - plane.a
    r_b = d * (h @ params.beta_b) - plane.b
    q = params.lambda_a * r_a ** 2 + params.lambda_b * r_b ** 2
    total = float(np.minimum(params.tau_t, q).sum())
    for j in segmentation.adjacency.get(index, ()):
        key = (index, j) if index < j else (j, index)
        quad = segmentation.boundaries[key]
        mx = 0.5 * (quad[:, 1] + quad[:, 3])
        my = 0.5 * (quad[:, 0] + quad[:, 2])
        d_i = plane_disparity(plane, mx, my)
        d_j = plane_disparity(planes[j], mx, my)
        gap = np.abs(d_i - d_j).sum()
        total += float(min(params.tau_s, params.lambda_s * gap))
    return total


def _gaussian_proposal(sigma_ab: float = 0.007, sigma_c: float = 0.1):
    def propose(plane: PlaneParams, rng, index=None) -> PlaneParams:
        return PlaneParams(plane.a + sigma_ab * rng.standard_normal(),
                           plane.b + sigma_ab * rng.standard_normal(),
                           plane.c + sigma_c * rng.standard_normal())
    return propose


def metropolis_sweep(segmentation, hog, planes: dict,
                     params: StereoEnergyParams, rng, proposal=None,
                     sweeps: int = 1) -> dict:
    """Perturb a plane assignment by Metropolis steps on the
    smoothness+texture energy, one proposal per superpixel in id order.

    The proposal must be symmetric; acceptance uses exp(-delta_E)."""
    rng = as_generator(rng)
    if proposal is None:
        proposal = _gaussian_proposal()
    z = dict(planes)
    for _ in range(sweeps):
        for i in range(segmentation.n_segments):
            cand = proposal(z[i], rng, i)
            delta = (_local_energy(segmentation, hog, z, params, i, cand)
                     - _local_energy(segmentation, hog, z, params, i, z[i]))
            if delta <= 0 or rng.uniform() < np.exp(-delta):
                z[i] = cand
    return z


def cd_gradient(params: StereoEnergyParams, latents, rng,
                n_samples: int = 10, sweeps: int = 1,
                proposal=None) -> dict:
    """Contrastive-divergence estimate of the conditional log-likelihood
    gradient in the CD-trained weights.

    For each pair, ``n_samples`` perturbed assignments are drawn by a
    short Metropolis run from Z_i; the estimate is the mean energy
    gradient over those samples minus the gradient at Z_i, summed over
    pairs.  Ascending this gradient increases the likelihood of the
    data assignments."""
    rng = as_generator(rng)
    total = {name: 0.0 for name in BETA_Y_FIELDS}
    for latent in latents:
        seg, hog, planes = latent.segmentation, latent.hog, latent.planes
        data_grad = energy_gradient(seg, hog, planes, params)
        for _ in range(n_samples):
            z = metropolis_sweep(seg, hog, planes, params, rng,
                                 proposal=proposal, sweeps=sweeps)
            g = energy_gradient(seg, hog, z, params)
            for name in BETA_Y_FIELDS:
                total[name] += (g[name] - data_grad[name]) / n_samples
    return total


def fit_lambda_match(params: StereoEnergyParams, latents) -> np.ndarray:
    """Closed-form match weights: each lambda_k is the precision fit
    1 / (2 * mean r_k^2) of the matched feature residuals, pooling all
    in-bounds pixels of all pairs.  Features with zero residual keep
    their current weight."""
    sq_sums = np.zeros(N_MATCH_WEIGHTS)
    count = 0
    for latent in latents:
        seg = latent.segmentation
        height, width = seg.labels.shape
        d = latent.disparity()
        xs = np.arange(width)[None, :] - d
        inb = (xs >= 0) & (xs <= width - 1)
        rows = np.arange(height)[:, None]
        feats = _interp_feature_columns(
            latent.phi_r, np.broadcast_to(rows, (height, width)), xs)
        resid = latent.phi_l - feats
        sq_sums += (resid[inb] ** 2).sum(axis=0)
        count += int(inb.sum())
    lam = np.array(params.lambda_match, dtype=float, copy=True)
    if count == 0:
        return lam
    mean_sq = sq_sums / count
    nonzero = mean_sq > 0
    lam[nonzero] = 1.0 / (2.0 * mean_sq[nonzero])
    return np.maximum(lam, 0.0)


def fit_texture_regression(latents, eps: float = 1e-3):
    """Least squares of A_i(p)/d(p) and B_i(p)/d(p) on the orientation
    histograms H(p), pooled over pairs; pixels with |d| < eps are
    excluded.  Rank-deficient normal equations (common: the histogram
    blocks are normalized) fall back to a small ridge with a warning."""
    rows, targets_a, targets_b = [], [], []
    for latent in latents:
        seg = latent.segmentation
        for i, px in enumerate(seg.superpixels):
            plane = latent.planes[i]
            d = plane_disparity(plane, px[:, 1], px[:, 0])
            keep = np.abs(d) >= eps
            if not np.any(keep):
                continue
            rows.append(latent.hog[px[keep, 0], px[keep, 1]])
            targets_a.append(np.full(int(keep.sum()), plane.a) / d[keep])
            targets_b.append(np.full(int(keep.sum()), plane.b) / d[keep])
    if not rows:
        raise ValueError("no usable pixels for texture regression")
    design = np.concatenate(rows)
    gram = design.T @ design
    if np.linalg.matrix_rank(gram) < HOG_DIM:
        warnings.warn("texture regression is rank deficient; using ridge")
        gram = gram + 1e-6 * np.eye(HOG_DIM)
    beta_a = np.linalg.solve(gram, design.T @ np.concatenate(targets_a))
    beta_b = np.linalg.solve(gram, design.T @ np.concatenate(targets_b))
    return beta_a, beta_b


def m_step(params: StereoEnergyParams, latents, lr: float = 1e-4,
           steps: int = 8, rng=None, cd_samples: int = 10, sweeps: int = 1,
           proposal=None, fit_match: bool = True, fit_texture: bool = True,
           lr_scale=None) -> StereoEnergyParams:
    """One hard M step.

    The texture predictors and match weights get their closed forms
    first, then the CD-trained weights take ``steps`` ascent steps of
    size lr (optionally scaled per weight via ``lr_scale``), clamped to
    stay non-negative."""
    rng = as_generator(rng)
    if fit_texture:
        beta_a, beta_b = fit_texture_regression(latents)
        params = replace(params, beta_a=beta_a, beta_b=beta_b)
    if fit_match:
        params = replace(params, lambda_match=fit_lambda_match(params,
                                                               latents))
    scale = {name: 1.0 for name in BETA_Y_FIELDS}
    if lr_scale:
        scale.update(lr_scale)
    if lr != 0.0:
        for _ in range(steps):
            grad = cd_gradient(params, latents, rng, n_samples=cd_samples,
                               sweeps=sweeps, proposal=proposal)
            updates = {
                name: max(0.0, getattr(params, name)
                          + lr * scale[name] * grad[name])
                for name in BETA_Y_FIELDS}
            params = replace(params, **updates)
    return params


def _holdout_distortion(holdout_latent: PairLatent,
                        params: StereoEnergyParams, config, rng) -> float:
    """View-prediction distortion of a held-out pair under the current
    weights: infer planes, forward-warp the left view, compare against
    the right view on the filled pixels."""
    result = infer_planes(holdout_latent.left, holdout_latent.right,
                          holdout_latent.segmentation, params, config=config,
                          rng=rng, init_planes=holdout_latent.planes)
    holdout_latent.planes = result.planes
    d = holdout_latent.disparity()
    right = holdout_latent.right
    stats = (right.channel_means(), right.channel_stds())
    pred = view_predict(holdout_latent.left, d, stats)
    mask = pred.filled
    variances = right.data[mask].var(axis=0)
    variances = np.maximum(variances, 1e-12)
    return distortion(pred.image, right, variances, mask)


def train(corpus, params: StereoEnergyParams | None = None, iters: int = 6,
          lr: float = 1e-4, steps: int = 8, cd_samples: int = 10,
          rng=None, holdout=None, log_path=None,
          config: InferConfig | None = None, seg_k: float = 300.0,
          seg_min_size: int = 50, fit_match: bool = True,
          fit_texture: bool = True, proposal=None) -> TrainState:
    """Hard EM over a stereo corpus.

    ``corpus`` is a list of (left, right) pairs; ``holdout`` an optional
    extra pair whose view-prediction distortion is logged.  Each
    iteration runs the E step on every pair (warm-started after the
    first iteration) and then the M step.  Returns the final state; the
    log rows are (iter, mean_energy, holdout_distortion)."""
    rng = as_generator(rng)
    if params is None:
        params = StereoEnergyParams()
    latents = [PairLatent.from_pair(left, right, seg_k=seg_k,
                                    seg_min_size=seg_min_size)
               for left, right in corpus]
    hold_latent = None
    if holdout is not None:
        hold_latent = PairLatent.from_pair(holdout[0], holdout[1],
                                           seg_k=seg_k,
                                           seg_min_size=seg_min_size)
    state = TrainState(params=params, latents=latents)
    log_rows = []
    for it in range(1, iters + 1):
        energies = []
        for latent in latents:
            result = hard_e_step((latent.left, latent.right), state.params,
                                 segmentation=latent.segmentation,
                                 config=config, rng=rng,
                                 init_planes=latent.planes)
            latent.planes = result.planes
            energies.append(latent.energy(state.params)[3])
        state.energy_history.append(energies)
        state.params = m_step(state.params, latents, lr=lr, steps=steps,
                              rng=rng, cd_samples=cd_samples,
                              fit_match=fit_match, fit_texture=fit_texture,
                              proposal=proposal)
        state.iteration = it
        row = [it, float(np.mean(energies))]
        if hold_latent is not None:
            row.append(_holdout_distortion(hold_latent, state.params,
                                           config, rng))
        log_rows.append(row)
    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "mean_energy", "holdout_distortion"])
            for row in log_rows:
                writer.writerow(row if len(row) == 3 else row + [""])
    state.log_rows = log_rows
    return state


def train_supervised(corpus_with_gt, params: StereoEnergyParams | None = None,
                     rng=None, config: InferConfig | None = None,
                     seg_k: float = 300.0, seg_min_size: int = 50,
                     **m_step_kwargs) -> TrainState:
    """Supervised variant: latents are plane fits to ground-truth
    disparity maps (no E step), followed by a single M step.

    ``corpus_with_gt`` holds (left, right, gt_disparity) triples."""
    rng = as_generator(rng)
    if params is None:
        params = StereoEnergyParams()
    if config is None:
        config = InferConfig()
    latents = []
    for left, right, gt in corpus_with_gt:
        latent = PairLatent.from_pair(left, right, seg_k=seg_k,
                                      seg_min_size=seg_min_size)
        gt = np.asarray(gt, dtype=float)
        latent.planes = _ransac_init(latent.segmentation, gt,
                                     np.zeros(gt.shape, dtype=bool),
                                     config, rng)
        latents.append(latent)
    new_params = m_step(params, latents, rng=rng, **m_step_kwargs)
    return TrainState(params=new_params, latents=latents, iteration=1)


def save_params_json(params: StereoEnergyParams, path) -> None:
    """Serialize the weights as block-named JSON."""
    blocks = {
        "match": {
            "lambda_match": [float(v) for v in params.lambda_match],
            "kappa_border": float(params.kappa_border),
        },
        "smoothness": {
            "lambda_s": float(params.lambda_s),
            "tau_s": float(params.tau_s),
        },
        "texture": {
            "lambda_a": float(params.lambda_a),
            "lambda_b": float(params.lambda_b),
            "tau_t": float(params.tau_t),
            "beta_a": [float(v) for v in params.beta_a],
            "beta_b": [float(v) for v in params.beta_b],
        },
    }
    with open(path, "w") as fh:
        json.dump(blocks, fh, indent=2)
        fh.write("\n")


def load_params_json(path) -> StereoEnergyParams:
    with open(path) as fh:
        blocks = json.load(fh)
    return StereoEnergyParams(
        lambda_match=np.array(blocks["match"]["lambda_match"], dtype=float),
        kappa_border=blocks["match"]["kappa_border"],
        lambda_s=blocks["smoothness"]["lambda_s"],
        tau_s=blocks["smoothness"]["tau_s"],
        lambda_a=blocks["texture"]["lambda_a"],
        lambda_b=blocks["texture"]["lambda_b"],
        tau_t=blocks["texture"]["tau_t"],
        beta_a=np.array(blocks["texture"]["beta_a"], dtype=float),
        beta_b=np.array(blocks["texture"]["beta_b"], dtype=float),
    )
