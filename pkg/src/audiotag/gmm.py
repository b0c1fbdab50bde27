"""Per-tag GMM baseline scored by a frame-summed log-likelihood ratio.

For each tag a positive mixture is fit on all frames of chunks carrying the
tag and a negative mixture on every remaining frame; a chunk's score is the
sum over its frames of the positive minus negative log densities.  Mixtures
are diagonal-covariance, trained by EM from a seeded k-means++ start.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DataError, ShapeError
from .features import FeatureMatrix

VARIANCE_FLOOR = 1e-6
DEFAULT_COMPONENTS = 8


@dataclass
class Gmm:
    """Diagonal-covariance Gaussian mixture."""

    weights: np.ndarray  # (M,) on the simplex
    means: np.ndarray  # (M, D)
    variances: np.ndarray  # (M, D), floored
    log_likelihood_history: list[float] = field(default_factory=list, repr=False, compare=False)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass
class GmmTagModel:
    tag: str
    positive: Gmm
    negative: Gmm


def log_densities(model: Gmm, x: np.ndarray) -> np.ndarray:
    """Mixture log density log sum_m w_m N(x; mu_m, Sigma_m) for each row of x."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.dim:
        raise ShapeError(f"point dimension {x.shape[1]} != model dimension {model.dim}")
    # per-component log N(x) expanded into two matmuls on x and x^2
    inv_var = 1.0 / model.variances
    log_norm = -0.5 * (model.dim * np.log(2.0 * np.pi) + np.log(model.variances).sum(axis=1))
    quad = (
        x**2 @ inv_var.T
        - 2.0 * (x @ (model.means * inv_var).T)
        + (model.means**2 * inv_var).sum(axis=1)
    )
    comp_log = log_norm - 0.5 * quad + np.log(model.weights)
    return logsumexp(comp_log, axis=1)


def gmm_log_density(model: Gmm, x: np.ndarray) -> float:
    """Log density of a single feature vector under the mixture."""
    return float(log_densities(model, np.asarray(x))[0])


def _kmeans_pp_init(frames: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ center selection followed by a short Lloyd refinement."""
    n = len(frames)
    centers = np.empty((M, frames.shape[1]))
    centers[0] = frames[rng.integers(n)]
    closest = np.sum((frames - centers[0]) ** 2, axis=1)
    for m in range(1, M):
        total = closest.sum()
        if total <= 0:
            centers[m] = frames[rng.integers(n)]
        else:
            centers[m] = frames[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, np.sum((frames - centers[m]) ** 2, axis=1))

    sq_norms = (frames**2).sum(axis=1)
    assignment = np.zeros(n, dtype=np.intp)
    for _ in range(20):
        d2 = sq_norms[:, None] - 2.0 * (frames @ centers.T) + (centers**2).sum(axis=1)
        new_assignment = np.argmin(d2, axis=1)  # argmin breaks ties at the lowest index
        for m in range(M):
            members = frames[new_assignment == m]
            if len(members):
                centers[m] = members.mean(axis=0)
            else:
                centers[m] = frames[np.argmax(d2.min(axis=1))]
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
    return centers


def fit_gmm(
    frames: np.ndarray,
    M: int,
    seed: int,
    max_iter: int = 200,
    tol_per_frame: float = 1e-6,
) -> Gmm:
    """Fit a diagonal-covariance mixture by EM.

    Initialization is seeded k-means++; iterations stop once the per-frame
    log-likelihood gain drops below ``tol_per_frame`` or after ``max_iter``
    rounds.  Variances are floored each M-step.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2:
        raise ShapeError(f"frame pool must be 2-D, got {frames.ndim}-D")
    n, dim = frames.shape
    if n < M:
        raise DataError(f"cannot fit {M} components on {n} frames")

    rng = np.random.default_rng(seed)
    if M == 1:
        means = frames.mean(axis=0, keepdims=True)
    else:
        means = _kmeans_pp_init(frames, M, rng)
    global_var = np.maximum(frames.var(axis=0), VARIANCE_FLOOR)
    variances = np.tile(global_var, (M, 1))
    weights = np.full(M, 1.0 / M)
    model = Gmm(weights=weights, means=means, variances=variances)

    frames_sq = frames**2
    prev_ll = -np.inf
    for _ in range(max_iter):
        inv_var = 1.0 / model.variances
        log_norm = -0.5 * (dim * np.log(2.0 * np.pi) + np.log(model.variances).sum(axis=1))
        quad = (
            frames_sq @ inv_var.T
            - 2.0 * (frames @ (model.means * inv_var).T)
            + (model.means**2 * inv_var).sum(axis=1)
        )
        comp_log = log_norm - 0.5 * quad + np.log(model.weights)
        frame_ll = logsumexp(comp_log, axis=1)
        ll = float(frame_ll.sum())
        model.log_likelihood_history.append(ll)

        resp = np.exp(comp_log - frame_ll[:, None])
        counts = np.maximum(resp.sum(axis=0), 1e-12)
        model.weights = counts / counts.sum()
        model.means = (resp.T @ frames) / counts[:, None]
        model.variances = np.maximum(
            (resp.T @ frames_sq) / counts[:, None] - model.means**2, VARIANCE_FLOOR
        )

        if ll - prev_ll < tol_per_frame * n:
            break
        prev_ll = ll
    return model


def train_tag_models(
    corpus: Sequence[FeatureMatrix],
    labels: Mapping[str, frozenset[str] | set[str]],
    tag: str,
    M: int = DEFAULT_COMPONENTS,
    seed: int = 0,
) -> GmmTagModel:
    """Fit the positive/negative mixture pair for one tag.

    Positive frames come from every chunk labeled with the tag; negative
    frames from all remaining chunks.  Both fits use the same seed so that
    swapping the tag's chunk membership exactly swaps the two models.
    """
    positive_pool = [fm.features for fm in corpus if tag in labels[fm.chunk_id]]
    negative_pool = [fm.features for fm in corpus if tag not in labels[fm.chunk_id]]
    if not positive_pool:
        raise DataError(f"tag {tag!r}: no positive training chunks")
    if not negative_pool:
        raise DataError(f"tag {tag!r}: no negative training chunks")
    return GmmTagModel(
        tag=tag,
        positive=fit_gmm(np.vstack(positive_pool), M, seed),
        negative=fit_gmm(np.vstack(negative_pool), M, seed),
    )


def score_chunk(model: GmmTagModel, frames: np.ndarray | FeatureMatrix) -> float:
    """Log-likelihood ratio summed over all frames of the chunk."""
    if isinstance(frames, FeatureMatrix):
        frames = frames.features
    frames = np.asarray(frames, dtype=np.float64)
    if len(frames) == 0:
        raise DataError("cannot score an empty frame set")
    return float(log_densities(model.positive, frames).sum() - log_densities(model.negative, frames).sum())
