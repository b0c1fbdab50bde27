"""Bag-level multiple-instance SVM baseline with iterative witness selection.

A chunk is a bag whose instances are mean-pooled feature rows over 400 ms
segments (200 ms stride).  Training alternates between fitting a linear SVM
on one witness instance per positive bag (initialized at the bag centroid)
plus every negative instance, and reselecting each witness as the instance
maximizing the current decision function, until the selection stabilizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, ShapeError
from .features import FeatureMatrix

DEFAULT_REGULARIZATION = 1.0
DEFAULT_MAX_OUTER = 50


@dataclass
class Bag:
    """Instances of one chunk with its bag-level label in {-1, +1}."""

    bag_id: str
    instances: np.ndarray  # (n_instances, dim)
    label: int

    def __post_init__(self) -> None:
        self.instances = np.atleast_2d(np.asarray(self.instances, dtype=np.float64))
        if len(self.instances) < 1:
            raise DataError(f"bag {self.bag_id!r} has no instances")
        if self.label not in (-1, 1):
            raise DataError(f"bag {self.bag_id!r}: label must be -1 or +1, got {self.label}")


@dataclass
class LinearSvm:
    w: np.ndarray
    b: float
    A: float


@dataclass
class MisvmResult:
    svm: LinearSvm
    converged: bool
    outer_iterations: int
    witness_indices: dict[str, int]


def pool_instances(
    features: FeatureMatrix, window_ms: float = 400.0, hop_ms: float = 200.0
) -> np.ndarray:
    """Mean-pool feature rows into instances over a sliding segment.

    Instance k averages the frames whose start times fall in
    [k*hop_ms, k*hop_ms + window_ms); the trailing partial segment is dropped.
    """
    duration = features.duration_ms
    if duration < window_ms:
        raise DataError(
            f"chunk {features.chunk_id!r}: {duration:.0f} ms shorter than one "
            f"{window_ms:.0f} ms segment"
        )
    n_instances = int(math.floor((duration - window_ms) / hop_ms + 1e-9)) + 1
    frame_hop = features.hop_ms
    n_frames = features.n_frames
    instances = np.empty((n_instances, features.features.shape[1]))
    for k in range(n_instances):
        start_time = k * hop_ms
        first = int(math.ceil(start_time / frame_hop - 1e-9))
        last = min(int(math.ceil((start_time + window_ms) / frame_hop - 1e-9)), n_frames)
        instances[k] = features.features[first:last].mean(axis=0)
    return instances


def build_bags(
    corpus: Sequence[FeatureMatrix],
    labels: Mapping[str, frozenset[str] | set[str]],
    tag: str,
    window_ms: float = 400.0,
    hop_ms: float = 200.0,
) -> list[Bag]:
    """One bag per chunk, labeled +1 when the chunk carries the tag."""
    return [
        Bag(
            bag_id=fm.chunk_id,
            instances=pool_instances(fm, window_ms, hop_ms),
            label=1 if tag in labels[fm.chunk_id] else -1,
        )
        for fm in corpus
    ]


def decision_values(svm: LinearSvm, instances: np.ndarray) -> np.ndarray:
    instances = np.atleast_2d(np.asarray(instances, dtype=np.float64))
    if instances.shape[1] != len(svm.w):
        raise ShapeError(f"instance dimension {instances.shape[1]} != weight dimension {len(svm.w)}")
    return instances @ svm.w + svm.b


def bag_margin(svm: LinearSvm, bag: Bag) -> float:
    """Functional bag margin: label times the best instance decision value."""
    return bag.label * float(decision_values(svm, bag.instances).max())


def misvm_score(svm: LinearSvm, bag: Bag) -> float:
    """Bag-level test score: maximum instance decision value."""
    return float(decision_values(svm, bag.instances).max())


def svm_objective(svm: LinearSvm, X: np.ndarray, y: np.ndarray) -> float:
    """Primal objective 0.5*||w||^2 + A * sum_i hinge(1 - y_i f(x_i))."""
    margins = y * (X @ svm.w + svm.b)
    return 0.5 * float(svm.w @ svm.w) + svm.A * float(np.maximum(0.0, 1.0 - margins).sum())


def solve_linear_svm(
    positives: np.ndarray,
    negatives: np.ndarray,
    A: float = DEFAULT_REGULARIZATION,
    seed: int = 0,
    max_iter: int = 100_000,
    gap_tol: float = 1e-4,
    batch_size: int = 64,
) -> LinearSvm:
    """Minimize 0.5*||w||^2 + A*sum hinge by averaged stochastic subgradient descent.

    The run is deterministic given the seed: mini-batches are sampled from a
    seeded generator, steps follow the 1/(lambda*t) schedule on the
    equivalent sample-average objective (lambda = 1/(n*A)) with a safety
    projection, and the returned solution averages the iterates of the
    second half of the run.  Stops early when the relative objective
    improvement between checkpoints falls below ``gap_tol``.
    """
    positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if len(positives) == 0 or len(negatives) == 0:
        raise DataError("both classes must be nonempty")
    X = np.vstack([positives, negatives])
    y = np.concatenate([np.ones(len(positives)), -np.ones(len(negatives))])
    n, dim = X.shape

    if A == 0.0:
        return LinearSvm(w=np.zeros(dim), b=0.0, A=0.0)

    lam = 1.0 / (n * A)
    radius = math.sqrt(2.0 / lam)  # f(w*) <= f(0) = 1 bounds the optimum
    b_bound = radius * math.sqrt(float((X**2).sum(axis=1).max())) + 1.0
    rng = np.random.default_rng(seed)
    batch = min(batch_size, n)

    w = np.zeros(dim)
    b = 0.0
    w_avg = np.zeros(dim)
    b_avg = 0.0
    n_avg = 0
    check_every = 2000
    prev_obj = math.inf
    halfway = max_iter // 2

    for t in range(1, max_iter + 1):
        idx = rng.integers(0, n, size=batch)
        xb, yb = X[idx], y[idx]
        violating = yb * (xb @ w + b) < 1.0
        step = 1.0 / (lam * t)
        w *= 1.0 - 1.0 / t  # (1 - step*lam) * w
        if violating.any():
            pull = (yb[violating, None] * xb[violating]).sum(axis=0) / batch
            w += step * pull
            b += step * lam * yb[violating].sum() / batch
        norm = math.sqrt(float(w @ w))
        if norm > radius:
            w *= radius / norm
        b = min(max(b, -b_bound), b_bound)
        if t > halfway:
            n_avg += 1
            w_avg += (w - w_avg) / n_avg
            b_avg += (b - b_avg) / n_avg
            if n_avg % check_every == 0:
                obj = svm_objective(LinearSvm(w=w_avg, b=b_avg, A=A), X, y)
                if abs(prev_obj - obj) < gap_tol * max(1.0, abs(obj)):
                    break
                prev_obj = obj

    if n_avg == 0:
        w_avg, b_avg = w, b
    return LinearSvm(w=w_avg, b=b_avg, A=A)


def misvm_train(
    bags: Sequence[Bag],
    A: float = DEFAULT_REGULARIZATION,
    max_outer: int = DEFAULT_MAX_OUTER,
    seed: int = 0,
    solver_max_iter: int = 100_000,
) -> MisvmResult:
    """Iterative MI-SVM training.

    Witnesses start at each positive bag's centroid; each round fits a linear
    SVM on the witnesses against every instance of the negative bags, then
    reselects each witness as the instance with the highest decision value
    (ties broken toward the lowest index).  Stops when the witnesses no
    longer change, or returns the current model flagged unconverged after
    ``max_outer`` rounds.
    """
    positive_bags = [bag for bag in bags if bag.label == 1]
    negative_bags = [bag for bag in bags if bag.label == -1]
    if not positive_bags:
        raise DataError("MI-SVM training requires at least one positive bag")
    if not negative_bags:
        raise DataError("MI-SVM training requires at least one negative bag")
    negatives = np.vstack([bag.instances for bag in negative_bags])

    witnesses = np.stack([bag.instances.mean(axis=0) for bag in positive_bags])
    witness_idx = [-1] * len(positive_bags)
    svm = None
    for outer in range(max_outer):
        svm = solve_linear_svm(
            witnesses, negatives, A, seed=seed + outer, max_iter=solver_max_iter
        )
        witness_idx = [
            int(np.argmax(decision_values(svm, bag.instances))) for bag in positive_bags
        ]
        new_witnesses = np.stack(
            [bag.instances[j] for bag, j in zip(positive_bags, witness_idx)]
        )
        if np.array_equal(new_witnesses, witnesses):
            return MisvmResult(
                svm=svm,
                converged=True,
                outer_iterations=outer + 1,
                witness_indices={
                    bag.bag_id: j for bag, j in zip(positive_bags, witness_idx)
                },
            )
        witnesses = new_witnesses
    return MisvmResult(
        svm=svm,
        converged=False,
        outer_iterations=max_outer,
        witness_indices={bag.bag_id: j for bag, j in zip(positive_bags, witness_idx)},
    )
