"""Sample-quality metrics: EMD, k-NN precision/recall, 2-D Frechet distance, CIs."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import ContractError

CI_Z = 2.17  # two-sided 97% normal quantile
FRECHET_JITTER = 1e-9


def emd(X: np.ndarray, Y: np.ndarray) -> float:
    """Mean cost of the optimal one-to-one matching between equal-size point sets."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    if X.shape != Y.shape:
        raise ContractError(f"EMD needs equal-size sets, got {X.shape} and {Y.shape}")
    if len(X) == 0:
        raise ContractError("EMD of empty sets is undefined")
    cost = cdist(X, Y)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / len(X))


def _kth_neighbour_radius(P: np.ndarray, k: int) -> np.ndarray:
    d = cdist(P, P)
    # column 0 of the sorted row is the point itself
    return np.partition(d, k, axis=1)[:, k]


def precision_recall(real: np.ndarray, fake: np.ndarray, k: int = 3) -> Tuple[float, float]:
    """k-NN precision and recall.

    A real point counts towards recall if it falls inside the k-th-neighbour
    ball of some fake point; precision swaps the roles.
    """
    real = np.asarray(real, float)
    fake = np.asarray(fake, float)
    if len(real) <= k or len(fake) <= k:
        raise ContractError(f"precision/recall needs more than k={k} points per set")
    r_real = _kth_neighbour_radius(real, k)
    r_fake = _kth_neighbour_radius(fake, k)
    d = cdist(real, fake)  # d[i, j] = |real_i - fake_j|
    recall = np.mean(np.any(d <= r_fake[None, :], axis=1))
    precision = np.mean(np.any(d <= r_real[:, None], axis=0))
    return float(precision), float(recall)


def _trace_sqrt_product(A: np.ndarray, B: np.ndarray) -> float:
    # AB has non-negative real eigenvalues l1, l2 for SPD A, B, and
    # (sqrt l1 + sqrt l2)^2 = tr(AB) + 2 sqrt(det AB)
    M = A @ B
    det = max(np.linalg.det(M), 0.0)
    return math.sqrt(max(np.trace(M) + 2.0 * math.sqrt(det), 0.0))


def frechet_2d(X: np.ndarray, Y: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two 2-D point sets."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    if len(X) < 3 or len(Y) < 3 or X.shape[1] != 2 or Y.shape[1] != 2:
        raise ContractError("frechet_2d needs at least 3 points per 2-D set")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    jitter = FRECHET_JITTER * np.eye(2)
    cx = np.cov(X, rowvar=False) + jitter
    cy = np.cov(Y, rowvar=False) + jitter
    value = float(np.sum((mx - my) ** 2) + np.trace(cx) + np.trace(cy) - 2.0 * _trace_sqrt_product(cx, cy))
    return max(value, 0.0)


def ci_report(values: Sequence[float], z: float = CI_Z) -> Tuple[float, float]:
    """Mean and half-width ``z * s / sqrt(n)`` with the sample standard deviation."""
    v = np.asarray(values, float)
    if len(v) < 2:
        raise ContractError("a confidence interval needs at least two values")
    return float(v.mean()), float(z * v.std(ddof=1) / math.sqrt(len(v)))


@dataclass
class MetricSummary:
    name: str
    mean: float
    half_width: float
    n_repeats: int

    @classmethod
    def from_values(cls, name: str, values: Sequence[float]) -> "MetricSummary":
        if len(values) == 1:
            return cls(name, float(values[0]), 0.0, 1)
        m, h = ci_report(values)
        return cls(name, m, h, len(values))


@dataclass
class MetricsReport:
    metrics: Dict[str, MetricSummary] = field(default_factory=dict)
    acceptance_rate: Optional[float] = None
    ess: Optional[float] = None
    wall_time_us: Optional[MetricSummary] = None

    def add(self, name: str, values: Sequence[float]) -> None:
        self.metrics[name] = MetricSummary.from_values(name, values)

    def to_dict(self) -> dict:
        return {
            "metrics": {k: vars(v) for k, v in self.metrics.items()},
            "acceptance_rate": self.acceptance_rate,
            "ess": self.ess,
            "wall_time_us": vars(self.wall_time_us) if self.wall_time_us else None,
        }


def _pair_metrics(real: np.ndarray, fake: np.ndarray, k: int) -> Tuple[float, float, float, float]:
    p, r = precision_recall(real, fake, k)
    return emd(real, fake), p, r, frechet_2d(real, fake)


def evaluate_sets(real_sets: List[np.ndarray], fake_sets: List[np.ndarray], k: int = 3,
                  workers: int = 1) -> MetricsReport:
    """EMD, precision, recall and Frechet distance over paired repeats.

    ``workers > 1`` scores the pairs on a thread pool; results do not depend on it.
    """
    if len(real_sets) != len(fake_sets) or not real_sets:
        raise ContractError("need the same non-zero number of real and fake sets")
    pairs = list(zip(real_sets, fake_sets))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(lambda rf: _pair_metrics(rf[0], rf[1], k), pairs))
    else:
        scores = [_pair_metrics(r, f, k) for r, f in pairs]
    vals = dict(zip(("emd", "precision", "recall", "frechet"), map(list, zip(*scores))))
    report = MetricsReport()
    for name, v in vals.items():
        report.add(name, v)
    return report
