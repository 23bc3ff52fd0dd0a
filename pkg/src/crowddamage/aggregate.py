"""Consensus inference over the label matrix.

Three aggregators share the same result shape: weighted majority voting,
the classic confusion-matrix EM estimator, and its Bayesian variant solved
by coordinate-ascent variational inference. Classes are the four response
labels (empty / minor / significant / catastrophic); unseen cells carry no
likelihood. All updates run on a synchronous (Jacobi) schedule, so results
are deterministic for a given matrix and configuration.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .matrix import LabelMatrix
from .model import N_CLASSES, ResponseLabel

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# digamma
# --------------------------------------------------------------------------

def digamma(x):
    """psi(x) for x > 0; scalars or arrays, accurate well past 1e-10.

    Small arguments are shifted up with psi(x) = psi(x+1) - 1/x until
    x >= 6, then the asymptotic (de Moivre) expansion is applied.
    """
    scalar_in = np.ndim(x) == 0
    z = np.array(x, dtype=float, copy=True)
    if z.size and (not np.all(np.isfinite(z)) or np.any(z <= 0.0)):
        raise ValueError("digamma requires x > 0")
    acc = np.zeros_like(z)
    for _ in range(6):  # x > 0 reaches 6 within six unit shifts
        low = z < 6.0
        if not low.any():
            break
        acc[low] -= 1.0 / z[low]
        z[low] += 1.0
    r = 1.0 / (z * z)
    # Bernoulli-number tail through x^-12; truncation < 2e-12 at x = 6
    tail = r * (-1.0 / 12.0 + r * (1.0 / 120.0 + r * (-1.0 / 252.0 + r * (
        1.0 / 240.0 + r * (-1.0 / 132.0 + r * (691.0 / 32760.0))))))
    acc += np.log(z) - 0.5 / z + tail
    return float(acc) if scalar_in else acc


# --------------------------------------------------------------------------
# shared result plumbing
# --------------------------------------------------------------------------

@dataclass
class MVWeights:
    """Per-label vote weights; empty is down-weighted by default because a
    crowd that misses real objects floods the matrix with empty labels."""

    empty: float = 0.5
    minor: float = 1.0
    significant: float = 1.0
    catastrophic: float = 1.0

    def __post_init__(self):
        if min(self.empty, self.minor, self.significant, self.catastrophic) <= 0:
            raise ValueError("vote weights must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.empty, self.minor, self.significant, self.catastrophic])

    @classmethod
    def unweighted(cls) -> "MVWeights":
        return cls(empty=1.0)


@dataclass
class IbccPriors:
    """Dirichlet pseudo-counts: ``nu0`` over true classes, ``alpha0`` over
    each volunteer's confusion rows (shared, with optional per-volunteer
    overrides to encode known skill)."""

    nu0: np.ndarray
    alpha0: np.ndarray
    per_volunteer: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.nu0 = np.asarray(self.nu0, dtype=float)
        self.alpha0 = np.asarray(self.alpha0, dtype=float)
        if self.nu0.shape != (N_CLASSES,) or self.alpha0.shape != (N_CLASSES, N_CLASSES):
            raise ValueError(f"priors must have shapes ({N_CLASSES},) and {(N_CLASSES, N_CLASSES)}")
        if self.nu0.min() <= 0 or self.alpha0.min() <= 0:
            raise ValueError("prior pseudo-counts must be positive")
        for vid, a in self.per_volunteer.items():
            a = np.asarray(a, dtype=float)
            if a.shape != (N_CLASSES, N_CLASSES) or a.min() <= 0:
                raise ValueError(f"override for volunteer {vid!r} must be a positive {N_CLASSES}x{N_CLASSES} matrix")
            self.per_volunteer[vid] = a

    def alpha_for(self, volunteer_id: str) -> np.ndarray:
        return self.per_volunteer.get(volunteer_id, self.alpha0)

    @classmethod
    def default(cls, diagonal_boost: float = 1.5) -> "IbccPriors":
        """Flat class prior; confusion prior 1 + boost on the diagonal,
        a weak "better than chance" assumption."""
        return cls(nu0=np.ones(N_CLASSES), alpha0=np.ones((N_CLASSES, N_CLASSES)) + diagonal_boost * np.eye(N_CLASSES))


@dataclass
class AggregationConfig:
    max_iters: int = 200
    tol: float = 1e-4
    smoothing: float = 0.1  # additive smoothing for the EM M-step

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0 or self.smoothing < 0:
            raise ValueError("tol and smoothing must be >= 0")


@dataclass
class AggregationResult:
    """Per-object posterior class distributions and hard consensus labels."""

    objects: list[str]
    class_probs: np.ndarray           # (N, 4), rows sum to 1
    hard_labels: list[ResponseLabel]
    response_counts: np.ndarray       # (N, 4) ints, unseen excluded
    no_response: np.ndarray           # (N,) flags: no volunteer saw the object
    iterations: int
    converged: bool
    final_delta: float = 0.0          # last sweep's max posterior change

    def hard_label_map(self) -> dict[str, ResponseLabel]:
        return dict(zip(self.objects, self.hard_labels))


@dataclass
class VolunteerPosterior:
    """Posterior Dirichlet counts over one volunteer's confusion rows."""

    volunteer_id: str
    alpha: np.ndarray

    def mean_confusion(self) -> np.ndarray:
        return self.alpha / self.alpha.sum(axis=1, keepdims=True)


@dataclass
class DawidSkeneOutput:
    result: AggregationResult
    confusions: np.ndarray  # (K, 4, 4) point estimates
    class_prior: np.ndarray


@dataclass
class IbccOutput:
    result: AggregationResult
    posteriors: list[VolunteerPosterior]
    class_counts: np.ndarray  # posterior Dirichlet counts over classes


def argmax_severity(dist: np.ndarray) -> int:
    """Index of the maximum, ties broken toward higher severity."""
    return len(dist) - 1 - int(np.argmax(dist[::-1]))


def _response_counts(dense: np.ndarray) -> np.ndarray:
    counts = np.zeros((dense.shape[0], N_CLASSES), dtype=np.int64)
    for j in range(N_CLASSES):
        counts[:, j] = (dense == j).sum(axis=1)
    return counts


def _finalize(objects, probs, counts, iterations, converged, final_delta=0.0,
              empty_when_silent: bool = False) -> AggregationResult:
    no_response = counts.sum(axis=1) == 0
    hard = []
    for i in range(probs.shape[0]):
        total = probs[i].sum()
        if not math.isclose(total, 1.0, abs_tol=1e-9):
            raise AssertionError(f"class distribution for object {objects[i]} sums to {total}")
        if empty_when_silent and no_response[i]:
            hard.append(ResponseLabel.EMPTY)
        else:
            hard.append(ResponseLabel(argmax_severity(probs[i])))
    if no_response.any():
        logger.warning("%d objects received no responses", int(no_response.sum()))
    return AggregationResult(objects=list(objects), class_probs=probs, hard_labels=hard,
                             response_counts=counts, no_response=no_response,
                             iterations=iterations, converged=converged,
                             final_delta=final_delta)


def _vote_init(counts: np.ndarray, smoothing: float) -> np.ndarray:
    """Class posterior seeded from per-object vote proportions; objects
    nobody responded to start uniform."""
    seeded = counts.astype(float) + smoothing
    totals = seeded.sum(axis=1, keepdims=True)
    probs = np.full(counts.shape, 1.0 / N_CLASSES)
    ok = totals[:, 0] > 0
    probs[ok] = seeded[ok] / totals[ok]
    return probs


def _check_matrix(matrix: LabelMatrix) -> np.ndarray:
    dense = matrix.to_dense()
    if dense.size == 0 or not (dense >= 0).any():
        raise ValueError("matrix holds no responses; nothing to aggregate")
    return dense


# --------------------------------------------------------------------------
# aggregators
# --------------------------------------------------------------------------

def majority_vote(matrix: LabelMatrix, weights: MVWeights | None = None) -> AggregationResult:
    """Weighted vote counting; the consensus distribution is the normalized
    weighted count vector. Objects nobody responded to come out empty with a
    uniform distribution and a raised flag.
    """
    weights = weights or MVWeights()
    dense = matrix.to_dense()
    counts = _response_counts(dense)
    scores = counts * weights.as_array()
    totals = scores.sum(axis=1, keepdims=True)
    silent = totals[:, 0] == 0
    probs = np.full((len(matrix.objects), N_CLASSES), 1.0 / N_CLASSES)
    active = ~silent
    probs[active] = scores[active] / totals[active]
    return _finalize(matrix.objects, probs, counts, iterations=1, converged=True,
                     empty_when_silent=True)


def dawid_skene_em(matrix: LabelMatrix,
                   config: AggregationConfig | None = None) -> DawidSkeneOutput:
    """Confusion-matrix EM.

    E-step: per-object class posterior from current class prior and
    per-volunteer confusion matrices (log domain, unseen cells skipped).
    M-step: maximum-likelihood re-estimates with additive smoothing.
    Initialized from unweighted vote proportions; stops when no posterior
    entry moves more than ``tol``.
    """
    config = config or AggregationConfig()
    dense = _check_matrix(matrix)
    n_objects, n_volunteers = dense.shape
    counts = _response_counts(dense)
    q = _vote_init(counts, smoothing=0.0)
    seen = dense >= 0
    s = config.smoothing
    iterations = 0
    converged = False
    confusions = np.zeros((n_volunteers, N_CLASSES, N_CLASSES))
    class_prior = np.full(N_CLASSES, 1.0 / N_CLASSES)
    for iterations in range(1, config.max_iters + 1):
        # M-step
        class_prior = (q.sum(axis=0) + s) / (n_objects + s * N_CLASSES)
        for k in range(n_volunteers):
            resp = dense[:, k]
            mask = seen[:, k]
            soft = np.zeros((N_CLASSES, N_CLASSES))
            for label in range(N_CLASSES):
                hits = mask & (resp == label)
                if hits.any():
                    soft[:, label] = q[hits].sum(axis=0)
            row_totals = soft.sum(axis=1, keepdims=True)
            confusions[k] = (soft + s) / (row_totals + s * N_CLASSES)
        # E-step
        log_rho = np.tile(np.log(class_prior), (n_objects, 1))
        for k in range(n_volunteers):
            mask = seen[:, k]
            if mask.any():
                log_rho[mask] += np.log(confusions[k][:, dense[mask, k]]).T
        q_new = _softmax_rows(log_rho)
        delta = float(np.abs(q_new - q).max())
        q = q_new
        if delta < config.tol:
            converged = True
            break
    result = _finalize(matrix.objects, q, counts, iterations, converged, final_delta=delta)
    return DawidSkeneOutput(result=result, confusions=confusions, class_prior=class_prior)


def ibcc_vb(matrix: LabelMatrix, priors: IbccPriors | None = None,
            config: AggregationConfig | None = None) -> IbccOutput:
    """Bayesian confusion-matrix aggregation via variational inference.

    Coordinate ascent over Dirichlet posteriors: class counts
    nu_j = nu0_j + sum_i q_ij; per-volunteer confusion counts
    alpha_jl = alpha0_jl + sum_i q_ij [c_ik = l]; then each object's
    posterior refreshes through expected log probabilities
    (digamma differences), softmax-normalized with max subtraction.
    Stops when no q entry moves more than ``tol``.
    """
    priors = priors or IbccPriors.default()
    config = config or AggregationConfig()
    dense = _check_matrix(matrix)
    n_objects, n_volunteers = dense.shape
    counts = _response_counts(dense)
    q = _vote_init(counts, smoothing=1.0)
    seen = dense >= 0

    alpha0 = np.stack([priors.alpha_for(v) for v in matrix.volunteers])
    alpha = alpha0.copy()
    nu = priors.nu0.copy()
    iterations = 0
    converged = False
    for iterations in range(1, config.max_iters + 1):
        nu = priors.nu0 + q.sum(axis=0)
        for k in range(n_volunteers):
            resp = dense[:, k]
            mask = seen[:, k]
            soft = np.zeros((N_CLASSES, N_CLASSES))
            for label in range(N_CLASSES):
                hits = mask & (resp == label)
                if hits.any():
                    soft[:, label] = q[hits].sum(axis=0)
            alpha[k] = alpha0[k] + soft
        e_log_kappa = digamma(nu) - digamma(nu.sum())
        log_rho = np.tile(e_log_kappa, (n_objects, 1))
        for k in range(n_volunteers):
            mask = seen[:, k]
            if mask.any():
                e_log_pi = digamma(alpha[k]) - digamma(alpha[k].sum(axis=1))[:, None]
                log_rho[mask] += e_log_pi[:, dense[mask, k]].T
        q_new = _softmax_rows(log_rho)
        delta = float(np.abs(q_new - q).max())
        q = q_new
        if delta < config.tol:
            converged = True
            break
    posteriors = [VolunteerPosterior(volunteer_id=v, alpha=alpha[k].copy())
                  for k, v in enumerate(matrix.volunteers)]
    result = _finalize(matrix.objects, q, counts, iterations, converged, final_delta=delta)
    return IbccOutput(result=result, posteriors=posteriors, class_counts=nu)


def _softmax_rows(log_rho: np.ndarray) -> np.ndarray:
    shifted = log_rho - log_rho.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)
