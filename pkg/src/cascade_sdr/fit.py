"""Learning edge types, initial probabilities and transition kernels from labelled traces."""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._validation import check_labels, check_traces
from .cascade import SOURCE
from .kernels import ModelSet

__all__ = [
    "pairing_theta",
    "pairing_pair",
    "kmeans_pp_init",
    "lloyd",
    "KMeansEdgeClassifier",
    "PairingEdgeClassifier",
    "IdentityEdgeClassifier",
    "fit_kmeans_classifier",
    "estimate_initial",
    "dcb_raw",
    "DcbEstimate",
    "estimate_transitions_dcb",
    "FitResult",
    "fit_offline",
]


def pairing_theta(score):
    """Edge type of a class-score vector from its two largest entries.

    With ``l1`` the index of the largest entry and ``l2`` of the second
    largest, the type is ``l1 (M - 1) + l2 - [l2 > l1]``. Exact ties go to
    the smaller index.
    """
    score = np.asarray(score, dtype=float)
    if score.ndim != 1 or score.size < 2:
        raise ValueError("pairing needs a score vector with at least two classes")
    order = np.argsort(-score, kind="stable")
    l1, l2 = int(order[0]), int(order[1])
    return l1 * (score.size - 1) + l2 - int(l2 > l1)


def pairing_pair(theta, n_classes):
    """Inverse of :func:`pairing_theta`: the ordered pair ``(l1, l2)``."""
    l1, r = divmod(int(theta), n_classes - 1)
    return l1, r + int(r >= l1)


def kmeans_pp_init(X, k, rng):
    """k-means++ seeding: each new centre is drawn with probability ∝ D(x)^2."""
    n = X.shape[0]
    centres = np.empty((k, X.shape[1]))
    centres[0] = X[rng.integers(n)]
    d2 = np.sum((X - centres[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centres[c] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centres[c]) ** 2, axis=1))
    return centres


def _assign(X, centres):
    d2 = (
        np.sum(X**2, axis=1)[:, None]
        - 2.0 * X @ centres.T
        + np.sum(centres**2, axis=1)[None, :]
    )
    labels = np.argmin(d2, axis=1)
    return labels, np.sum((X - centres[labels]) ** 2, axis=1)


def lloyd(X, centres, tol=1e-6, max_iter=100):
    """Lloyd iterations from ``centres``.

    Returns ``(centres, labels, objectives)`` where ``objectives[i]`` is the
    within-cluster sum of squares after the ``i``-th assignment. Empty
    clusters keep their previous centre.
    """
    centres = centres.copy()
    objectives = []
    for _ in range(max_iter):
        labels, dist = _assign(X, centres)
        objectives.append(float(dist.sum()))
        new = centres.copy()
        for c in range(centres.shape[0]):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(axis=0)
        shift = np.max(np.abs(new - centres))
        centres = new
        if shift < tol:
            break
    labels, dist = _assign(X, centres)
    objectives.append(float(dist.sum()))
    return centres, labels, objectives


def _edge_matrix(traces):
    return np.concatenate([np.hstack([t.xu, t.xv]) for t in traces if len(t)])


class KMeansEdgeClassifier:
    """Nearest-centroid edge typing over concatenated ``(xu, xv)`` features."""

    def __init__(self, centroids, objectives=None):
        self.centroids = np.asarray(centroids, dtype=float)
        self.objectives = list(objectives or [])

    @property
    def z_count(self):
        return self.centroids.shape[0]

    def classify(self, xu, xv):
        X = np.hstack([np.atleast_2d(xu), np.atleast_2d(xv)])
        return _assign(X, self.centroids)[0]

    def transform(self, trace):
        if not trace.has_features:
            raise ValueError(f"trace {trace.trace_id!r} carries no features")
        if len(trace) == 0:
            return trace.with_types(np.zeros(0, dtype=int))
        return trace.with_types(self.classify(trace.xu, trace.xv))

    def to_dict(self):
        return {"mode": "kmeans", "z_count": self.z_count, "centroids": self.centroids.tolist()}


class PairingEdgeClassifier:
    """Types an edge by pairing the top-two classes of an edge scorer.

    ``scorer`` must provide ``score_edges(xu, xv)`` returning an
    ``(n, M)`` array, e.g. :class:`~cascade_sdr.gnn.GinScorer`.
    """

    def __init__(self, scorer):
        self.scorer = scorer
        if scorer.n_classes < 2:
            raise ValueError("pairing needs at least two classes")

    @property
    def z_count(self):
        M = self.scorer.n_classes
        return M * (M - 1)

    def classify(self, xu, xv):
        scores = self.scorer.score_edges(xu, xv)
        return np.array([pairing_theta(s) for s in scores], dtype=int)

    def transform(self, trace):
        if not trace.has_features:
            raise ValueError(f"trace {trace.trace_id!r} carries no features")
        if len(trace) == 0:
            return trace.with_types(np.zeros(0, dtype=int))
        return trace.with_types(self.classify(trace.xu, trace.xv))

    def to_dict(self):
        d = {"mode": "pairing", "z_count": self.z_count}
        weights = getattr(self.scorer, "weights", None)
        if weights is not None:
            d["weights"] = weights.to_dict()
        return d


class IdentityEdgeClassifier:
    """Keeps the edge types already stored on the traces."""

    def __init__(self, z_count):
        self.z_count = int(z_count)

    def transform(self, trace):
        if not trace.has_types:
            raise ValueError(f"trace {trace.trace_id!r} has no edge types")
        if len(trace) and trace.types.max() >= self.z_count:
            raise ValueError(
                f"trace {trace.trace_id!r}: edge type {int(trace.types.max())} "
                f"out of range for {self.z_count} types"
            )
        return trace

    def to_dict(self):
        return {"mode": "identity", "z_count": self.z_count}


def fit_kmeans_classifier(traces, z_count, seed=0, tol=1e-6, max_iter=100):
    """k-means++ seeded Lloyd clustering of all training edges into ``z_count`` types."""
    traces = check_traces(traces, require_features=True)
    if z_count < 1:
        raise ValueError("z_count must be >= 1")
    X = _edge_matrix(traces)
    n_distinct = np.unique(X, axis=0).shape[0]
    if n_distinct < z_count:
        raise ValueError(f"{n_distinct} distinct edges cannot form {z_count} clusters")
    rng = np.random.default_rng(seed)
    centres = kmeans_pp_init(X, z_count, rng)
    centres, _, objectives = lloyd(X, centres, tol, max_iter)
    return KMeansEdgeClassifier(centres, objectives)


def _class_count(labels, n_classes):
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    counts = np.bincount(labels, minlength=n_classes)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"class {int(empty[0])} has no training traces")
    return counts


def estimate_initial(traces, labels=None, z_count=None, n_classes=None):
    """Frequency estimate of the source-edge type distribution per class.

    The raw estimate counts source edges of each type per training trace of
    the class; it exceeds one in total when traces have several source
    edges, so rows are also returned renormalised.

    Returns
    -------
    eta_hat : ndarray (M, Z)
        Renormalised rows.
    raw : ndarray (M, Z)
        Counts divided by the number of traces of the class.
    """
    traces = check_traces(traces, require_types=True)
    if not traces:
        raise ValueError("empty training set")
    labels = check_labels(traces, labels)
    per_class = _class_count(labels, n_classes)
    if z_count is None:
        z_count = 1 + max(int(t.types.max()) for t in traces if len(t))
    counts = np.zeros((per_class.size, z_count))
    for t, y in zip(traces, labels):
        roots = t.parents == SOURCE
        if not roots.any():
            raise ValueError(f"trace {t.trace_id!r} has no source edge")
        np.add.at(counts[y], t.types[roots], 1.0)
    raw = counts / per_class[:, None]
    return raw / raw.sum(axis=1, keepdims=True), raw


def dcb_raw(counts, theta, s):
    """Unnormalised DCB values ``(N_ij + s theta_i) / (N_i + s)``; zero where ``N_i + s = 0``."""
    counts = np.asarray(counts, dtype=float)
    theta = np.asarray(theta, dtype=float)
    denom = counts.sum(axis=-1, keepdims=True) + s
    with np.errstate(invalid="ignore", divide="ignore"):
        raw = (counts + s * theta[..., None]) / denom
    return np.where(denom > 0, raw, 0.0)


class DcbEstimate(NamedTuple):
    alpha_hat: np.ndarray
    theta: np.ndarray
    counts: np.ndarray
    alpha_raw: np.ndarray
    uniform_rows: list


def estimate_transitions_dcb(traces, labels=None, z_count=None, s=None, n_classes=None):
    """Dirichlet-Categorical posterior-mean transition kernels.

    ``theta[m, i]`` is the number of class-``m`` edges of type ``i`` per
    class-``m`` trace. With ``N[m, i, j]`` the class-``m`` transitions from
    ancestor type ``i`` to type ``j`` and ``N_i = sum_j N[m, i, j]``, the raw
    estimate is ``(N[m, i, j] + s theta[m, i]) / (N_i + s)``; each row is then
    renormalised. A row with no mass at all becomes uniform and is listed in
    ``uniform_rows``.
    """
    traces = check_traces(traces, require_types=True)
    if not traces:
        raise ValueError("empty training set")
    labels = check_labels(traces, labels)
    per_class = _class_count(labels, n_classes)
    M = per_class.size
    if z_count is None:
        z_count = 1 + max(int(t.types.max()) for t in traces if len(t))
    if s is None:
        s = float(z_count)
    if s < 0:
        raise ValueError("pseudo-count s must be >= 0")
    counts = np.zeros((M, z_count, z_count))
    occupancy = np.zeros((M, z_count))
    for t, y in zip(traces, labels):
        anc = t.ancestor_types()
        inner = anc >= 0
        np.add.at(counts[y], (anc[inner], t.types[inner]), 1.0)
        np.add.at(occupancy[y], t.types, 1.0)
    theta = occupancy / per_class[:, None]
    raw = dcb_raw(counts, theta, s)
    # normalising the numerator directly keeps s = 0 bit-identical to count / row total
    numer = counts + s * theta[..., None]
    sums = numer.sum(axis=2, keepdims=True)
    empty = sums[:, :, 0] <= 0
    alpha = np.where(sums > 0, numer / np.where(sums > 0, sums, 1.0), 1.0 / z_count)
    uniform_rows = [(int(m), int(i)) for m, i in zip(*np.nonzero(empty))]
    if uniform_rows:
        warnings.warn(
            f"{len(uniform_rows)} kernel rows had no data and were set to uniform",
            RuntimeWarning, stacklevel=2,
        )
    return DcbEstimate(alpha, theta, counts, raw, uniform_rows)


@dataclass(eq=False)
class FitResult:
    classifier: object
    eta_hat: np.ndarray
    alpha_hat: np.ndarray
    theta_prior: np.ndarray
    s: float
    counts: np.ndarray
    priors: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def model_set(self):
        return ModelSet.from_arrays(self.eta_hat, self.alpha_hat, self.priors)

    def sidecar(self):
        return {
            "theta": self.theta_prior.tolist(),
            "s": self.s,
            "counts": self.counts.tolist(),
            "classifier": self.classifier.to_dict(),
            "eta_raw": self.diagnostics.get("eta_raw", np.zeros(0)).tolist(),
            "uniform_rows": self.diagnostics.get("uniform_rows", []),
        }

    def save(self, model_path, sidecar_path):
        Path(model_path).write_text(json.dumps(self.model_set().to_dict(), indent=2) + "\n")
        Path(sidecar_path).write_text(json.dumps(self.sidecar(), indent=2) + "\n")


def fit_offline(traces, labels=None, classifier="identity", s=None, z_count=None,
                priors="uniform", n_classes=None, seed=0):
    """Type every edge, then estimate ``eta`` and DCB kernels per class.

    ``classifier`` is ``"identity"`` (use stored types), ``"kmeans"`` (fit a
    k-means typer with ``z_count`` clusters, default ``2 M``) or a fitted
    classifier object with a ``transform(trace)`` method.
    """
    traces = check_traces(traces)
    if not traces:
        raise ValueError("empty training set")
    labels = check_labels(traces, labels)
    M = int(labels.max()) + 1 if n_classes is None else n_classes
    if classifier == "identity":
        if z_count is None:
            z_count = 1 + max(int(t.types.max()) for t in traces if len(t))
        classifier = IdentityEdgeClassifier(z_count)
    elif classifier == "kmeans":
        classifier = fit_kmeans_classifier(traces, z_count or 2 * M, seed)
    z_count = classifier.z_count
    typed = [classifier.transform(t) for t in traces]
    eta_hat, eta_raw = estimate_initial(typed, labels, z_count, M)
    dcb = estimate_transitions_dcb(typed, labels, z_count, s, M)
    if isinstance(priors, str):
        if priors == "uniform":
            priors = np.full(M, 1.0 / M)
        elif priors == "empirical":
            priors = np.bincount(labels, minlength=M) / labels.size
        else:
            raise ValueError(f"priors must be 'uniform', 'empirical' or an array, got {priors!r}")
    return FitResult(
        classifier=classifier,
        eta_hat=eta_hat,
        alpha_hat=dcb.alpha_hat,
        theta_prior=dcb.theta,
        s=float(z_count if s is None else s),
        counts=dcb.counts,
        priors=np.asarray(priors, dtype=float),
        diagnostics={"eta_raw": eta_raw, "alpha_raw": dcb.alpha_raw,
                     "uniform_rows": dcb.uniform_rows},
    )
