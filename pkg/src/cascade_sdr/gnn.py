"""Sequential rule driven by per-node class scores.

Each arriving event ``i`` gets a class-score vector ``phi_i`` from a
:class:`NodeScorer`. The running statistic is the normalised product
``Phi_m ∝ prod_i phi_i[m]``, computed as a softmax of summed log scores, and
the stopping rule is the MSPRT's with ``Phi`` in place of the posterior.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import log_softmax

from .cascade import SOURCE, FrontierPolicy, sample_trace
from .msprt import DegenerateEvidenceError, log_increments, stop_on_trajectory

__all__ = [
    "SCORE_FLOOR",
    "ScorerContractError",
    "NodeScorer",
    "OracleScorer",
    "TabularScorer",
    "GinWeights",
    "GinScorer",
    "gin_forward",
    "AggregatorState",
    "aggregate_step",
    "run_gnn_sdr",
    "XiEstimate",
    "estimate_xi",
]

SCORE_FLOOR = 1e-300


class ScorerContractError(ValueError):
    """A score vector was not a strictly positive probability vector."""


class NodeScorer:
    """Maps each event of a trace to a probability vector over the M classes."""

    n_classes = None
    requires = "types"

    def score(self, trace):
        """Scores for every event, shape ``(len(trace), M)``."""
        raise NotImplementedError

    def log_score(self, trace):
        return np.log(np.maximum(self.score(trace), SCORE_FLOOR))


class OracleScorer(NodeScorer):
    """Class-normalised true likelihood of each event.

    ``phi_i[m] = alpha_m(z_i | A_i) / sum_j alpha_j(z_i | A_i)`` (source edges
    use ``eta``). With ``fold_prior`` the priors multiply every node's score,
    which makes the scorer miscalibrated by a factor that compounds per node.
    """

    def __init__(self, models, fold_prior=False):
        self.models = models
        self.fold_prior = fold_prior
        self.n_classes = models.n_classes

    def log_score(self, trace):
        inc = log_increments(trace, self.models, "markov")
        if self.fold_prior:
            with np.errstate(divide="ignore"):
                inc = inc + np.log(self.models.priors)
        dead = np.flatnonzero(~np.isfinite(inc.max(axis=1)))
        if dead.size:
            raise DegenerateEvidenceError(
                f"event {int(dead[0])} has zero probability under every hypothesis"
            )
        return np.maximum(log_softmax(inc, axis=1), math.log(SCORE_FLOOR))

    def score(self, trace):
        return np.exp(self.log_score(trace))


class TabularScorer(NodeScorer):
    """Lookup table ``table[ancestor, z]`` of class-probability vectors.

    Row ``ancestor = Z`` holds the scores of source edges.
    """

    def __init__(self, table):
        table = np.asarray(table, dtype=float)
        if table.ndim != 3 or table.shape[0] != table.shape[1] + 1:
            raise ValueError("table must have shape (Z + 1, Z, M)")
        if np.any(table <= 0):
            raise ScorerContractError("table entries must be strictly positive")
        self.table = table / table.sum(axis=2, keepdims=True)
        self.n_classes = table.shape[2]

    @property
    def n_states(self):
        return self.table.shape[1]

    @classmethod
    def from_counts(cls, traces, labels=None, z_count=None, n_classes=None, smoothing=1.0):
        """Estimate the table from typed training traces.

        Per class, transition counts (plus ``smoothing``) are normalised into
        conditional likelihoods ``p_m(z | ancestor)``; each ``(ancestor, z)``
        cell is then normalised across classes.
        """
        traces = list(traces)
        labels = [t.label for t in traces] if labels is None else list(labels)
        if not traces:
            raise ValueError("no training traces")
        if z_count is None:
            z_count = 1 + max(int(t.types.max()) for t in traces if len(t))
        if n_classes is None:
            n_classes = 1 + max(labels)
        counts = np.full((n_classes, z_count + 1, z_count), float(smoothing))
        for t, y in zip(traces, labels):
            anc = t.ancestor_types(fill=z_count)
            np.add.at(counts[y], (anc, t.types), 1.0)
        cond = counts / counts.sum(axis=2, keepdims=True)
        return cls(np.moveaxis(cond, 0, 2))

    def score(self, trace):
        anc = trace.ancestor_types(fill=self.n_states)
        return self.table[anc, trace.types]


@dataclass(frozen=True, eq=False)
class GinWeights:
    """Dense layer ``(W1, b1)``, GIN self-weight ``epsilon`` and linear head ``(W2, b2)``."""

    W1: np.ndarray
    b1: np.ndarray
    epsilon: float
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        W1 = np.atleast_2d(np.asarray(self.W1, dtype=float))
        b1 = np.asarray(self.b1, dtype=float).reshape(-1)
        W2 = np.atleast_2d(np.asarray(self.W2, dtype=float))
        b2 = np.asarray(self.b2, dtype=float).reshape(-1)
        h, _ = W1.shape
        if b1.shape != (h,):
            raise ValueError(f"b1 has shape {b1.shape}, expected ({h},)")
        if W2.shape[1] != h:
            raise ValueError(f"W2 has shape {W2.shape}, expected (M, {h})")
        if b2.shape != (W2.shape[0],):
            raise ValueError(f"b2 has shape {b2.shape}, expected ({W2.shape[0]},)")
        for name, val in (("W1", W1), ("b1", b1), ("W2", W2), ("b2", b2)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @property
    def d(self):
        return self.W1.shape[1]

    @property
    def h(self):
        return self.W1.shape[0]

    @property
    def n_classes(self):
        return self.W2.shape[0]

    @property
    def n_params(self):
        return self.W1.size + self.b1.size + self.W2.size + self.b2.size + 1

    def to_dict(self):
        return {
            "d": self.d, "h": self.h, "M": self.n_classes, "epsilon": self.epsilon,
            "W1": self.W1.tolist(), "b1": self.b1.tolist(),
            "W2": self.W2.tolist(), "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        w = cls(d["W1"], d["b1"], d["epsilon"], d["W2"], d["b2"])
        declared = (d.get("d", w.d), d.get("h", w.h), d.get("M", w.n_classes))
        if declared != (w.d, w.h, w.n_classes):
            raise ValueError(
                f"declared (d, h, M) = {declared} but arrays imply {(w.d, w.h, w.n_classes)}"
            )
        return w

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _gin_logits(x, parent_x, has_parent, w):
    x = np.atleast_2d(x)
    if x.shape[1] != w.d:
        raise ValueError(f"features have dimension {x.shape[1]}, weights expect {w.d}")
    hidden = (1.0 + w.epsilon) * np.maximum(x @ w.W1.T + w.b1, 0.0)
    if parent_x is not None:
        parent_x = np.atleast_2d(parent_x)
        if parent_x.shape != x.shape:
            raise ValueError(f"parent features have shape {parent_x.shape}, expected {x.shape}")
        ph = np.maximum(parent_x @ w.W1.T + w.b1, 0.0)
        hidden = hidden + ph * np.asarray(has_parent, dtype=float).reshape(-1, 1)
    return hidden @ w.W2.T + w.b2


def gin_forward(x, parent_x, w):
    """Class probabilities of one node from its features and its tree parent's.

    ``softmax(W2 ((1 + eps) relu(W1 x + b1) + relu(W1 parent_x + b1)) + b2)``;
    the parent term is dropped when ``parent_x`` is None.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if parent_x is None:
        logits = _gin_logits(x, None, None, w)
    else:
        logits = _gin_logits(x, np.asarray(parent_x, dtype=float).reshape(1, -1), [1.0], w)
    return np.exp(log_softmax(logits[0]))


class GinScorer(NodeScorer):
    """Scores each node with :func:`gin_forward`; the node of event ``i`` has
    features ``xv[i]`` and its parent (for non-source events) ``xu[i]``."""

    requires = "features"

    def __init__(self, weights):
        self.weights = weights
        self.n_classes = weights.n_classes

    def log_score(self, trace):
        if not trace.has_features:
            raise ValueError(f"trace {trace.trace_id!r} carries no features")
        has_parent = trace.parents != SOURCE
        logits = _gin_logits(trace.xv, trace.xu, has_parent, self.weights)
        return np.maximum(log_softmax(logits, axis=1), math.log(SCORE_FLOOR))

    def score(self, trace):
        return np.exp(self.log_score(trace))

    def score_edge(self, xu, xv):
        return gin_forward(xv, xu, self.weights)

    def score_edges(self, xu, xv):
        xu = np.atleast_2d(xu)
        logits = _gin_logits(np.atleast_2d(xv), xu, np.ones(xu.shape[0]), self.weights)
        return np.exp(log_softmax(logits, axis=1))


@dataclass(frozen=True, eq=False)
class AggregatorState:
    log_sums: np.ndarray
    count: int = 0

    @classmethod
    def initial(cls, n_classes):
        return cls(np.zeros(n_classes), 0)


def aggregate_step(state, phi_i):
    """Add one node's log scores; return the new state and ``Phi = softmax(log_sums)``."""
    phi_i = np.asarray(phi_i, dtype=float)
    if np.any(~(phi_i > 0)):
        raise ScorerContractError(f"score vector {phi_i.tolist()} has a non-positive entry")
    sums = state.log_sums + np.log(phi_i)
    return AggregatorState(sums, state.count + 1), np.exp(log_softmax(sums))


def score_trajectory(log_phi, initial):
    cum = np.empty((log_phi.shape[0] + 1, log_phi.shape[1]))
    cum[0] = 0.0
    np.cumsum(log_phi, axis=0, out=cum[1:])
    traj = np.exp(log_softmax(cum, axis=1))
    traj[0] = initial
    return traj


def run_gnn_sdr(trace, scorer, cfg, priors=None):
    """MSPRT stopping and decision with the aggregated scores ``Phi``.

    ``priors`` only fill row 0 of the trajectory; they never enter the
    recursion, so ``Phi`` matches the MSPRT posterior of an oracle scorer
    only under uniform priors.
    """
    M = scorer.n_classes
    initial = np.full(M, 1.0 / M) if priors is None else np.asarray(priors, dtype=float)
    traj = score_trajectory(scorer.log_score(trace), initial)
    return stop_on_trajectory(traj, cfg.levels(M), "gnn", trace)


@dataclass
class XiEstimate:
    """Largest sampled ratio ``(Phi_k / Phi_j) / (f_k / f_j)``.

    A maximum over finitely many sampled prefixes, so it can only
    under-estimate the supremum over all prefixes.
    """

    xi_hat: float
    log_xi_hat: float
    witness: tuple
    n_sequences: int
    max_len: int
    seed: int

    def to_dict(self):
        return {
            "xi_hat": self.xi_hat, "log_xi_hat": self.log_xi_hat,
            "witness": {"k": self.witness[0], "j": self.witness[1],
                        "sequence": self.witness[2], "prefix_len": self.witness[3]},
            "n_sequences": self.n_sequences, "max_len": self.max_len, "seed": self.seed,
            "lower_bound_of_supremum": True,
        }


def estimate_xi(scorer, models, max_len, n_sequences, seed, policy=None, features=None):
    """Estimate the worst score-ratio to likelihood-ratio mismatch of a scorer.

    Sequence ``s`` is drawn under hypothesis ``s mod M`` with seed ``seed + s``.
    """
    M = models.n_classes
    if M < 2:
        raise ValueError("xi undefined for M<2")
    if scorer.requires == "features" and features is None:
        raise ValueError("a feature-based scorer needs a feature model to sample from")
    policy = FrontierPolicy.parse(policy or "uniform")
    best, witness = -math.inf, None
    for s in range(n_sequences):
        trace = sample_trace(models, s % M, max_len, policy, seed + s, features)
        with np.errstate(invalid="ignore"):
            g = np.cumsum(scorer.log_score(trace), axis=0) - np.cumsum(
                log_increments(trace, models, "markov"), axis=0
            )
        valid = np.all(np.isfinite(g), axis=1)
        if not valid.any():
            continue
        gap = np.where(valid, g.max(axis=1) - g.min(axis=1), -np.inf)
        ell = int(np.argmax(gap))
        if gap[ell] > best:
            best = float(gap[ell])
            k = int(np.argmax(g[ell]))
            j = int(np.argmin(g[ell]))
            if j == k:
                j = (k + 1) % M
            witness = (k, j, s, ell + 1)
    if witness is None:
        raise ValueError("no sampled prefix had a finite likelihood under every hypothesis")
    return XiEstimate(math.exp(best), best, witness, n_sequences, max_len, seed)
