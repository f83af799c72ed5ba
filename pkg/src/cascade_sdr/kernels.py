"""Hypothesis models and the divergences between their transition kernels.

Every hypothesis ``m`` is a Markov model over edge types: an initial vector
``eta[z]`` for edges leaving the source and a row-stochastic kernel
``alpha[z, z']`` giving the probability of type ``z'`` on an edge whose
ancestor edge has type ``z``.
"""

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, connected_components

from ._validation import ModelError, check_probability_vector, check_stochastic_matrix

__all__ = [
    "HypothesisModel",
    "ModelSet",
    "DivergenceReport",
    "ReducibleChainError",
    "SeparationError",
    "hellinger_affinity",
    "conditional_kl",
    "stationary_kl",
    "chi_square",
    "stationary_distribution",
    "divergence_report",
    "tail_constants",
    "load_models",
    "save_models",
    "BUNDLED_MODELS",
    "bundled_models",
]

DENSE_LIMIT = 64


class ReducibleChainError(ValueError):
    """Raised when a kernel is not irreducible."""

    def __init__(self, unreachable):
        self.unreachable = sorted(int(s) for s in unreachable)
        super().__init__(f"chain is reducible; unreachable state set {self.unreachable}")


class SeparationError(ValueError):
    """Raised when two hypotheses are not Hellinger-separated."""


@dataclass(frozen=True, eq=False)
class HypothesisModel:
    """Initial edge probabilities ``eta`` and transition kernel ``alpha``."""

    eta: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        alpha = check_stochastic_matrix(self.alpha)
        eta = check_probability_vector(self.eta, "eta")
        if eta.shape[0] != alpha.shape[0]:
            raise ModelError(
                f"eta has {eta.shape[0]} states but alpha has {alpha.shape[0]}"
            )
        eta.flags.writeable = False
        alpha.flags.writeable = False
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "alpha", alpha)

    @property
    def n_states(self):
        return self.alpha.shape[0]

    def __eq__(self, other):
        if not isinstance(other, HypothesisModel):
            return NotImplemented
        return np.array_equal(self.eta, other.eta) and np.array_equal(
            self.alpha, other.alpha
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ModelSet:
    """M hypothesis models sharing one edge-type alphabet, plus priors."""

    models: tuple
    priors: np.ndarray = None

    def __post_init__(self):
        models = tuple(
            m if isinstance(m, HypothesisModel) else HypothesisModel(*m)
            for m in self.models
        )
        if not models:
            raise ModelError("a model set needs at least one hypothesis")
        z = {m.n_states for m in models}
        if len(z) != 1:
            raise ModelError(f"hypotheses disagree on the number of edge types: {sorted(z)}")
        priors = self.priors
        if priors is None:
            priors = np.full(len(models), 1.0 / len(models))
        priors = check_probability_vector(priors, "priors")
        if priors.shape[0] != len(models):
            raise ModelError(f"{priors.shape[0]} priors for {len(models)} hypotheses")
        priors.flags.writeable = False
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "priors", priors)

    @classmethod
    def from_arrays(cls, eta, alpha, priors=None):
        eta = np.asarray(eta, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        return cls(tuple(HypothesisModel(e, a) for e, a in zip(eta, alpha)), priors)

    @property
    def n_classes(self):
        return len(self.models)

    @property
    def n_states(self):
        return self.models[0].n_states

    def __len__(self):
        return len(self.models)

    def __getitem__(self, m):
        return self.models[m]

    @cached_property
    def eta(self):
        return np.stack([m.eta for m in self.models])

    @cached_property
    def alpha(self):
        return np.stack([m.alpha for m in self.models])

    @cached_property
    def log_eta(self):
        with np.errstate(divide="ignore"):
            return np.log(self.eta)

    @cached_property
    def log_alpha(self):
        with np.errstate(divide="ignore"):
            return np.log(self.alpha)

    def with_priors(self, priors):
        return ModelSet(self.models, priors)

    def permuted(self, perm):
        """Hypotheses reordered so that new hypothesis ``i`` is old ``perm[i]``."""
        perm = list(perm)
        return ModelSet(tuple(self.models[p] for p in perm), self.priors[perm])

    def to_dict(self):
        return {
            "M": self.n_classes,
            "Z": self.n_states,
            "priors": self.priors.tolist(),
            "models": [
                {"eta": m.eta.tolist(), "alpha": m.alpha.tolist()} for m in self.models
            ],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            models = tuple(HypothesisModel(m["eta"], m["alpha"]) for m in d["models"])
            out = cls(models, d.get("priors"))
        except KeyError as exc:
            raise ModelError(f"model file is missing field {exc}") from None
        if "M" in d and d["M"] != out.n_classes:
            raise ModelError(f"M={d['M']} but {out.n_classes} models were given")
        if "Z" in d and d["Z"] != out.n_states:
            raise ModelError(f"Z={d['Z']} but kernels have {out.n_states} states")
        return out

    def __eq__(self, other):
        if not isinstance(other, ModelSet):
            return NotImplemented
        return self.models == other.models and np.array_equal(self.priors, other.priors)

    __hash__ = None


def load_models(path):
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelError(f"{path}: invalid JSON ({exc})") from None
    return ModelSet.from_dict(d)


def save_models(models, path):
    Path(path).write_text(json.dumps(models.to_dict(), indent=2) + "\n")


def _rows(k, j, z, models):
    alpha = models.alpha if isinstance(models, ModelSet) else np.stack(
        [m.alpha for m in models]
    )
    return alpha[k, z], alpha[j, z]


def _affinity(p, q):
    return float(np.sum(np.sqrt(p * q)))


def _kl(p, q):
    support = p > 0
    if np.any(q[support] == 0):
        return math.inf
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def _chi2(p, q):
    support = p > 0
    if np.any(q[support] == 0):
        return math.inf
    return float(np.sum(p[support] ** 2 / q[support]) - 1.0)


def hellinger_affinity(k, j, z, models):
    """Bhattacharyya overlap ``sum_z' sqrt(alpha_k(z'|z) alpha_j(z'|z))``."""
    return _affinity(*_rows(k, j, z, models))


def conditional_kl(k, j, z, models):
    """KL divergence between the rows ``alpha_k(.|z)`` and ``alpha_j(.|z)``.

    Returns ``math.inf`` when ``alpha_k(.|z)`` is not absolutely continuous
    with respect to ``alpha_j(.|z)``.
    """
    return _kl(*_rows(k, j, z, models))


def chi_square(k, j, z, models):
    """Chi-square divergence ``sum alpha_k^2 / alpha_j - 1`` (``inf`` off-support)."""
    return _chi2(*_rows(k, j, z, models))


def stationary_kl(k, j, models):
    """Row KL divergences averaged under the stationary law of ``alpha_k``."""
    if isinstance(models, ModelSet):
        alpha = models.alpha
    else:
        alpha = np.stack([m.alpha for m in models])
    pi = stationary_distribution(alpha[k])
    total = 0.0
    for z in np.flatnonzero(pi > 0):
        d = _kl(alpha[k, z], alpha[j, z])
        if math.isinf(d):
            return math.inf
        total += pi[z] * d
    return total


def _check_irreducible(alpha):
    n = alpha.shape[0]
    graph = (alpha > 0).astype(np.int8)
    n_comp, _ = connected_components(graph, directed=True, connection="strong")
    if n_comp == 1:
        return
    forward = set(breadth_first_order(graph, 0, directed=True, return_predecessors=False))
    backward = set(
        breadth_first_order(graph.T, 0, directed=True, return_predecessors=False)
    )
    unreachable = set(range(n)) - forward
    if not unreachable:
        # everything is reachable from 0, so some state cannot get back to 0
        unreachable = set(range(n)) - backward
    raise ReducibleChainError(unreachable)


def stationary_distribution(alpha, tol=1e-12, max_iter=100_000):
    """Stationary law ``pi`` of an irreducible kernel (``pi @ alpha == pi``).

    Small chains are solved directly; above ``DENSE_LIMIT`` states the lazy
    chain ``(I + alpha) / 2`` is power-iterated, which also converges for
    periodic kernels.
    """
    alpha = check_stochastic_matrix(alpha)
    _check_irreducible(alpha)
    n = alpha.shape[0]
    if n <= DENSE_LIMIT:
        # (alpha^T - I) pi = 0 together with sum(pi) = 1
        a = np.vstack([alpha.T - np.eye(n), np.ones((1, n))])
        b = np.zeros(n + 1)
        b[-1] = 1.0
        pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    else:
        lazy = 0.5 * (np.eye(n) + alpha)
        pi = np.full(n, 1.0 / n)
        for _ in range(max_iter):
            nxt = pi @ lazy
            if np.abs(nxt - pi).sum() < tol:
                pi = nxt
                break
            pi = nxt
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass
class DivergenceReport:
    """All pairwise kernel divergences of a model set.

    Arrays are indexed ``[k, j, z]`` (or ``[k, j]`` for ``kl_stat``);
    ``stationary[k]`` is the stationary law of ``alpha_k``.
    """

    S: np.ndarray
    kl_cond: np.ndarray
    kl_stat: np.ndarray
    chi2: np.ndarray
    stationary: np.ndarray

    def to_dict(self):
        return {name: getattr(self, name).tolist() for name in
                ("S", "kl_cond", "kl_stat", "chi2", "stationary")}


def divergence_report(models):
    M, Z = models.n_classes, models.n_states
    alpha = models.alpha
    S = np.empty((M, M, Z))
    kl = np.empty((M, M, Z))
    chi2 = np.empty((M, M, Z))
    for k in range(M):
        for j in range(M):
            for z in range(Z):
                p, q = alpha[k, z], alpha[j, z]
                S[k, j, z] = _affinity(p, q)
                kl[k, j, z] = _kl(p, q)
                chi2[k, j, z] = _chi2(p, q)
    stationary = np.stack([stationary_distribution(a) for a in alpha])
    kl_stat = np.empty((M, M))
    for k in range(M):
        for j in range(M):
            w = stationary[k]
            terms = kl[k, j]
            on = w > 0
            kl_stat[k, j] = math.inf if np.any(np.isinf(terms[on])) else float(
                np.sum(w[on] * terms[on])
            )
    return DivergenceReport(S=S, kl_cond=kl, kl_stat=kl_stat, chi2=chi2, stationary=stationary)


def tail_constants(k, models, priors=None, a=None, include_initial=False):
    """Constants ``(C1, C2)`` of the stopping-time tail ``P(T > t | H_k) <= C1 exp(-C2 t)``.

    ``C1 = (M-1)^{3/2} max_{j!=k} sqrt(pi_j / (pi_k min(a)))`` and
    ``C2 = -log max_{j!=k} max_z S_{k,j}(z)``. The worst (largest) affinity is
    used for ``C2``; that is what makes the bound hold for every competitor.

    With ``include_initial`` the affinity of the initial vectors ``eta_k`` and
    ``eta_j`` joins the maximum, which keeps the bound valid when source edges
    are drawn from ``eta`` rather than from a kernel row.
    """
    M = models.n_classes
    if M < 2:
        raise ValueError("tail constants need at least two hypotheses")
    priors = models.priors if priors is None else np.asarray(priors, dtype=float)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.size == 1:
        a = np.full(M, a[0])
    if np.min(a) <= 0:
        raise ValueError("min(a) must be positive")

    worst, worst_at = -1.0, None
    for j in range(M):
        if j == k:
            continue
        for z in range(models.n_states):
            s = hellinger_affinity(k, j, z, models)
            if s > worst:
                worst, worst_at = s, (j, z)
        if include_initial:
            s = _affinity(models.eta[k], models.eta[j])
            if s > worst:
                worst, worst_at = s, (j, "source")
    if worst >= 1.0 - 1e-15:
        j, z = worst_at
        raise SeparationError(
            f"hypotheses {k} and {j} not Hellinger-separated at state {z}"
        )
    c1 = (M - 1) ** 1.5 * max(
        math.sqrt(priors[j] / (priors[k] * a.min())) for j in range(M) if j != k
    )
    c2 = -math.log(worst)
    return c1, c2


BUNDLED_MODELS = ("three_class", "ab_pair")


def bundled_models(name):
    """Load one of the model sets shipped with the package (see ``BUNDLED_MODELS``)."""
    from importlib.resources import files

    if name not in BUNDLED_MODELS:
        raise ModelError(f"unknown bundled model {name!r}; choose from {BUNDLED_MODELS}")
    return ModelSet.from_dict(json.loads(files(__package__).joinpath("data", f"{name}.json").read_text()))
