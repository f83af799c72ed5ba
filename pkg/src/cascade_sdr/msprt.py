"""Posterior recursion and the multi-hypothesis sequential probability ratio test.

Under hypothesis ``m`` the likelihood of the first ``l`` events factorises
over the events themselves: a source edge contributes ``eta_m(z)`` and any
other edge contributes ``alpha_m(z | type of its ancestor edge)``. The test
stops at the first ``l`` where some posterior reaches ``1 / (1 + a_m)``.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_thresholds
from .cascade import SOURCE

__all__ = [
    "RULES",
    "SdrConfig",
    "PosteriorState",
    "SdrOutcome",
    "DegenerateEvidenceError",
    "posterior_step",
    "log_increments",
    "posterior_trajectory",
    "run_sdr",
    "run_baseline_naive",
    "run_baseline_single_chain",
    "run_rule",
    "stationary_marginals",
    "write_outcomes",
    "write_trajectories",
]

RULES = ("markov", "naive", "single-chain")


class DegenerateEvidenceError(ValueError):
    """An observation has zero probability under every remaining hypothesis."""


@dataclass(frozen=True, eq=False)
class SdrConfig:
    """Threshold parameters ``a_m`` in (0, 1) and the likelihood rule."""

    thresholds_a: np.ndarray
    rule: str = "markov"

    def __post_init__(self):
        object.__setattr__(self, "thresholds_a", check_thresholds(self.thresholds_a))
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}; choose from {RULES}")

    def levels(self, n_classes):
        """Posterior levels ``1 / (1 + a_m)`` broadcast to ``n_classes``."""
        a = check_thresholds(self.thresholds_a, n_classes)
        return 1.0 / (1.0 + a)


@dataclass(frozen=True, eq=False)
class PosteriorState:
    log_weights: np.ndarray
    ancestor_types: dict = field(default_factory=dict)
    n_seen: int = 0

    @classmethod
    def initial(cls, priors):
        with np.errstate(divide="ignore"):
            return cls(np.log(np.asarray(priors, dtype=float)))

    @property
    def posterior(self):
        w = np.exp(self.log_weights - np.max(self.log_weights))
        return w / w.sum()


def posterior_step(state, event, models):
    """Fold one typed event into the posterior state.

    A hypothesis that gives the event probability zero is excluded for good
    (its log weight becomes ``-inf``).
    """
    if event.edge_type is None:
        raise ValueError(f"event {event.index} has no edge type")
    z = int(event.edge_type)
    if event.parent == SOURCE:
        inc = models.log_eta[:, z]
    else:
        try:
            anc = state.ancestor_types[event.parent]
        except KeyError:
            raise ValueError(
                f"event {event.index}: ancestor {event.parent} has not been observed"
            ) from None
        inc = models.log_alpha[:, anc, z]
    w = state.log_weights + inc
    top = np.max(w)
    if not np.isfinite(top):
        raise DegenerateEvidenceError(
            f"event {event.index} (type {z}) has zero probability under every hypothesis"
        )
    w = w - top
    w = w - np.log(np.sum(np.exp(w)))
    types = dict(state.ancestor_types)
    types[event.index] = z
    return PosteriorState(w, types, state.n_seen + 1)


def log_increments(trace, models, rule="markov", marginals=None):
    """Per-event log-likelihood contributions, shape ``(len(trace), M)``."""
    if not trace.has_types:
        raise ValueError(f"trace {trace.trace_id!r} has no edge types")
    z = trace.types
    n_states = np.shape(marginals)[1] if rule == "naive" else models.n_states
    if z.size and z.max() >= n_states:
        raise ValueError(f"edge type {int(z.max())} out of range for {n_states} types")
    if rule == "naive":
        with np.errstate(divide="ignore"):
            logm = np.log(np.asarray(marginals, dtype=float))
        return logm[:, z].T
    if rule == "markov":
        anc = trace.ancestor_types()
    elif rule == "single-chain":
        anc = np.empty_like(z)
        anc[0:1] = -1
        anc[1:] = z[:-1]
    else:
        raise ValueError(f"unknown rule {rule!r}")
    out = np.empty((z.shape[0], models.n_classes))
    root = anc < 0
    out[root] = models.log_eta[:, z[root]].T
    out[~root] = models.log_alpha[:, anc[~root], z[~root]].T
    return out


def posterior_trajectory(increments, priors):
    """Posterior after 0, 1, ..., n events from per-event log increments.

    Row 0 is the prior. Raises ``DegenerateEvidenceError`` at the first event
    that leaves every hypothesis with zero probability.
    """
    with np.errstate(divide="ignore"):
        logp = np.log(np.asarray(priors, dtype=float))
    cum = np.empty((increments.shape[0] + 1, logp.shape[0]))
    cum[0] = logp
    np.cumsum(increments, axis=0, out=cum[1:])
    cum[1:] += logp
    top = cum.max(axis=1, keepdims=True)
    dead = np.flatnonzero(~np.isfinite(top[:, 0]))
    if dead.size:
        raise DegenerateEvidenceError(
            f"event {int(dead[0]) - 1} has zero probability under every hypothesis"
        )
    w = np.exp(cum - top)
    return w / w.sum(axis=1, keepdims=True)


@dataclass(eq=False)
class SdrOutcome:
    """Result of one sequential run.

    ``trajectory[l]`` is the score vector after ``l`` events (row 0 is the
    initial vector) up to and including the stopping time. When no level is
    crossed, ``stopped`` is False, ``stop_time`` equals the trace length and
    ``decision`` is the forced argmax of the final row.
    """

    stop_time: int
    decision: int
    trajectory: np.ndarray
    stopped: bool
    rule: str = "markov"
    trace_id: str = ""
    label: int = None

    @property
    def forced(self):
        return not self.stopped

    @property
    def correct(self):
        return None if self.label is None else self.decision == self.label

    def decision_at(self, deadline):
        """Decision available at ``deadline``: the stopping decision when the
        test already stopped, otherwise the argmax at the deadline."""
        if self.stopped and self.stop_time <= deadline:
            return self.decision
        row = min(deadline, self.trajectory.shape[0] - 1)
        return int(np.argmax(self.trajectory[row]))


def stop_on_trajectory(trajectory, levels, rule, trace):
    crossed = trajectory[1:] >= levels
    hits = np.flatnonzero(crossed.any(axis=1))
    if hits.size:
        t = int(hits[0]) + 1
        return SdrOutcome(t, int(np.argmax(trajectory[t])), trajectory[: t + 1], True,
                          rule, trace.trace_id, trace.label)
    t = trajectory.shape[0] - 1
    return SdrOutcome(t, int(np.argmax(trajectory[t])), trajectory, False,
                      rule, trace.trace_id, trace.label)


def run_sdr(trace, models, cfg):
    """Run the MSPRT (or the rule named in ``cfg``) on one typed trace."""
    if cfg.rule == "naive":
        return run_baseline_naive(trace, stationary_marginals(models), cfg, models.priors)
    inc = log_increments(trace, models, cfg.rule)
    traj = posterior_trajectory(inc, models.priors)
    return stop_on_trajectory(traj, cfg.levels(models.n_classes), cfg.rule, trace)


def run_baseline_naive(trace, marginals, cfg, priors=None):
    """MSPRT that treats edge types as i.i.d. draws from per-hypothesis marginals."""
    marginals = np.asarray(marginals, dtype=float)
    M = marginals.shape[0]
    priors = np.full(M, 1.0 / M) if priors is None else priors
    inc = log_increments(trace, None, "naive", marginals)
    traj = posterior_trajectory(inc, priors)
    return stop_on_trajectory(traj, cfg.levels(M), "naive", trace)


def run_baseline_single_chain(trace, models, cfg):
    """MSPRT that conditions each edge on the previous event in time order."""
    inc = log_increments(trace, models, "single-chain")
    traj = posterior_trajectory(inc, models.priors)
    return stop_on_trajectory(traj, cfg.levels(models.n_classes), "single-chain", trace)


def run_rule(trace, models, cfg, marginals=None):
    if cfg.rule == "naive":
        m = stationary_marginals(models) if marginals is None else marginals
        return run_baseline_naive(trace, m, cfg, models.priors)
    if cfg.rule == "single-chain":
        return run_baseline_single_chain(trace, models, cfg)
    return run_sdr(trace, models, cfg)


def stationary_marginals(models):
    """Default marginals for the i.i.d. baseline: each kernel's stationary law."""
    from .kernels import stationary_distribution

    return np.stack([stationary_distribution(a) for a in models.alpha])


def write_outcomes(outcomes, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trace_id", "rule", "stop_time", "decision", "label", "correct", "forced"])
        for o in outcomes:
            w.writerow([
                o.trace_id, o.rule, o.stop_time, o.decision,
                "" if o.label is None else o.label,
                "" if o.label is None else int(o.correct),
                int(o.forced),
            ])


def write_trajectories(outcomes, path):
    data = [{"trace_id": o.trace_id, "rule": o.rule, "trajectory": o.trajectory.tolist()}
            for o in outcomes]
    with open(path, "w") as fh:
        json.dump(data, fh)
