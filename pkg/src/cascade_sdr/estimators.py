"""scikit-learn style wrappers around fitting and the sequential rules.

Inputs ``X`` are lists of :class:`~cascade_sdr.cascade.InformationTrace`;
``y`` defaults to the labels stored on the traces.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_labels, check_traces
from .fit import fit_kmeans_classifier, fit_offline
from .gnn import TabularScorer, run_gnn_sdr
from .msprt import SdrConfig, run_rule

__all__ = ["EdgeTypeKMeans", "SequentialMSPRTClassifier", "GNNSequentialClassifier"]


class EdgeTypeKMeans(TransformerMixin, BaseEstimator):
    """Assign edge types by k-means on concatenated ``(x_u, x_v)`` features.

    Parameters
    ----------
    n_types : int
        Number of clusters.
    seed : int
        Seed for k-means++ initialisation.
    """

    def __init__(self, n_types=4, seed=0):
        self.n_types = n_types
        self.seed = seed

    def fit(self, X, y=None):
        X = check_traces(X, require_features=True)
        self.classifier_ = fit_kmeans_classifier(X, self.n_types, self.seed)
        return self

    def transform(self, X):
        check_is_fitted(self, "classifier_")
        return [self.classifier_.transform(t) for t in check_traces(X, require_features=True)]


class _SequentialBase(ClassifierMixin, BaseEstimator):
    def _outcomes(self, X):
        raise NotImplementedError

    def outcomes(self, X):
        """Full :class:`~cascade_sdr.msprt.SdrOutcome` for every trace."""
        check_is_fitted(self, "classes_")
        return self._outcomes(check_traces(X))

    def predict(self, X):
        outs = self.outcomes(X)
        if self.deadline is None:
            return np.array([o.decision for o in outs])
        return np.array([o.decision_at(self.deadline) for o in outs])

    def predict_proba(self, X):
        """Score vector at the stopping time (or at ``deadline`` when set)."""
        rows = []
        for o in self.outcomes(X):
            t = o.stop_time
            if self.deadline is not None and not (o.stopped and o.stop_time <= self.deadline):
                t = min(self.deadline, o.trajectory.shape[0] - 1)
            rows.append(o.trajectory[t])
        return np.vstack(rows) if rows else np.empty((0, self.classes_.size))

    def stop_times(self, X):
        return np.array([o.stop_time for o in self.outcomes(X)])


class SequentialMSPRTClassifier(_SequentialBase):
    """Fit per-class Markov edge models and classify traces with the MSPRT.

    Parameters
    ----------
    thresholds : float or array-like
        Threshold parameters ``a_m`` in (0, 1).
    rule : {"markov", "naive", "single-chain"}
        Likelihood used by the sequential test.
    s : float, optional
        DCB pseudo-count; defaults to the number of edge types.
    priors : {"uniform", "empirical"} or array-like
    deadline : int, optional
        When set, ``predict`` returns the decision available at this many
        events instead of the stopping decision.
    """

    def __init__(self, thresholds=0.1, rule="markov", s=None, priors="uniform", deadline=None):
        self.thresholds = thresholds
        self.rule = rule
        self.s = s
        self.priors = priors
        self.deadline = deadline

    def fit(self, X, y=None):
        X = check_traces(X, require_types=True)
        y = check_labels(X, y)
        self.fit_ = fit_offline(X, y, "identity", s=self.s, priors=self.priors)
        self.models_ = self.fit_.model_set()
        self.classes_ = np.arange(self.models_.n_classes)
        self.config_ = SdrConfig(self.thresholds, self.rule)
        return self

    def _outcomes(self, X):
        return [run_rule(t, self.models_, self.config_) for t in X]


class GNNSequentialClassifier(_SequentialBase):
    """Aggregated node-score rule with a count-table scorer.

    The scorer maps ``(ancestor type, type)`` to a smoothed class
    distribution; scores are multiplied along the trace and normalised.

    Parameters
    ----------
    thresholds : float or array-like
    smoothing : float
        Additive smoothing of the count table.
    deadline : int, optional
    """

    def __init__(self, thresholds=0.1, smoothing=1.0, deadline=None):
        self.thresholds = thresholds
        self.smoothing = smoothing
        self.deadline = deadline

    def fit(self, X, y=None):
        X = check_traces(X, require_types=True)
        y = check_labels(X, y)
        z = 1 + max(int(t.types.max()) for t in X if len(t))
        M = int(y.max()) + 1
        self.scorer_ = TabularScorer.from_counts(X, y, z, M, self.smoothing)
        self.classes_ = np.arange(M)
        self.config_ = SdrConfig(self.thresholds)
        return self

    def _outcomes(self, X):
        return [run_gnn_sdr(t, self.scorer_, self.config_) for t in X]

