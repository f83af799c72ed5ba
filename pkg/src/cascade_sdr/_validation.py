"""Input validation helpers shared by the estimators and the functional API."""

import numpy as np

ROW_TOL = 1e-9


class ModelError(ValueError):
    """A hypothesis model (initial vector, kernel, priors) is malformed."""


class TraceFormatError(ValueError):
    """A trace file record could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


def check_probability_vector(p, name="vector", tol=ROW_TOL):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ModelError(f"{name} must be a non-empty 1-d array, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ModelError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > tol:
        raise ModelError(f"{name} sums to {p.sum():.12g}, expected 1")
    return p


def check_stochastic_matrix(a, name="alpha", tol=ROW_TOL):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise ModelError(f"{name} must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ModelError(f"{name} has negative or non-finite entries")
    sums = a.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise ModelError(
            f"{name} row {int(bad[0])} sums to {sums[bad[0]]:.12g}, expected 1"
        )
    return a


def check_thresholds(a, n_classes=None):
    """Return the threshold parameters as a float array with 0 < a_m < 1."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if n_classes is not None and a.size == 1:
        a = np.full(n_classes, a[0])
    if a.ndim != 1:
        raise ValueError("thresholds must be a scalar or a 1-d sequence")
    if n_classes is not None and a.size != n_classes:
        raise ValueError(f"expected {n_classes} thresholds, got {a.size}")
    if np.any(~(a > 0)) or np.any(~(a < 1)):
        raise ValueError(f"thresholds must lie in (0, 1), got {a.tolist()}")
    return a


def check_traces(traces, require_types=False, require_features=False):
    """Validate a sequence of traces and return it as a list."""
    from .cascade import InformationTrace

    traces = list(traces)
    for t in traces:
        if not isinstance(t, InformationTrace):
            raise TypeError(f"expected InformationTrace, got {type(t).__name__}")
        if require_types and not t.has_types:
            raise ValueError(f"trace {t.trace_id!r} has no edge types assigned")
        if require_features and not t.has_features:
            raise ValueError(f"trace {t.trace_id!r} carries no edge features")
    return traces


def check_labels(traces, labels=None):
    if labels is None:
        return np.array([t.label for t in traces], dtype=int)
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (len(traces),):
        raise ValueError(
            f"got {labels.shape[0] if labels.ndim else 0} labels for {len(traces)} traces"
        )
    return labels
