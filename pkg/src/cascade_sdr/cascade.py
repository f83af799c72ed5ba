"""Information traces and their generation from a union-of-Markov-chains model.

A trace is the ordered list of forwarding events of one message. Event ``i``
points at its ancestor event (the previous edge on its own root-to-leaf path)
or at the source, encoded as ``parent = SOURCE = -1``.
"""

import bisect
import csv
import json
from dataclasses import dataclass

import numpy as np

from ._validation import TraceFormatError
from .kernels import HypothesisModel, ModelSet

__all__ = [
    "SOURCE",
    "TraceEvent",
    "InformationTrace",
    "FrontierPolicy",
    "FeatureModel",
    "TraceSampler",
    "sample_trace",
    "sample_traces",
    "write_traces",
    "read_traces",
    "export_csv",
]

SOURCE = -1
FILE_HEADER = {"format": "cascade-traces", "version": 1}


@dataclass(frozen=True)
class TraceEvent:
    index: int
    parent: int
    edge_type: int = None
    xu: tuple = None
    xv: tuple = None

    @property
    def is_root(self):
        return self.parent == SOURCE


class InformationTrace:
    """One labelled cascade stored column-wise.

    Parameters
    ----------
    parents : array of int
        Ancestor event of each event, ``SOURCE`` (-1) for edges leaving the source.
    types : array of int, optional
        Edge type of each event.
    xu, xv : array of shape (n_events, d), optional
        Followee and follower feature vectors of each event.
    label : int
    trace_id : str
    """

    __slots__ = ("parents", "types", "xu", "xv", "label", "trace_id")

    def __init__(self, parents, types=None, xu=None, xv=None, label=0, trace_id=""):
        parents = np.asarray(parents, dtype=np.int64).reshape(-1)
        n = parents.shape[0]
        idx = np.arange(n)
        bad = np.flatnonzero((parents >= idx) | (parents < SOURCE))
        if bad.size:
            i = int(bad[0])
            raise ValueError(f"event {i} has parent {int(parents[i])}; need SOURCE or < {i}")
        if types is not None:
            types = np.asarray(types, dtype=np.int64).reshape(-1)
            if types.shape[0] != n:
                raise ValueError(f"{types.shape[0]} edge types for {n} events")
            if np.any(types < 0):
                raise ValueError("edge types must be non-negative")
        if (xu is None) != (xv is None):
            raise ValueError("xu and xv must be given together")
        if xu is not None:
            xu = np.asarray(xu, dtype=float).reshape(n, -1)
            xv = np.asarray(xv, dtype=float).reshape(n, -1)
            if xu.shape != xv.shape:
                raise ValueError(f"xu shape {xu.shape} differs from xv shape {xv.shape}")
        if n and types is None and xu is None:
            raise ValueError("every event needs an edge type or a feature pair")
        for arr in (parents, types, xu, xv):
            if arr is not None:
                arr.flags.writeable = False
        self.parents = parents
        self.types = types
        self.xu = xu
        self.xv = xv
        self.label = int(label)
        self.trace_id = str(trace_id)

    @classmethod
    def from_events(cls, events, label=0, trace_id=""):
        events = list(events)
        for i, ev in enumerate(events):
            if ev.index != i:
                raise ValueError(f"event at position {i} carries index {ev.index}")
        has_types = [ev.edge_type is not None for ev in events]
        has_feats = [ev.xu is not None for ev in events]
        if any(has_types) and not all(has_types):
            raise ValueError("edge types must be given for all events or none")
        if any(has_feats) and not all(has_feats):
            raise ValueError("features must be given for all events or none")
        types = [ev.edge_type for ev in events] if events and all(has_types) else None
        xu = xv = None
        if events and all(has_feats):
            xu = [ev.xu for ev in events]
            xv = [ev.xv for ev in events]
        return cls([ev.parent for ev in events], types, xu, xv, label, trace_id)

    def __len__(self):
        return self.parents.shape[0]

    @property
    def has_types(self):
        return self.types is not None

    @property
    def has_features(self):
        return self.xu is not None

    @property
    def events(self):
        out = []
        for i in range(len(self)):
            out.append(
                TraceEvent(
                    index=i,
                    parent=int(self.parents[i]),
                    edge_type=None if self.types is None else int(self.types[i]),
                    xu=None if self.xu is None else tuple(self.xu[i].tolist()),
                    xv=None if self.xv is None else tuple(self.xv[i].tolist()),
                )
            )
        return out

    def ancestor_types(self, fill=-1):
        """Type of each event's ancestor edge, ``fill`` for source edges."""
        if self.types is None:
            raise ValueError(f"trace {self.trace_id!r} has no edge types")
        anc = np.full(len(self), fill, dtype=np.int64)
        inner = self.parents != SOURCE
        anc[inner] = self.types[self.parents[inner]]
        return anc

    def paths(self):
        """Disjoint root-to-leaf chains as lists of event indices.

        Branching events start a new chain at the branch, so every event
        belongs to exactly one chain and chains partition the trace.
        """
        chains = []
        chain_of = {}
        for i, p in enumerate(self.parents.tolist()):
            if p != SOURCE and chains[chain_of[p]][-1] == p:
                c = chain_of[p]
                chains[c].append(i)
            else:
                c = len(chains)
                chains.append([i])
            chain_of[i] = c
        return chains

    def prefix(self, n):
        return InformationTrace(
            self.parents[:n],
            None if self.types is None else self.types[:n],
            None if self.xu is None else self.xu[:n],
            None if self.xv is None else self.xv[:n],
            self.label,
            self.trace_id,
        )

    def with_types(self, types):
        return InformationTrace(self.parents, types, self.xu, self.xv, self.label, self.trace_id)

    def with_label(self, label):
        return InformationTrace(self.parents, self.types, self.xu, self.xv, label, self.trace_id)

    def __eq__(self, other):
        if not isinstance(other, InformationTrace):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and np.array_equal(a, b)

        return (
            self.label == other.label
            and self.trace_id == other.trace_id
            and same(self.parents, other.parents)
            and same(self.types, other.types)
            and same(self.xu, other.xu)
            and same(self.xv, other.xv)
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"InformationTrace(id={self.trace_id!r}, label={self.label}, "
            f"events={len(self)}, types={self.has_types}, features={self.has_features})"
        )


@dataclass(frozen=True)
class FrontierPolicy:
    """Which path the next event extends.

    ``uniform``: pick uniformly among the current path ends and the source;
    picking the source starts a new path. ``spawn``: start a new path with
    probability ``p``, otherwise extend a uniformly chosen path end.
    ``single``: one path only.
    """

    variant: str = "uniform"
    p: float = None

    def __post_init__(self):
        if self.variant not in ("uniform", "spawn", "single"):
            raise ValueError(f"unknown frontier policy {self.variant!r}")
        if self.variant == "spawn":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ValueError(f"spawn probability must lie in [0, 1], got {self.p}")

    @classmethod
    def uniform(cls):
        return cls("uniform")

    @classmethod
    def single_path(cls):
        return cls("single")

    @classmethod
    def spawn(cls, p):
        return cls("spawn", float(p))

    @classmethod
    def parse(cls, text):
        """Parse ``uniform``, ``single`` or ``spawn:<p>``."""
        if isinstance(text, FrontierPolicy):
            return text
        name, _, arg = str(text).partition(":")
        if name == "spawn":
            return cls.spawn(float(arg))
        return cls(name)

    def __str__(self):
        return f"spawn:{self.p}" if self.variant == "spawn" else self.variant


@dataclass(frozen=True, eq=False)
class FeatureModel:
    """Gaussian feature surrogate: an edge of type ``z`` carries
    ``(xu, xv) ~ N(means[z], sigma^2 I)`` with ``means`` of shape ``(Z, 2d)``."""

    means: np.ndarray
    sigma: float = 0.5

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        if means.ndim != 2 or means.shape[1] % 2:
            raise ValueError("means must have shape (Z, 2d)")
        object.__setattr__(self, "means", means)

    @property
    def dim(self):
        return self.means.shape[1] // 2

    @classmethod
    def separated(cls, n_types, dim, spacing=4.0, sigma=0.5):
        """Type ``z`` sits on axis ``z mod 2d`` at height ``spacing * (1 + z // 2d)``."""
        means = np.zeros((n_types, 2 * dim))
        for z in range(n_types):
            means[z, z % (2 * dim)] = spacing * (1 + z // (2 * dim))
        return cls(means, sigma)

    def to_dict(self):
        return {"means": self.means.tolist(), "sigma": self.sigma}


def _cdf_rows(p):
    cdf = np.cumsum(p, axis=-1)
    return cdf.tolist()


class TraceSampler:
    """Lazily grown trace drawn from one hypothesis.

    Draws are consumed in a fixed per-event order, so the first ``n`` events
    do not depend on how the trace was grown; ``sampler.take(n)`` always
    equals ``sample_trace(..., horizon=n)`` for the same seed.
    """

    def __init__(self, model, label, policy=None, seed=0, features=None, chunk=64):
        if isinstance(model, ModelSet):
            model = model[label]
        if not isinstance(model, HypothesisModel):
            model = HypothesisModel(*model)
        self.model = model
        self.label = int(label)
        self.policy = FrontierPolicy.parse(policy or "uniform")
        self.seed = int(seed)
        self.features = features
        if features is not None and features.means.shape[0] < model.n_states:
            raise ValueError("feature model has fewer types than the hypothesis model")
        self.chunk = int(chunk)
        structure_seq, feature_seq = np.random.SeedSequence(self.seed).spawn(2)
        self._rng = np.random.default_rng(structure_seq)
        self._frng = np.random.default_rng(feature_seq)
        self._eta_cdf = _cdf_rows(model.eta)
        self._alpha_cdf = _cdf_rows(model.alpha)
        self._last = model.n_states - 1
        self.parents = []
        self.types = []
        self._leaves = []
        self._xu = []
        self._xv = []

    def __len__(self):
        return len(self.parents)

    def _draw(self, cdf, u):
        return min(bisect.bisect_right(cdf, u), self._last)

    def grow(self, n):
        """Extend the trace to at least ``n`` events."""
        while len(self.parents) < n:
            self._grow_chunk()
        return self

    def _grow_chunk(self):
        u = self._rng.random((self.chunk, 2)).tolist()
        variant = self.policy.variant
        p_spawn = self.policy.p
        leaves = self._leaves
        parents, types = self.parents, self.types
        for u_front, u_type in u:
            i = len(parents)
            n_leaves = len(leaves)
            if variant == "uniform":
                slot = int(u_front * (n_leaves + 1))
            elif variant == "single":
                slot = 0 if n_leaves else n_leaves
            elif n_leaves == 0 or u_front < p_spawn:
                slot = n_leaves
            else:
                slot = min(int((u_front - p_spawn) / (1.0 - p_spawn) * n_leaves), n_leaves - 1)
            if slot >= n_leaves:
                parent = SOURCE
                z = self._draw(self._eta_cdf, u_type)
                leaves.append(i)
            else:
                parent = leaves[slot]
                z = self._draw(self._alpha_cdf[types[parent]], u_type)
                leaves[slot] = i
            parents.append(parent)
            types.append(z)
        if self.features is not None:
            d2 = self.features.means.shape[1]
            noise = self._frng.standard_normal((self.chunk, d2))
            z = np.asarray(types[-self.chunk:])
            x = self.features.means[z] + self.features.sigma * noise
            half = d2 // 2
            self._xu.append(x[:, :half])
            self._xv.append(x[:, half:])

    def take(self, n, trace_id=None):
        self.grow(n)
        xu = xv = None
        if self.features is not None:
            xu = np.concatenate(self._xu)[:n] if self._xu else np.zeros((0, self.features.dim))
            xv = np.concatenate(self._xv)[:n] if self._xv else np.zeros((0, self.features.dim))
        if trace_id is None:
            trace_id = f"h{self.label}-s{self.seed}"
        return InformationTrace(
            self.parents[:n], self.types[:n], xu, xv, self.label, trace_id
        )


def sample_trace(model, label, horizon, policy=None, seed=0, features=None, trace_id=None):
    """Draw one trace of exactly ``horizon`` events under hypothesis ``label``.

    Source edges take their type from ``eta_label``; every other edge is drawn
    from ``alpha_label(. | type of its ancestor)``.
    """
    if int(horizon) < 1:
        raise ValueError("horizon must be ≥ 1")
    return TraceSampler(model, label, policy, seed, features).take(int(horizon), trace_id)


def sample_traces(models, n_per_class, horizon, policy=None, base_seed=0, features=None):
    """Draw ``n_per_class`` traces under every hypothesis; trace ``i`` uses ``base_seed + i``."""
    traces = []
    i = 0
    for label in range(models.n_classes):
        for _ in range(n_per_class):
            traces.append(
                sample_trace(models, label, horizon, policy, base_seed + i, features,
                             trace_id=f"t{i:06d}")
            )
            i += 1
    return traces


def _trace_record(t):
    events = []
    for i in range(len(t)):
        events.append({
            "parent": int(t.parents[i]),
            "type": None if t.types is None else int(t.types[i]),
            "xu": None if t.xu is None else t.xu[i].tolist(),
            "xv": None if t.xv is None else t.xv[i].tolist(),
        })
    return {"trace_id": t.trace_id, "label": t.label, "events": events}


def write_traces(traces, path):
    """Write traces as JSON lines after a one-line header."""
    with open(path, "w") as fh:
        fh.write(json.dumps(FILE_HEADER) + "\n")
        for t in traces:
            fh.write(json.dumps(_trace_record(t)) + "\n")


def _parse_trace(rec, lineno):
    try:
        events = rec["events"]
        parents = [int(e["parent"]) for e in events]
        types = [e.get("type") for e in events]
        xu = [e.get("xu") for e in events]
        xv = [e.get("xv") for e in events]
        label, trace_id = int(rec["label"]), rec["trace_id"]
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"malformed trace record ({exc!r})", lineno) from None
    typed = [x is not None for x in types]
    featured = [x is not None for x in xu]
    if any(typed) and not all(typed):
        raise TraceFormatError("edge types present on some events only", lineno)
    if any(featured) and not all(featured):
        raise TraceFormatError("features present on some events only", lineno)
    try:
        return InformationTrace(
            parents,
            types if events and all(typed) else None,
            xu if events and all(featured) else None,
            xv if events and all(featured) else None,
            label,
            trace_id,
        )
    except (ValueError, TypeError) as exc:
        raise TraceFormatError(str(exc), lineno) from None


def read_traces(path):
    traces = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TraceFormatError(f"invalid JSON ({exc.msg})", lineno) from None
            if lineno == 1:
                if rec.get("format") != FILE_HEADER["format"]:
                    raise TraceFormatError("missing cascade-traces header", lineno)
                continue
            traces.append(_parse_trace(rec, lineno))
    return traces


def export_csv(traces, path):
    """One row per event, for plotting."""
    dim = 0
    for t in traces:
        if t.has_features:
            dim = t.xu.shape[1]
            break
    header = ["trace_id", "label", "index", "parent", "type"]
    header += [f"xu{k}" for k in range(dim)] + [f"xv{k}" for k in range(dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in traces:
            for i in range(len(t)):
                row = [t.trace_id, t.label, i, int(t.parents[i]),
                       "" if t.types is None else int(t.types[i])]
                if dim:
                    if t.has_features:
                        row += t.xu[i].tolist() + t.xv[i].tolist()
                    else:
                        row += [""] * (2 * dim)
                w.writerow(row)
