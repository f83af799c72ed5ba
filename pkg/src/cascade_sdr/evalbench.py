"""Monte Carlo harness: risk and accuracy metrics, and empirical checks of the
stopping-time tail, error bounds, asymptotic stopping time and the AEP."""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .cascade import FrontierPolicy, TraceSampler, sample_trace
from .gnn import run_gnn_sdr
from .kernels import divergence_report, tail_constants
from .msprt import SdrConfig, log_increments, run_rule

__all__ = [
    "MonteCarloConfig",
    "RiskReport",
    "TailReport",
    "AsymptoticReport",
    "AepReport",
    "AccuracyCurve",
    "total_risk",
    "simulate",
    "survival_function",
    "run_monte_carlo",
    "accuracy_curve",
    "evaluate_traces",
    "verify_tail",
    "verify_error_bounds",
    "verify_asymptotic",
    "verify_aep",
    "write_rows",
]


@dataclass(frozen=True)
class MonteCarloConfig:
    trials_per_hypothesis: int = 1000
    horizon: int = 10_000
    base_seed: int = 0
    policy: FrontierPolicy = FrontierPolicy.single_path()
    costs: tuple = None
    threads: int = 1
    features: object = None

    def __post_init__(self):
        if self.trials_per_hypothesis < 1:
            raise ValueError("trials_per_hypothesis must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be ≥ 1")
        object.__setattr__(self, "policy", FrontierPolicy.parse(self.policy))

    def seed(self, hypothesis, trial):
        return self.base_seed + hypothesis * self.trials_per_hypothesis + trial

    def to_dict(self):
        return {
            "trials_per_hypothesis": self.trials_per_hypothesis,
            "horizon": self.horizon,
            "base_seed": self.base_seed,
            "policy": str(self.policy),
            "costs": None if self.costs is None else list(self.costs),
            "seed_rule": "base_seed + hypothesis * trials_per_hypothesis + trial",
        }


def _grow_and_run(sampler, horizon, run, start=64):
    n = min(start, horizon)
    while True:
        out = run(sampler.take(n))
        if out.stopped or n >= horizon:
            return out
        n = min(2 * n, horizon)


def _runner(models, sdr_cfg, scorer):
    if scorer is not None:
        return lambda trace: run_gnn_sdr(trace, scorer, sdr_cfg)
    return lambda trace: run_rule(trace, models, sdr_cfg)


def simulate(models, mc, sdr_cfg, scorer=None, hypotheses=None):
    """Run seeded trials; returns ``{k: (stop_times, decisions, stopped)}``.

    Traces are grown only as far as the rule needs, which gives the same
    outcome as running on the full ``mc.horizon`` trace.
    """
    run = _runner(models, sdr_cfg, scorer)
    hypotheses = range(models.n_classes) if hypotheses is None else hypotheses

    def trial(args):
        k, i = args
        sampler = TraceSampler(models, k, mc.policy, mc.seed(k, i), mc.features)
        out = _grow_and_run(sampler, mc.horizon, run)
        return out.stop_time, out.decision, out.stopped

    results = {}
    for k in hypotheses:
        jobs = [(k, i) for i in range(mc.trials_per_hypothesis)]
        if mc.threads > 1:
            with ThreadPoolExecutor(max_workers=mc.threads) as pool:
                rows = list(pool.map(trial, jobs, chunksize=64))
        else:
            rows = [trial(j) for j in jobs]
        arr = np.array(rows, dtype=np.int64)
        results[k] = (arr[:, 0], arr[:, 1], arr[:, 2].astype(bool))
    return results


def total_risk(error_total, costs, expected_stop):
    """Error probability plus the propagation cost ``sum_j c_j E[T 1{H_j}]``."""
    return float(error_total + np.dot(np.asarray(costs, float), np.asarray(expected_stop, float)))


@dataclass
class RiskReport:
    """Frequentist errors, stopping times, risk and the applicable bounds.

    ``confusion[j, k]`` estimates ``P_j(decide k)``; ``error_k[k]`` is
    ``sum_{j != k} pi_j confusion[j, k]``.
    """

    rule: str
    thresholds_a: list
    priors: list
    confusion: list
    error_k: list
    error_total: float
    sigma_k: list
    sigma_total: float
    mean_stop: list
    expected_stop_weighted: list
    not_stopped: list
    costs: list
    risk: float
    bound_k: list = None
    bound_total: float = None
    bound_equal_a: float = None
    xi: float = None
    passed_k: list = None
    passed_total: bool = None
    config: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(all(self.passed_k or [True]) and (self.passed_total is not False))

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _risk_report(models, mc, sdr_cfg, results, rule):
    M = models.n_classes
    pi = models.priors
    n = mc.trials_per_hypothesis
    confusion = np.zeros((M, M))
    mean_stop = np.zeros(M)
    not_stopped = []
    for j in range(M):
        times, dec, stopped = results[j]
        confusion[j] = np.bincount(dec, minlength=M)[:M] / n
        mean_stop[j] = times.mean()
        not_stopped.append(int((~stopped).sum()))
    off = confusion * (1 - np.eye(M))
    error_k = (pi[:, None] * off).sum(axis=0)
    error_total = float(error_k.sum())
    # binomial slack; proportions floored at 1/n so an empty cell still gets width
    p_cell = np.maximum(off, 1.0 / n)
    sigma_k = np.sqrt(((pi[:, None] ** 2) * p_cell * (1 - p_cell) / n).sum(axis=0))
    p_err = np.maximum(off.sum(axis=1), 1.0 / n)
    sigma_total = float(np.sqrt(np.sum(pi**2 * p_err * (1 - p_err) / n)))
    costs = np.zeros(M) if mc.costs is None else np.asarray(mc.costs, float)
    weighted = pi * mean_stop
    return RiskReport(
        rule=rule,
        thresholds_a=sdr_cfg.thresholds_a.tolist(),
        priors=pi.tolist(),
        confusion=confusion.tolist(),
        error_k=error_k.tolist(),
        error_total=error_total,
        sigma_k=sigma_k.tolist(),
        sigma_total=sigma_total,
        mean_stop=mean_stop.tolist(),
        expected_stop_weighted=weighted.tolist(),
        not_stopped=not_stopped,
        costs=costs.tolist(),
        risk=total_risk(error_total, costs, weighted),
        config=mc.to_dict(),
    )


def _attach_bounds(report, models, a, xi=None):
    pi = models.priors
    M = models.n_classes
    a = np.broadcast_to(np.asarray(a, float), (M,))
    equal = bool(np.all(a == a[0]))
    if xi is None:
        bound_k = pi * a
        bound_total = float(np.sum(pi * a))
        bound_equal = a[0] / (1 + a[0]) if equal else None
    else:
        bound_k = a * xi + xi - 1
        bound_total = float(xi * np.sum(a) + M * (xi - 1))
        bound_equal = 1 - 1 / (xi * (1 + a[0])) if equal else None
        report.xi = float(xi)
    report.bound_k = bound_k.tolist()
    report.bound_total = bound_total
    report.bound_equal_a = bound_equal
    return report


def run_monte_carlo(models, mc, sdr_cfg, scorer=None, xi=None):
    """Simulate every hypothesis and aggregate errors, stopping times, risk and bounds."""
    results = simulate(models, mc, sdr_cfg, scorer)
    rule = "gnn" if scorer is not None else sdr_cfg.rule
    report = _risk_report(models, mc, sdr_cfg, results, rule)
    if scorer is None and sdr_cfg.rule == "markov":
        _attach_bounds(report, models, sdr_cfg.levels(models.n_classes) ** -1 - 1)
    elif scorer is not None and xi is not None:
        _attach_bounds(report, models, sdr_cfg.levels(models.n_classes) ** -1 - 1, xi)
    return report


def verify_error_bounds(models, mc, a, scorer=None, xi_hat=None, n_sigma=3.0):
    """Check ``E_k <= pi_k a_k`` (or ``a_k xi + xi - 1`` for a scorer) with binomial slack."""
    a = np.broadcast_to(np.asarray(a, float), (models.n_classes,)).copy()
    sdr_cfg = SdrConfig(a)
    if scorer is not None and xi_hat is None:
        raise ValueError("a scorer-driven check needs xi_hat")
    results = simulate(models, mc, sdr_cfg, scorer)
    report = _risk_report(models, mc, sdr_cfg, results, "gnn" if scorer else "markov")
    _attach_bounds(report, models, a, xi_hat)
    err = np.asarray(report.error_k)
    report.passed_k = (err <= np.asarray(report.bound_k) + n_sigma * np.asarray(report.sigma_k)).tolist()
    total_bound = report.bound_total
    if report.bound_equal_a is not None:
        total_bound = min(total_bound, report.bound_equal_a)
    report.passed_total = bool(report.error_total <= total_bound + n_sigma * report.sigma_total)
    return report


@dataclass
class TailReport:
    k: int
    t: list
    survival: list
    survivors: list
    bound: list
    C1: float
    C2: float
    violations: int
    slope: float
    slope_ok: bool
    min_survivors: int
    config: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.violations == 0

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def rows(self):
        return [{"t": t, "survival": s, "bound": b, "survivors": n}
                for t, s, b, n in zip(self.t, self.survival, self.bound, self.survivors)]


def survival_function(stop_times, t_max=None):
    """Empirical ``P(T > t)`` for ``t = 0..t_max`` and the survivor counts."""
    stop_times = np.asarray(stop_times)
    t_max = int(stop_times.max()) if t_max is None else t_max
    counts = np.bincount(stop_times, minlength=t_max + 2)
    survivors = stop_times.size - np.cumsum(counts)[: t_max + 1]
    return np.arange(t_max + 1), survivors / stop_times.size, survivors


def verify_tail(models, k, mc, a, min_survivors=50, slope_slack=0.05, include_initial=False):
    """Compare the empirical survival of the stopping time with ``C1 exp(-C2 t)``.

    Only ``t`` with at least ``min_survivors`` surviving trials are checked.
    The slope is the least-squares fit of ``log P(T > t)`` on those ``t``.
    ``include_initial`` is passed to :func:`~cascade_sdr.kernels.tail_constants`;
    the default uses kernel rows only, which gives the larger ``C2``.
    """
    M = models.n_classes
    a = np.broadcast_to(np.asarray(a, float), (M,)).copy()
    c1, c2 = tail_constants(k, models, models.priors, a, include_initial=include_initial)
    results = simulate(models, mc, SdrConfig(a), hypotheses=[k])
    times = results[k][0]
    t, surv, n_surv = survival_function(times)
    keep = n_surv >= min_survivors
    t, surv, n_surv = t[keep], surv[keep], n_surv[keep]
    bound = c1 * np.exp(-c2 * t)
    violations = int(np.sum(surv > bound))
    slope = float(np.polyfit(t, np.log(surv), 1)[0]) if t.size >= 2 else float("nan")
    return TailReport(
        k=k, t=t.tolist(), survival=surv.tolist(), survivors=n_surv.tolist(),
        bound=bound.tolist(), C1=c1, C2=c2, violations=violations, slope=slope,
        slope_ok=bool(slope <= -c2 + slope_slack), min_survivors=min_survivors,
        config=mc.to_dict() | {"thresholds_a": a.tolist(), "include_initial": include_initial},
    )


@dataclass
class AsymptoticReport:
    k: int
    a_grid: list
    mean_stop: list
    ratios: list
    limit: float
    distances: list
    monotone: bool
    final_rel_error: float
    within_tolerance: bool
    tolerance: float
    config: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.monotone and self.within_tolerance

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d

    def rows(self):
        return [{"a": a, "mean_stop": m, "ratio": r}
                for a, m, r in zip(self.a_grid, self.mean_stop, self.ratios)]


def verify_asymptotic(models, k, a_grid, mc, tolerance=0.15, scorer=None):
    """Track ``E[T] / (-log a)`` along ``a_grid`` against ``1 / min_j KL(alpha_k || alpha_j | pi_k)``."""
    rep = divergence_report(models)
    others = [j for j in range(models.n_classes) if j != k]
    chi2_worst = min(float(np.max(rep.chi2[k, j])) for j in others)
    if not math.isfinite(chi2_worst):
        raise ValueError("chi-square assumption fails: min_j max_z chi2 is infinite")
    kl = min(float(rep.kl_stat[k, j]) for j in others)
    if kl <= 0:
        raise ValueError("stationary KL is zero; the asymptotic limit is undefined")
    limit = 1.0 / kl
    a_grid = [float(a) for a in a_grid]
    means, ratios = [], []
    for a in a_grid:
        res = simulate(models, mc, SdrConfig(np.full(models.n_classes, a)), scorer, hypotheses=[k])
        mean_t = float(res[k][0].mean())
        means.append(mean_t)
        ratios.append(mean_t / -math.log(a))
    dist = [abs(r - limit) for r in ratios]
    monotone = all(d1 <= d0 for d0, d1 in zip(dist, dist[1:]))
    final = dist[-1] / limit
    return AsymptoticReport(
        k=k, a_grid=a_grid, mean_stop=means, ratios=ratios, limit=limit,
        distances=dist, monotone=bool(monotone), final_rel_error=final,
        within_tolerance=bool(final <= tolerance), tolerance=tolerance,
        config=mc.to_dict(),
    )


@dataclass
class AepReport:
    k: int
    j: int
    ell: list
    rate: list
    target: float
    final_rate: float
    rel_error: float
    policy: str
    seed: int

    def to_dict(self):
        return asdict(self)

    def rows(self):
        return [{"ell": e, "rate": r} for e, r in zip(self.ell, self.rate)]


def verify_aep(models, k, j, length, policy=None, seed=0, n_points=200):
    """Normalised log-likelihood ratio ``(1/l) log(f_k / f_j)`` along one long trace."""
    policy = FrontierPolicy.parse(policy or "single")
    trace = sample_trace(models, k, length, policy, seed)
    inc = log_increments(trace, models, "markov")
    llr = np.cumsum(inc[:, k] - inc[:, j])
    ell = np.arange(1, length + 1)
    rate = llr / ell
    target = float(divergence_report(models).kl_stat[k, j])
    pick = np.unique(np.geomspace(1, length, n_points).astype(int)) - 1
    final = float(rate[-1])
    rel = abs(final - target) / target if target > 0 else abs(final)
    return AepReport(k, j, ell[pick].tolist(), rate[pick].tolist(), target, final, rel,
                     str(policy), seed)


@dataclass
class AccuracyCurve:
    deadlines: list
    accuracy: list
    auc: float

    def rows(self):
        return [{"deadline": d, "accuracy": a} for d, a in zip(self.deadlines, self.accuracy)]


def accuracy_curve(outcomes, deadlines, labels=None):
    """Accuracy of the decision available at each deadline and their mean (AUC).

    A run that stopped by the deadline contributes its decision; otherwise
    the argmax of its statistic at the deadline is used.
    """
    deadlines = [int(d) for d in deadlines]
    if any(d1 <= d0 for d0, d1 in zip(deadlines, deadlines[1:])):
        raise ValueError("deadlines must be strictly increasing")
    outcomes = list(outcomes)
    labels = [o.label for o in outcomes] if labels is None else list(labels)
    acc = []
    for d in deadlines:
        hits = sum(o.decision_at(d) == y for o, y in zip(outcomes, labels))
        acc.append(hits / len(outcomes) if outcomes else float("nan"))
    return AccuracyCurve(deadlines, acc, float(np.mean(acc)) if acc else float("nan"))


def evaluate_traces(traces, models, sdr_cfg, scorer=None):
    """Run the chosen rule on every trace."""
    run = _runner(models, sdr_cfg, scorer)
    return [run(t) for t in traces]


def write_rows(rows, path):
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
