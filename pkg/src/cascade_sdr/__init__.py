"""Early classification of information cascades with sequential decision rules.

Cascades are simulated as unions of Markov chains on propagation trees. The
package provides the multi-hypothesis sequential probability ratio test, an
aggregated node-score rule, offline model fitting and a Monte Carlo harness.
"""

from .cascade import (
    SOURCE,
    FeatureModel,
    FrontierPolicy,
    InformationTrace,
    TraceEvent,
    TraceSampler,
    read_traces,
    sample_trace,
    sample_traces,
    write_traces,
)
from .kernels import (
    HypothesisModel,
    ModelSet,
    bundled_models,
    divergence_report,
    load_models,
    save_models,
    stationary_distribution,
    stationary_kl,
    tail_constants,
)
from .msprt import SdrConfig, SdrOutcome, run_baseline_naive, run_baseline_single_chain, run_rule, run_sdr
from .gnn import GinScorer, GinWeights, OracleScorer, TabularScorer, estimate_xi, run_gnn_sdr
from .fit import fit_offline, pairing_pair, pairing_theta
from .evalbench import (
    MonteCarloConfig,
    accuracy_curve,
    run_monte_carlo,
    verify_aep,
    verify_asymptotic,
    verify_error_bounds,
    verify_tail,
)

__version__ = "0.1.0"

__all__ = [
    "SOURCE", "FeatureModel", "FrontierPolicy", "InformationTrace", "TraceEvent", "TraceSampler",
    "read_traces", "sample_trace", "sample_traces", "write_traces",
    "HypothesisModel", "ModelSet", "bundled_models", "divergence_report", "load_models",
    "save_models", "stationary_distribution", "stationary_kl", "tail_constants",
    "SdrConfig", "SdrOutcome", "run_baseline_naive", "run_baseline_single_chain", "run_rule", "run_sdr",
    "GinScorer", "GinWeights", "OracleScorer", "TabularScorer", "estimate_xi", "run_gnn_sdr",
    "fit_offline", "pairing_pair", "pairing_theta",
    "MonteCarloConfig", "accuracy_curve", "run_monte_carlo", "verify_aep", "verify_asymptotic",
    "verify_error_bounds", "verify_tail",
    "__version__",
]
