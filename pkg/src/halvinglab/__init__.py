"""halvinglab: a simulation lab for Successive Halving over learning curves.

Compares promotion decisions based on observed performance values against a
product-kernel Gaussian Process curve predictor ranked by expected pairwise
wins, with exact compute accounting in observed-value units.
"""

from .curves import (
    CurveSet,
    LearningCurve,
    PerfSpec,
    SyntheticFamilySpec,
    best_candidate,
    final_perf,
    generate_synthetic,
    load_curves_csv,
    save_curves_csv,
    subtract_reference,
)
from .errors import ConfigError, DataFormatError, HalvingLabError, NumericalError
from .gp import (
    CandidateSummary,
    FitConfig,
    GpHyperparams,
    GpModel,
    ObservationSet,
    Standardization,
    build_observations,
    evaluate_lml,
    fit_gp,
    kernel_value,
    log_marginal_likelihood,
    marginal_likelihood_gradient,
    predict_final_window,
)
from .halving import (
    ShConfig,
    ShTrace,
    compute_units,
    rung_budget,
    rung_count,
    run_halving,
)
from .kron import masked_grid_matvec, masked_grid_solve
from .ranking import (
    Ranking,
    expected_wins,
    rank_by_current,
    rank_by_gp,
    rank_by_oracle,
)
from .sweep import (
    AggregateRow,
    SweepSpec,
    TrialResult,
    aggregate,
    relative_regret,
    run_sweep,
)

__version__ = "0.1.0"
