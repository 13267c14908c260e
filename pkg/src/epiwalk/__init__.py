"""Two-stage epistasis scanning for case-control genotype data.

Stage one ranks single variants by an exact conditional test on the
2 x 3 phenotype-by-genotype table.  Stage two tests pairs of retained
variants for interaction with an exact conditional test of the
no-three-way-interaction null on the 3 x 3 x 2 table, evaluated by a
Metropolis-Hastings walk over the fiber of tables sharing the observed
pairwise margins, driven by a Markov basis.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .markov import (
    BasisCheck,
    BasisError,
    MarkovBasis,
    apply_move,
    builtin_no3way_basis,
    load_basis,
    save_basis,
    validate_basis,
)
from .models import (
    DesignTargets,
    InteractionModel,
    PopulationSpec,
    SolverError,
    effect_size,
    penetrance_matrix,
    prevalence,
    simulate_study,
    solve_params,
)
from .pipeline import (
    PairResult,
    ScanReport,
    SnpResult,
    Study,
    StudyFormatError,
    TripletResult,
    load_study,
    pairwise_scan,
    rank_snps,
    read_report,
    save_study,
    triplet_scan,
    write_report,
)
from .sampler import (
    ChainConfig,
    ChainDiagnostics,
    ConvergenceWarning,
    ExactTestResult,
    NonConvergenceError,
    autocorrelation,
    extended_fisher_test,
    gelman_rubin,
    mh_step,
    write_traces,
)
from .single_locus import fisher_exact, genotype_table, snp_p_value
from .tables import (
    ContingencyTable,
    Fiber,
    FiberSizeError,
    InconsistentMarginsError,
    IPFResult,
    LogLinearModel,
    MarginSet,
    TableShape,
    chi_square,
    enumerate_fiber,
    expected_counts,
    independence_model,
    ipf_fit,
    margins,
    no_top_interaction_model,
    read_table,
    saturated_model,
    write_table,
)

__all__ = [
    "__version__",
    # tables
    "TableShape", "ContingencyTable", "LogLinearModel", "MarginSet", "IPFResult",
    "Fiber", "InconsistentMarginsError", "FiberSizeError", "no_top_interaction_model",
    "independence_model", "saturated_model",
    "margins", "expected_counts", "ipf_fit", "chi_square", "enumerate_fiber",
    "read_table", "write_table",
    # markov
    "MarkovBasis", "BasisCheck", "BasisError", "builtin_no3way_basis",
    "validate_basis", "load_basis", "save_basis", "apply_move",
    # sampler
    "ChainConfig", "ChainDiagnostics", "ExactTestResult", "NonConvergenceError",
    "ConvergenceWarning", "mh_step", "extended_fisher_test", "gelman_rubin",
    "autocorrelation", "write_traces",
    # single locus
    "genotype_table", "fisher_exact", "snp_p_value",
    # models
    "InteractionModel", "PopulationSpec", "DesignTargets", "SolverError",
    "penetrance_matrix", "prevalence", "effect_size", "solve_params", "simulate_study",
    # pipeline
    "Study", "StudyFormatError", "SnpResult", "PairResult", "TripletResult",
    "ScanReport", "load_study", "save_study", "rank_snps", "pairwise_scan",
    "triplet_scan", "write_report", "read_report",
]
