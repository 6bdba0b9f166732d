"""Number-resolving detector tomography toolkit."""

__version__ = "0.1.0"

from .core import (
    DetectorMatrix,
    DiagonalState,
    HistogramDataset,
    ProbVector,
    fidelity,
    hellinger_sq,
    simplex_project,
)
from .rabi import (
    DarkCountModel,
    RabiParams,
    exact_unitary_oracle,
    ideal_distribution,
    reference_binomial_model,
    transfer_prob,
)
from .simulate import (
    DatasetFormatError,
    ExperimentPlan,
    SyntheticDetectorSpec,
    build_detector,
    ingest,
    sample_dataset,
)
from .tomography import (
    BootstrapEnsemble,
    TomographyConfig,
    TomographyResult,
    bootstrap,
    cost,
    init_from_fits,
    learning_test,
    reconstruct,
)
from .analysis import (
    PovmSet,
    ResolutionStats,
    WignerGrid,
    assignment_fidelity,
    fisher_information,
    povm_from_matrix,
    resolution_stats,
    wigner,
    wigner_negativity,
)
from .metrology import (
    GainMap,
    GainScaling,
    SqueezedEnsemble,
    build_squeezed_state,
    gain_map,
    gain_scaling,
    phase_sensitivity,
    rotated_number_distribution,
)

__all__ = [
    "DetectorMatrix",
    "DiagonalState",
    "HistogramDataset",
    "ProbVector",
    "fidelity",
    "hellinger_sq",
    "simplex_project",
    "DarkCountModel",
    "RabiParams",
    "exact_unitary_oracle",
    "ideal_distribution",
    "reference_binomial_model",
    "transfer_prob",
    "DatasetFormatError",
    "ExperimentPlan",
    "SyntheticDetectorSpec",
    "build_detector",
    "ingest",
    "sample_dataset",
    "BootstrapEnsemble",
    "TomographyConfig",
    "TomographyResult",
    "bootstrap",
    "cost",
    "init_from_fits",
    "learning_test",
    "reconstruct",
    "PovmSet",
    "ResolutionStats",
    "WignerGrid",
    "assignment_fidelity",
    "fisher_information",
    "povm_from_matrix",
    "resolution_stats",
    "wigner",
    "wigner_negativity",
    "GainMap",
    "GainScaling",
    "SqueezedEnsemble",
    "build_squeezed_state",
    "gain_map",
    "gain_scaling",
    "phase_sensitivity",
    "rotated_number_distribution",
]
