"""landaulab: semiclassical Landau-level predictions for magnetic
Schrodinger operators checked against sparse Peierls-phase discretizations
on flat 2D geometries."""

__version__ = "0.1.0"

from .model import Domain, FieldSamples, Grid, ModelSpec, sample_fields, validate_model
from .predictor import (
    LandauBandSet,
    TestFunction,
    f0_pairing,
    frame_eigenvalues,
    k_set,
    landau_level,
    local_f0,
    sigma_bands,
    weyl_count_prediction,
    weyl_measure,
)
from .discretize import GaugeData, SparseHermitian, assemble, build_gauge, gauge_transform
from .mmio import export_matrix, import_matrix
from .spectral import (
    LocalizationReport,
    SpectralSlice,
    cluster_distance,
    count_interval,
    eigenpairs_in_interval,
    inertia,
    localization_metrics,
    trace_phi,
)
from .harness import ExperimentConfig, fit_power_law, ldos_check, run_sweep

__all__ = [
    "Domain", "FieldSamples", "Grid", "ModelSpec", "sample_fields", "validate_model",
    "LandauBandSet", "TestFunction", "f0_pairing", "frame_eigenvalues", "k_set",
    "landau_level", "local_f0", "sigma_bands", "weyl_count_prediction", "weyl_measure",
    "GaugeData", "SparseHermitian", "assemble", "build_gauge", "gauge_transform",
    "export_matrix", "import_matrix",
    "LocalizationReport", "SpectralSlice", "cluster_distance", "count_interval",
    "eigenpairs_in_interval", "inertia", "localization_metrics", "trace_phi",
    "ExperimentConfig", "fit_power_law", "ldos_check", "run_sweep",
]
