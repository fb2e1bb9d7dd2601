"""Coverage boundary estimation from geolocated signal measurements."""

from .boundary import (
    BandBoundary,
    ConvexHullBoundary,
    CoverageModel,
    build_coverage_model,
    default_bbox,
    extract_contour,
    hull_excess_region,
    load_band_boundary,
    load_coverage_models,
    models_to_geojson,
    save_band_boundary,
)
from .errors import (
    CellcovError,
    ConvergenceError,
    DegenerateHullError,
    EvaluationError,
    IngestError,
    ModelFormatError,
    ModelVersionError,
)
from .evaluation import (
    ConfusionCounts,
    EvalReport,
    GridSpec,
    compare_methods,
    evaluate_band,
    f1,
    f1_of,
    grid_search,
)
from .geometry import LocalProjection, Polygon, convex_hull, point_in_polygon
from .measurements import (
    BANDS,
    Dataset,
    MeasurementRecord,
    SignalBand,
    band_of,
    parse_csv,
    partition,
    temporal_split,
    write_csv,
)
from .ocsvm import (
    RbfOneClassSvm,
    deserialize,
    model_from_dict,
    model_to_dict,
    rbf_kernel,
    rbf_kernel_matrix,
    serialize,
)
from .synthgen import Scenario, ScenarioOracle, generate, oracle_covered

__version__ = "0.1.0"

__all__ = [
    "BANDS",
    "BandBoundary",
    "CellcovError",
    "ConfusionCounts",
    "ConvergenceError",
    "ConvexHullBoundary",
    "CoverageModel",
    "Dataset",
    "DegenerateHullError",
    "EvalReport",
    "EvaluationError",
    "GridSpec",
    "IngestError",
    "LocalProjection",
    "MeasurementRecord",
    "ModelFormatError",
    "ModelVersionError",
    "Polygon",
    "RbfOneClassSvm",
    "Scenario",
    "ScenarioOracle",
    "SignalBand",
    "band_of",
    "build_coverage_model",
    "compare_methods",
    "convex_hull",
    "default_bbox",
    "deserialize",
    "evaluate_band",
    "extract_contour",
    "f1",
    "f1_of",
    "generate",
    "grid_search",
    "hull_excess_region",
    "load_band_boundary",
    "load_coverage_models",
    "model_from_dict",
    "model_to_dict",
    "models_to_geojson",
    "oracle_covered",
    "parse_csv",
    "partition",
    "point_in_polygon",
    "rbf_kernel",
    "rbf_kernel_matrix",
    "save_band_boundary",
    "serialize",
    "temporal_split",
    "write_csv",
]
