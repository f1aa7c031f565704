"""Graph-Laplacian regularized hyperspectral unmixing (GLUP-Lap)."""

from .datamodel import (AbundanceMatrix, EndmemberLibrary, HyperCube,
                        ImageGeometry, load_abundance, load_cube, load_library,
                        save_abundance, save_cube, save_library)
from .errors import (ConfigError, DataError, FormatError, GlupError, IoError,
                     NumericalError)
from .evaluate import RmseResult, export_abundance_map, export_affinity_heatmap, rmse
from .graph import (AffinityMatrix, Laplacian, affinity_gaussian,
                    affinity_threshold, combine_with_spatial, empty_affinity,
                    laplacian, laplacian_quadratic)
from .partition import (PartitionLabels, Subproblem, cut_weight,
                        extract_subproblems, spectral_partition, stitch)
from .solver import (SolveReport, SolverConfig, SolverState, fcls, glup_lap,
                     objective, prox_nonneg_group)
from .synthgen import (NoiseSpec, SceneConfig, add_noise, generate_scene,
                       group_labels, make_surrogate_library)

__version__ = "0.1.0"

__all__ = [
    "AbundanceMatrix", "AffinityMatrix", "ConfigError", "DataError",
    "EndmemberLibrary", "FormatError", "GlupError", "HyperCube",
    "ImageGeometry", "IoError", "Laplacian", "NoiseSpec", "NumericalError",
    "PartitionLabels", "RmseResult", "SceneConfig", "SolveReport",
    "SolverConfig", "SolverState", "Subproblem", "add_noise",
    "affinity_gaussian", "affinity_threshold", "combine_with_spatial",
    "cut_weight", "empty_affinity", "export_abundance_map",
    "export_affinity_heatmap", "extract_subproblems", "fcls", "generate_scene",
    "glup_lap", "group_labels", "laplacian", "laplacian_quadratic",
    "load_abundance", "load_cube", "load_library", "make_surrogate_library",
    "objective", "prox_nonneg_group", "rmse", "save_abundance", "save_cube",
    "save_library", "spectral_partition", "stitch",
]
