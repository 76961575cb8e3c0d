"""Voxel-grid fields, tube rasterization, L^p norms and box counting."""

import warnings

# numba probes TBB at first parallel launch; the fallback layers are fine
warnings.filterwarnings("ignore", message="The TBB threading layer")

from .grid import (
    DEFAULT_BUDGET_CELLS,
    GridSpec,
    ScalarField,
    configure_threads,
    load_snapshot,
    save_snapshot,
)
from .ops import (
    box_count,
    default_scales,
    fit_dimension,
    lp_norm,
    mixed_norm_xray,
    multiplicity_field,
    multiplicity_histogram,
    norm_from_histogram,
    tube_cell_counts,
    tube_cell_indices,
    tube_sums,
    tube_voxel_volume,
    union_field,
    xray,
    xray_delta,
    xray_delta_many,
)

__all__ = [
    "DEFAULT_BUDGET_CELLS",
    "GridSpec",
    "ScalarField",
    "box_count",
    "default_scales",
    "configure_threads",
    "fit_dimension",
    "load_snapshot",
    "lp_norm",
    "mixed_norm_xray",
    "multiplicity_field",
    "multiplicity_histogram",
    "norm_from_histogram",
    "save_snapshot",
    "tube_cell_counts",
    "tube_cell_indices",
    "tube_sums",
    "tube_voxel_volume",
    "union_field",
    "xray",
    "xray_delta",
    "xray_delta_many",
]
