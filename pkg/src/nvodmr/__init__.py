"""NV- / P1 ODMR line prediction, map synthesis and geometry fitting."""
__version__ = "0.1.0"

from .dipolar import EnsembleDensity, anderson_ratio, lattice_sum_mc, local_field_variance, r_eff
from .fit import FitProblem, PeakSet, assign_families, extract_peaks, fit_parameters
from .geometry import FieldConfiguration, compensate_misalignment, defect_frame_field, lab_field_vector
from .kernels import BACKEND
from .lines import (
    LineFamily,
    SweepGrid,
    acoustic_comb,
    arc_family,
    bloch_siegert_shift,
    flip_flip_line,
    flip_flop_lines,
    fractional_lines,
    gslac_frequency,
    nv_transitions,
    p1_transitions,
)
from .spectrum import OdmrMap, synthesize_map
from .spin import NvParameters, P1Parameters, build_nv_hamiltonian, build_p1_hamiltonian, eigh

__all__ = [
    "BACKEND",
    "EnsembleDensity",
    "FieldConfiguration",
    "FitProblem",
    "LineFamily",
    "NvParameters",
    "OdmrMap",
    "P1Parameters",
    "PeakSet",
    "SweepGrid",
    "acoustic_comb",
    "anderson_ratio",
    "arc_family",
    "assign_families",
    "bloch_siegert_shift",
    "build_nv_hamiltonian",
    "build_p1_hamiltonian",
    "compensate_misalignment",
    "defect_frame_field",
    "eigh",
    "extract_peaks",
    "fit_parameters",
    "flip_flip_line",
    "flip_flop_lines",
    "fractional_lines",
    "gslac_frequency",
    "lab_field_vector",
    "lattice_sum_mc",
    "local_field_variance",
    "nv_transitions",
    "p1_transitions",
    "r_eff",
    "synthesize_map",
]
