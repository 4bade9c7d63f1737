"""Simulation and verification toolkit for Markov processes with the
space inversion property: each registered family carries an involution I,
an excessive function h, and a time-change density v such that the
involuted, time-changed path has the law of the h-transform."""

import os as _os

_threads = _os.environ.get("INVERSIO_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .errors import (DomainError, InvalidArgumentError, InversioError,
                     NumericalDomainError, PastLifetimeError, TailError,
                     UnsupportedError)
from .families import (Characteristics, as_state_data, density, get_family,
                       goe_embedding, identity_map, radial_process_value,
                       random_states, self_duality_residual, squares_map)
from .kelvin import (RegionSpec, apply_generator, box_region, dual_kelvin,
                     exit_identity_check, exit_sample, generator_residual,
                     harmonic_dictionary_check, involuted_region,
                     kelvin_transform, potential_kernel,
                     potential_relation_residual, radial_annulus)
from .rng import RngStream
from .sampling import sample_path, sample_paths
from .state import Path, PathBatch, State, TimeGrid, make_grid
from .statcheck import (TestReport, energy_distance, ip_null_calibration,
                        ks_statistic, verify_characteristics,
                        verify_conjugation, verify_excessive, verify_ip,
                        verify_radial_bessel, verify_self_duality)
from .transforms import (AdditiveFunctional, WeightedSample,
                         additive_functional, doob_paths, h_weight,
                         invert_time_change, involute_path,
                         kelvin_conditioning_h, weighted_marginal)

__version__ = "0.1.0"

__all__ = [
    "AdditiveFunctional", "Characteristics", "DomainError",
    "InvalidArgumentError", "InversioError", "NumericalDomainError", "Path",
    "PathBatch", "PastLifetimeError", "RegionSpec", "RngStream", "State",
    "TailError", "TestReport", "TimeGrid", "UnsupportedError",
    "WeightedSample", "additive_functional", "apply_generator",
    "as_state_data", "box_region", "density", "doob_paths", "dual_kelvin",
    "energy_distance", "exit_identity_check", "exit_sample",
    "generator_residual", "get_family", "goe_embedding", "h_weight",
    "harmonic_dictionary_check", "identity_map", "invert_time_change",
    "involute_path", "involuted_region", "ip_null_calibration",
    "kelvin_conditioning_h", "kelvin_transform", "ks_statistic", "make_grid",
    "potential_kernel", "potential_relation_residual", "radial_annulus",
    "radial_process_value", "random_states", "sample_path", "sample_paths",
    "self_duality_residual", "squares_map", "verify_characteristics",
    "verify_conjugation", "verify_excessive", "verify_ip",
    "verify_radial_bessel", "verify_self_duality", "weighted_marginal",
]
