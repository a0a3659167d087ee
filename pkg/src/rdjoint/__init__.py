"""Joint robust inference for a regression discontinuity effect and its slope.

Estimates the jump and slope-jump of the conditional mean at a cutoff with
robust bias correction, builds their joint confidence ellipse, and
extrapolates the effect linearly with a simultaneous confidence band.
"""

from .band import (BandRequest, UniformBand, band_coverage_probability, critical_value,
                   direction_angle, extrapolate_point, uniform_band)
from .bandwidth import rule_of_thumb_bandwidths
from .data import FitSpec, Sample, ValidationReport, load_sample, validate_sample
from .errors import (DomainError, EstimationError, InferenceError, ParseError, RDError,
                     SchemaError)
from .fuzzy import (FuzzyEstimates, assemble_omega_fuzzy, estimate_fuzzy,
                    fuzzy_level_variance)
from .inference import (ConfidenceRegion, chi2_quantile_2df, confidence_region,
                        normal_quantile, rbc_marginal_interval, region_boundary,
                        wald_statistic)
from .locpoly import Kernel, OneSidedFit, bias_constants, fit_one_sided, kernel_weight
from .sharp import (JointEstimates, OmegaMatrix, VarianceDiagonals, assemble_omega,
                    estimate_sharp, nn_variance)
from .simlab import CoverageReport, DgpSpec, coverage_experiment, generate_dgp

__version__ = "0.1.0"
