"""Design-based estimation of mean curves from survey samples with missing values.

Kernel-smoothed Horvitz-Thompson and Hájek estimators, their exact and
linearized variances, plug-in variance estimators, cross-validated
bandwidth choice, and an enumeration / Monte Carlo test harness.
"""

__version__ = "0.1.0"

from .design import SRSWOR, PoissonDesign, Sample, StratifiedSRSWOR, draw_sample
from .estimators import (
    EstimatedCurve,
    estimate,
    hajek1_mean_nr,
    hajek2_mean_nr,
    hajek_mean_full,
    ht_mean_full,
    ht_mean_nr,
    stratified_mean,
)
from .grid_kernel import KernelSpec, TimeGrid, smooth, smoothing_weights, weight_matrix
from .population import CurvePopulation, GeneratorConfig, generate_population, population_mean
from .response import (
    FullResponse,
    HomogeneousGroups,
    MarkovGap,
    ObservationMask,
    estimate_theta_group,
    estimate_theta_stationary,
    simulate_mask,
)
from .bandwidth import cv_score, select_bandwidth
from .variance import (
    variance_difference_stratified,
    variance_estimate_plugin,
    variance_hajek_approx,
    variance_ht_exact,
    variance_stratified,
)
