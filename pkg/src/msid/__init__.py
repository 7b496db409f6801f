"""Finite-sample identification of continuous-time MIMO systems from multisine data."""
from .bounds import (BoundInputs, BoundReport, bi_lipschitz_check, bound_report,
                     frf_bound, frf_mse_bound, gaussian_tail_radius, theta_bound)
from .fit import (FitOptions, FitResult, asymptotic_variance_first_order, cost_explicit,
                  cost_ml, fit_first_order, fit_iterative, fit_levy, fit_lmfd_closed_form,
                  normal_approx_a1, pem_cost_time)
from .frf import (FrfEstimate, LsOperator, covariance, etfe_estimate, frf_interp,
                  ls_estimate, real_covariance)
from .models import (FirstOrderSiso, FrfStack, LmfdModel, LmfdStructure, ModalModel,
                     ModalStructure, ModelStructure, TrueSystem, frf_lmfd, frf_modal,
                     frf_stack, jacobian_lmfd, rhp_poles)
from .multisine import (AmplitudeMatrices, ExcitationDesign, FrequencyGrid,
                        amplitude_matrices, check_assumption1, check_assumption2,
                        check_assumption3, eval_input, gamma_tilde, mutual_coherence,
                        phi_vector, random_design)
from .simulator import Dataset, NoiseModel, simulate_dataset, steady_state_output, \
    true_hms_from_frf, zeta

__version__ = "0.1.0"

__all__ = [
    "BoundInputs",
    "BoundReport",
    "bi_lipschitz_check",
    "bound_report",
    "frf_bound",
    "frf_mse_bound",
    "gaussian_tail_radius",
    "theta_bound",
    "FitOptions",
    "FitResult",
    "asymptotic_variance_first_order",
    "cost_explicit",
    "cost_ml",
    "fit_first_order",
    "fit_iterative",
    "fit_levy",
    "fit_lmfd_closed_form",
    "normal_approx_a1",
    "pem_cost_time",
    "FrfEstimate",
    "LsOperator",
    "covariance",
    "etfe_estimate",
    "frf_interp",
    "ls_estimate",
    "real_covariance",
    "FirstOrderSiso",
    "FrfStack",
    "LmfdModel",
    "LmfdStructure",
    "ModalModel",
    "ModalStructure",
    "ModelStructure",
    "TrueSystem",
    "frf_lmfd",
    "frf_modal",
    "frf_stack",
    "jacobian_lmfd",
    "rhp_poles",
    "AmplitudeMatrices",
    "ExcitationDesign",
    "FrequencyGrid",
    "amplitude_matrices",
    "check_assumption1",
    "check_assumption2",
    "check_assumption3",
    "eval_input",
    "gamma_tilde",
    "mutual_coherence",
    "phi_vector",
    "random_design",
    "Dataset",
    "NoiseModel",
    "simulate_dataset",
    "steady_state_output",
    "true_hms_from_frf",
    "zeta",
]
