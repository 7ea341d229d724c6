from .lm import LmOptions, LmResult, finite_difference_jacobian, lm_solve
from .svc import (SvcEnsemble, SvcModel, bagging_train, decision_on_grid, ensemble_decision,
                  gaussian_kernel, nu_max, svc_decision, svc_train)

__all__ = [
    "LmOptions", "LmResult", "finite_difference_jacobian", "lm_solve",
    "SvcEnsemble", "SvcModel", "bagging_train", "decision_on_grid", "ensemble_decision",
    "gaussian_kernel", "nu_max", "svc_decision", "svc_train",
]
