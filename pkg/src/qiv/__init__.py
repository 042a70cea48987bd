"""ATT estimation for binary outcomes with a quasi-instrumental variable."""

__version__ = "0.1.0"

from .design import DataError, Dataset, Design, ModelSpec, ParamVector, build_design
from .glm import LogisticFit, SeparationError, fit_logistic
from .gop import GopPoint, NumericalFailure, RiskTriple, gop_forward, implied_risks, solve_p00
from .identify import StratumMeans, WeakQivError, np_identify
from .mle import (AttEstimate, MleConfig, MleFit, TestReport, fit_mle, lr_test_null,
                  marginal_att_plugin)
from .sim import Scenario, ScenarioSpec, run_mc, simulate_dataset
from .tr import TrConfig, dr_score_test, fit_nuisances, tr_estimate

__all__ = [
    "__version__",
    "DataError", "Dataset", "Design", "ModelSpec", "ParamVector", "build_design",
    "LogisticFit", "SeparationError", "fit_logistic",
    "GopPoint", "NumericalFailure", "RiskTriple", "gop_forward", "implied_risks", "solve_p00",
    "StratumMeans", "WeakQivError", "np_identify",
    "AttEstimate", "MleConfig", "MleFit", "TestReport", "fit_mle", "lr_test_null",
    "marginal_att_plugin",
    "Scenario", "ScenarioSpec", "run_mc", "simulate_dataset",
    "TrConfig", "dr_score_test", "fit_nuisances", "tr_estimate",
]
