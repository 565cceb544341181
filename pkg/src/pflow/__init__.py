"""Newton-Raphson AC power flow with parallel per-model evaluation workflows."""

from .case_io import (BranchRow, BusRow, CaseFormatError, GenRow, RawCase,
                      Violation, parse_case, parse_case_file, validate_case,
                      write_case)
from .jacobian import (JacobianWorkspace, evaluate_jacobian, export_matrix_market,
                       finite_difference_jacobian, symbolic_pattern)
from .linear_solver import (BuiltinLU, DenseLU, SingularMatrixError, UmfpackLU,
                            make_solver, solve)
from .newton import NewtonOptions, SolveResult, newton_solve
from .residual import (ResidualWorkspace, evaluate_residual, line_injections,
                       pq_injections, pv_injections, shunt_injections,
                       slack_injections)
from .system_model import (AddressMap, LineGroup, PowerSystem, PqGroup, PvGroup,
                           ShuntGroup, SlackGroup, StateVector, build_system,
                           count_variables, flat_start)
from .workflow import (IntraStrategy, WorkflowConfig, WorkflowConfigError,
                       WORKFLOW_TABLE, all_workflows, per_model_timing,
                       run_models, set_worker_count, worker_count,
                       workflow_config)

__version__ = "0.1.0"

__all__ = [
    "AddressMap", "BranchRow", "BuiltinLU", "BusRow", "CaseFormatError",
    "DenseLU", "GenRow", "IntraStrategy", "JacobianWorkspace", "LineGroup",
    "NewtonOptions", "PowerSystem", "PqGroup", "PvGroup", "RawCase",
    "ResidualWorkspace", "ShuntGroup", "SingularMatrixError", "SlackGroup",
    "SolveResult", "StateVector", "UmfpackLU", "Violation", "WORKFLOW_TABLE",
    "WorkflowConfig", "WorkflowConfigError", "all_workflows", "build_system",
    "count_variables", "evaluate_jacobian", "evaluate_residual",
    "export_matrix_market", "finite_difference_jacobian", "flat_start",
    "line_injections", "make_solver", "newton_solve", "parse_case",
    "parse_case_file", "per_model_timing", "pq_injections", "pv_injections",
    "run_models", "set_worker_count", "shunt_injections", "slack_injections",
    "solve", "symbolic_pattern", "validate_case", "worker_count",
    "workflow_config", "write_case",
]
