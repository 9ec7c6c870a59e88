"""Security-margin estimation for power systems.

Computes and compares two operational margins under identical stress rules:
the post-contingency loadability limit (stress applied after the disturbance)
and the secure operating limit (stress applied before it), on top of a
full time-domain simulation engine with voltage-dependent loads, limiters,
and tap changers.
"""

from .cases import (CompositeLoad, Generator, LtcRecord, SystemCase, ZipLoad,
                    builtin_two_area, builtin_twobus, case_from_dict,
                    case_to_dict, load_case, save_case, validate_case,
                    with_composite_composition, with_zip_composition,
                    without_limiters)
from .devices import (CompositeLoadParams, GeneratorParams,
                      GovernorIeesgoParams, LtcParams, MotorClassParams,
                      ZipLoadParams)
from .errors import (AlgebraicDivergenceError, BracketError,
                     ClassificationError, GridMarginError, HeadroomError,
                     InitializationError, PowerFlowDivergedError,
                     StructuralError, ValidationError)
from .events import Contingency, Event, EventAction
from .margins import (MarginResult, PVCurve, StressSchedule, binary_search_sol,
                      compute_pcll, compute_sol, limiting_reason,
                      margins_to_csv, pv_per_bus_csv, sample_pv_curve)
from .network import (Branch, Bus, BusKind, PowerFlowSolution,
                      build_admittance, continuation_loadability,
                      solve_power_flow)
from .simulation import (InstabilityClass, SimulationTrace, Simulator,
                         StabilityCriterion, StabilizationDetector, Verdict,
                         VerdictReason, classify_instability, run,
                         run_until_stabilized)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
