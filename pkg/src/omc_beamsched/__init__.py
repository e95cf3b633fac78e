"""Online model checking of breathing-motion models for robotic beam scheduling."""

from .beams import BeamSpec
from .datagen import ChangeEvent, TraceSpec, gen_beam_list, gen_motion_trace
from .fitting import FitError, SampleWindow, estimate_period, fit, fit_window
from .formats import (
    FormatError,
    MotionTrace,
    parse_beam_list,
    parse_declarations,
    parse_trace,
    read_beam_list,
    read_trace,
    write_beam_list,
    write_declarations,
    write_trace,
)
from .motion import MotionModel1D, PerturbationConfig, derive_perturbation, evaluate, simulate
from .pipeline import OmcConfig, OmcPipeline, SlotModelSet, TierState, run_slot, slot_clock
from .protocol import BeamServer, LocalBeamClient, TcpBeamClient
from .service import BeamService, ServiceConfig, prioritize, verify_slot
from .smc import (
    InvariantQuery,
    ProbabilityEstimate,
    ReachBoxQuery,
    SmcConfig,
    check_invariant,
    check_reach_box,
    chernoff_runs,
)
from .treatment import TreatmentConfig, TreatmentLog, TreatmentPlan, compare, run_omc, run_static, static_order

__version__ = "0.1.0"
