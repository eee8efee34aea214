"""Design and simulation toolkit for gain-scheduled sequential loop closing
on position-dependent motion systems."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DesignInfeasibleError,
    DomainError,
    LpvSlcError,
    ModelError,
    NumericalError,
)
from .plant import ModalPlantModel, Mode, benchmark_plant
from .design import (
    ControllerSet,
    DesignSpec,
    certify,
    design_lpv_slc,
    design_lti_slc,
    freeze_controller_set,
)
from .sim import SimConfig, SimResult, StageMotion, benchmark_motion, simulate
from .trajectory import MotionBounds, plan

__all__ = [
    "__version__",
    "LpvSlcError",
    "ConfigError",
    "DomainError",
    "ModelError",
    "DesignInfeasibleError",
    "NumericalError",
    "Mode",
    "ModalPlantModel",
    "benchmark_plant",
    "DesignSpec",
    "ControllerSet",
    "design_lti_slc",
    "design_lpv_slc",
    "freeze_controller_set",
    "certify",
    "MotionBounds",
    "plan",
    "SimConfig",
    "StageMotion",
    "SimResult",
    "benchmark_motion",
    "simulate",
]
