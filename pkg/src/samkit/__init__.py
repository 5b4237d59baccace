"""samkit: simulation and hysteresis-compensation toolkit for an
extensible cable-driven continuum manipulator."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DegenerateFitError,
    DegenerateGeometryError,
    DomainError,
    InsufficientMarkersError,
    ModelMismatchError,
    NumericalError,
    SamkitError,
    TrainingDivergedError,
)
from .kinematics import (  # noqa: F401
    ArcParams,
    IkOptions,
    IkResult,
    JointConfig,
    SegmentParams,
    inverse_kinematics,
    manipulator_fk,
    numeric_jacobian,
    segment_arc,
    segment_fk,
)
from .transforms import RigidTransform  # noqa: F401
