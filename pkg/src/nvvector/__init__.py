"""Vector detection of AC magnetic fields with single-orientation NV centers."""

__version__ = "0.1.0"

from .spin_core import (  # noqa: E402
    DEFAULT_CONSTANTS, Label, PhysicalConstants, StaticField, Transition, eigensystem,
    find_transition, ground_hamiltonian, solve, transitions,
)
from .signal_synth import ACFieldVector, LineShapeParams, rabi_frequency  # noqa: E402
from .inversion import RabiMeasurementSet, ReconstructedField, invert_field, sensitivity  # noqa: E402
from .protocol import plan_static_field, single_frequency_protocol  # noqa: E402
