"""Simulator for remote entanglement of two qubits generated by
multiplying their ancilla signals into a dissipative parity channel,
with homodyne readout of the leftover modes.

Submodules follow the pipeline: ``hilbert`` (states/operators),
``dynamics`` (Lindblad / stochastic evolution), ``measurement``
(quadrature projections), ``metrics`` (entanglement diagnostics),
``protocol`` (end-to-end runs), ``cli`` (command-line interface).
"""

__version__ = "0.1.0"

from .dynamics import ProtocolParams, TrajectoryRecord  # noqa: F401
from .hilbert import ModeSpec, SpaceLayout  # noqa: F401
