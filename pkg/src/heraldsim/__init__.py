"""Simulator of beamsplitter-heralded entanglement between two cavity-coupled
quantum-dot spins: Hamiltonian builders, Lindblad and quantum-jump engines,
and the end-to-end heralding protocol with scenario presets."""

__version__ = "0.1.0"

from . import dynamics, model, protocol, qcore  # noqa: F401
from . import harness  # noqa: F401  (imports after the core to avoid cycles)
