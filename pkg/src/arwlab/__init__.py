"""Simulation toolkit for one-dimensional Activated Random Walks.

Instructions live on a site-wise tape, so every run is a deterministic
function of its seed and the Abelian property can be checked exactly.
"""

__version__ = "0.1.0"

from .tape import InstructionTape, ModelParams, Instruction  # noqa: E402,F401
from .lattice import Configuration, SegmentSpec  # noqa: E402,F401
from .stabilizer import stabilize  # noqa: E402,F401
