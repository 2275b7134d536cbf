"""Task-agnostic x2 feature upsampling operators in pure NumPy.

Core pieces: NCHW tensor primitives with a bit-exact file format
(:mod:`fadeup.tensor`), reverse-mode autodiff (:mod:`fadeup.autograd`),
semi-shift kernel generation (:mod:`fadeup.kernelgen`), kernel
reassembly (:mod:`fadeup.assemble`), gated fusion (:mod:`fadeup.gate`),
assembled operators (:mod:`fadeup.operators`), an analytic cost model
(:mod:`fadeup.costmodel`), and a toy training harness (:mod:`fadeup.toy`).
"""

__version__ = "0.1.0"

from .operators import OperatorConfig, UpsampleOperator, build_operator  # noqa: F401
