"""Multimodal flow matching for crystal generation in numpy.

Atom types follow a masked continuous-time Markov chain, fractional
coordinates a torus flow and lattice parameters a Euclidean flow, all driven
by one small diffusion-transformer backbone conditioned on two times.
"""

from .config import RunConfig, load_config
from .lattice import Crystal, LatticeParams
from .model import FlowModel
from .sampler import GuidanceConfig, Task, generate, generate_batch, guided_generate

__all__ = [
    "Crystal",
    "LatticeParams",
    "RunConfig",
    "load_config",
    "FlowModel",
    "Task",
    "GuidanceConfig",
    "generate",
    "generate_batch",
    "guided_generate",
]

__version__ = "0.1.0"
