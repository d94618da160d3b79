"""Edge-anchored multimodal fusion for joint 2D optical flow and 3D scene
flow, built on a small float64 reverse-mode tensor engine.

Submodules: ``autodiff`` (tensors, ops, gradients), ``events`` (event-stream
domain and edge encoder), ``encoders`` (image/LiDAR backbones, projection,
2D<->3D lifting), ``alignment``, ``fusion``, ``contrast``, ``decoder``
(flow heads and objective), ``synth`` (scene factory), ``metrics``,
``model`` (assembly and training), ``floio`` / ``checkpoint`` (interchange
formats), and ``cli``.
"""

from .autodiff import Tensor, backward, finite_diff_check, forward_op
from .model import ModelConfig, TrainConfig
from .rng import Rng

__all__ = ["Tensor", "backward", "finite_diff_check", "forward_op",
           "ModelConfig", "TrainConfig", "Rng"]
__version__ = "0.1.0"
