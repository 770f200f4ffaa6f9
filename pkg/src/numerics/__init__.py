"""
Numerics Package
Tensor container, CNN layers, sequential networks, gradient checking and checkpoints.
"""

from src.numerics.tensor import Tensor
from src.numerics.layers import LayerSpec
from src.numerics.network import Network, default_layer_specs
from src.numerics.checkpoint import Checkpoint, load_checkpoint, save_checkpoint

__all__ = [
    'Tensor',
    'LayerSpec',
    'Network',
    'default_layer_specs',
    'Checkpoint',
    'load_checkpoint',
    'save_checkpoint'
]
