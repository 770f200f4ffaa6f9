"""
Sequential network composed from a LayerSpec list.
Parameter shapes follow from the spec list and the declared input shape;
initial values follow from the seed alone.
"""

import logging
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.exceptions import BadArgumentError, NumericFailureError
from src.numerics.layers import Layer, LayerSpec, build_layer
from src.numerics.tensor import Tensor

logger = logging.getLogger(__name__)

DEFAULT_INPUT_SHAPE = (3, 32, 32)


def default_layer_specs(num_outputs: int) -> List[LayerSpec]:
    """
    Desk-scale AlexNet-style stack: two conv/relu/pool stages and two linear layers.

    Args:
        num_outputs (int): Width Q of the final linear layer

    Returns:
        list: LayerSpec list
    """
    return [
        LayerSpec.conv2d(8, kernel=3),
        LayerSpec.relu(),
        LayerSpec.maxpool2d(2),
        LayerSpec.conv2d(16, kernel=3),
        LayerSpec.relu(),
        LayerSpec.maxpool2d(2),
        LayerSpec.flatten(),
        LayerSpec.linear(64),
        LayerSpec.relu(),
        LayerSpec.linear(num_outputs),
    ]


class Network:
    """
    An ordered stack of layers with seeded parameters.

    Attributes:
        specs (list): The LayerSpec list the network was built from
        input_shape (tuple): Per-sample C×H×W shape
        seed (int): Seed used to draw the initial parameters
        layers (list): Instantiated layers
    """

    def __init__(self, specs: Sequence[LayerSpec], input_shape: Sequence[int] = DEFAULT_INPUT_SHAPE,
                 seed: int = 0):
        if not specs:
            raise BadArgumentError("A network needs at least one layer")
        if seed < 0:
            raise BadArgumentError(f"Seed must be an unsigned integer, got {seed}")
        self.specs = list(specs)
        self.input_shape = tuple(int(extent) for extent in input_shape)
        self.seed = int(seed)
        self.layers: List[Layer] = []
        self._has_forward = False

        shape = self.input_shape
        for index, spec in enumerate(self.specs):
            layer = build_layer(spec, shape, index)
            self.layers.append(layer)
            shape = layer.output_shape

        rng = np.random.default_rng(self.seed)
        for layer in self.layers:
            layer.init_parameters(rng)

    @property
    def output_shape(self) -> Tuple[int, ...]:
        return self.layers[-1].output_shape

    @property
    def depth(self) -> int:
        return len(self.layers)

    def named_parameters(self) -> Iterator[Tuple[str, Tensor, float]]:
        """Yield (name, tensor, lr multiplier) for every trainable tensor in layer order."""
        for layer in self.layers:
            for param_name, tensor in layer.parameters.items():
                yield f"{layer.name}.{param_name}", tensor, layer.spec.lr_mult

    def parameters(self) -> Dict[str, Tensor]:
        return {name: tensor for name, tensor, _ in self.named_parameters()}

    def parameter_count(self) -> int:
        return sum(tensor.size for _, tensor, _ in self.named_parameters())

    def zero_grad(self):
        for _, tensor, _ in self.named_parameters():
            tensor.zero_grad()

    def forward(self, batch: Union[Tensor, np.ndarray], cache: bool = True,
                stop_at: Optional[int] = None) -> Tensor:
        """
        Run the layer stack on a batch.

        Args:
            batch: N×C×H×W input
            cache (bool): Keep intermediate values for backward
            stop_at (int, optional): Return the activation entering this layer index

        Returns:
            Tensor: Final pre-activation logits z^L (N×D), or the requested activation
        """
        x = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
        if x.ndim != len(self.input_shape) + 1 or tuple(x.shape[1:]) != self.input_shape:
            raise BadArgumentError(
                f"layer 0 ({self.specs[0].kind}): batch shape {x.shape} does not match "
                f"declared input (N, {', '.join(map(str, self.input_shape))})"
            )
        end = self.depth if stop_at is None else stop_at
        if not 0 <= end <= self.depth:
            raise BadArgumentError(f"stop_at must lie in [0, {self.depth}], got {stop_at}")

        keep = cache and stop_at is None
        for layer in self.layers[:end]:
            x = layer.forward(x, cache=keep)
        self._has_forward = keep
        if not np.all(np.isfinite(x)):
            raise NumericFailureError("Forward pass produced non-finite activations")
        return Tensor(x)

    def backward(self, loss_grad: Union[Tensor, np.ndarray]) -> Dict[str, np.ndarray]:
        """
        Propagate the loss gradient through the cached forward pass.

        Args:
            loss_grad: Gradient of the loss with respect to the logits (N×D)

        Returns:
            dict: Parameter name -> gradient array; the same arrays are written to each tensor's grad
        """
        if not self._has_forward:
            raise BadArgumentError("backward requires a prior forward pass with caching enabled")
        grad = loss_grad.data if isinstance(loss_grad, Tensor) else np.asarray(loss_grad, dtype=np.float64)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        grads = {}
        for name, tensor, _ in self.named_parameters():
            if tensor.grad is None or not np.all(np.isfinite(tensor.grad)):
                raise NumericFailureError(f"Gradient for {name} is missing or non-finite")
            grads[name] = tensor.grad
        return grads

    def linear_layer_indices(self) -> List[int]:
        return [layer.index for layer in self.layers if layer.spec.kind == "linear"]

    def penultimate_width(self) -> int:
        """Width of the activation feeding the final linear layer."""
        linear = self.linear_layer_indices()
        if len(linear) < 2:
            raise BadArgumentError("Network has no penultimate linear stage")
        return int(np.prod(self.layers[linear[-1]].input_shape))

    def routing(self) -> List[np.ndarray]:
        """Branch choices of the piecewise layers in the last cached forward pass."""
        return [route.copy() for route in (layer.routing() for layer in self.layers) if route is not None]

    def clear_caches(self):
        for layer in self.layers:
            layer.clear_cache()
        self._has_forward = False

    def load_parameters(self, values: Dict[str, np.ndarray], strict: bool = True):
        """
        Copy parameter values into this network.

        Args:
            values (dict): Parameter name -> array
            strict (bool): Require every parameter of this network to be present
        """
        for name, tensor, _ in self.named_parameters():
            if name not in values:
                if strict:
                    raise BadArgumentError(f"Missing parameter {name}")
                continue
            array = np.asarray(values[name], dtype=np.float64)
            if array.shape != tensor.shape:
                raise BadArgumentError(
                    f"Parameter {name} has shape {array.shape}, network expects {tensor.shape}"
                )
            tensor.data = array.copy()

    def describe(self) -> List[str]:
        lines = []
        for layer in self.layers:
            count = sum(t.size for t in layer.parameters.values())
            lines.append(
                f"{layer.index:>2} {layer.spec.kind:<9} out={layer.output_shape} "
                f"params={count} lr_mult={layer.spec.lr_mult:g}"
            )
        return lines

    def log_summary(self):
        logger.info(f"Network with {self.depth} layers, {self.parameter_count()} parameters, seed {self.seed}")
        for line in self.describe():
            logger.debug(line)


def compose(first: Sequence[LayerSpec], second: Sequence[LayerSpec]) -> List[LayerSpec]:
    """Concatenate two spec lists into one stack."""
    return list(first) + list(second)
