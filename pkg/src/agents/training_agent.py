"""
Training agent.
Mini-batch SGD with momentum, weight decay and per-layer learning-rate multipliers,
plus the fine-tuning protocol that swaps the final linear layer of a pretrained network.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

import config
from src.exceptions import BadArgumentError, NumericFailureError
from src.numerics.checkpoint import Checkpoint, load_checkpoint
from src.numerics.layers import LayerSpec
from src.numerics.network import Network, default_layer_specs
from src.processors.heads import MULTI_CLASS, MULTI_LABEL, loss_and_grad

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """Optimizer and loop settings; defaults mirror config.py."""
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)

    batch_size: int = Field(default=config.BATCH_SIZE, gt=0)
    momentum: float = Field(default=config.MOMENTUM, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=config.WEIGHT_DECAY, ge=0.0)
    learning_rate: float = Field(default=config.SCRATCH_LEARNING_RATE, gt=0.0)
    epochs: int = Field(default=config.EPOCHS, gt=0)
    seed: int = Field(default=config.DEFAULT_SEED, ge=0)
    head: Literal["multi-class", "multi-label"] = MULTI_CLASS


@dataclass
class OptimizerState:
    """
    Momentum buffers, one per parameter, shaped like the parameter.

    Attributes:
        velocities (dict): Parameter name -> velocity array
        steps (int): Updates applied so far
    """
    velocities: Dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    @classmethod
    def for_network(cls, net: Network) -> "OptimizerState":
        return cls({name: np.zeros(tensor.shape) for name, tensor, _ in net.named_parameters()})


@dataclass
class TrainResult:
    net: Network
    losses: List[float]
    state: OptimizerState


def sgd_step(net: Network, grads: Dict[str, np.ndarray], state: OptimizerState, cfg: TrainConfig):
    """
    Apply one update to every parameter w with layer multiplier m:
    v <- momentum * v - m * lr * (g + weight_decay * w);  w <- w + v.

    The step is aborted before any parameter changes if a gradient is missing or non-finite.
    Parameters of layers with m == 0 are left untouched.

    Args:
        net (Network): Network to update in place
        grads (dict): Parameter name -> gradient
        state (OptimizerState): Momentum buffers, updated in place
        cfg (TrainConfig): Optimizer settings
    """
    for name, tensor, _ in net.named_parameters():
        if name not in grads:
            raise BadArgumentError(f"No gradient supplied for {name}")
        grad = np.asarray(grads[name])
        if grad.shape != tensor.shape:
            raise BadArgumentError(f"Gradient for {name} has shape {grad.shape}, parameter has {tensor.shape}")
        if not np.all(np.isfinite(grad)):
            raise NumericFailureError(f"Non-finite gradient for {name} at step {state.steps}; update aborted")

    for name, tensor, lr_mult in net.named_parameters():
        if lr_mult == 0:
            continue
        velocity = state.velocities.setdefault(name, np.zeros(tensor.shape))
        velocity *= cfg.momentum
        velocity -= lr_mult * cfg.learning_rate * (grads[name] + cfg.weight_decay * tensor.data)
        tensor.data += velocity
    state.steps += 1


def _check_targets(net: Network, targets, head: str) -> np.ndarray:
    width = net.output_shape[0]
    targets = np.asarray(targets)
    if head == MULTI_CLASS:
        if targets.ndim != 1 or not np.issubdtype(targets.dtype, np.integer):
            raise BadArgumentError(f"multi-class head needs integer class indices, got shape {targets.shape}")
        if targets.min() < 0 or targets.max() >= width:
            raise BadArgumentError(f"Class indices must lie in [0, {width}) for this network")
    elif head == MULTI_LABEL:
        if targets.ndim != 2 or targets.shape[1] != width:
            raise BadArgumentError(f"multi-label head needs N×{width} label vectors, got shape {targets.shape}")
        if not np.all((targets == 0) | (targets == 1)):
            raise BadArgumentError("multi-label targets must be binary")
    return targets


def train(net: Network, images, targets, cfg: TrainConfig,
          state: Optional[OptimizerState] = None) -> TrainResult:
    """
    Train for cfg.epochs epochs with a fresh seeded shuffle each epoch.

    Args:
        net (Network): Network trained in place
        images: N×C×H×W inputs
        targets: Class indices (multi-class) or N×Q label vectors (multi-label)
        cfg (TrainConfig): Loop and optimizer settings
        state (OptimizerState, optional): Momentum buffers to continue from

    Returns:
        TrainResult: The network, the mean training loss of each epoch and the optimizer state
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 0 or images.shape[0] == 0:
        raise BadArgumentError("Training set is empty")
    if tuple(images.shape[1:]) != net.input_shape:
        raise BadArgumentError(f"Images have shape {images.shape[1:]}, network expects {net.input_shape}")
    targets = _check_targets(net, targets, cfg.head)
    if len(targets) != images.shape[0]:
        raise BadArgumentError(f"{images.shape[0]} images but {len(targets)} targets")

    state = state or OptimizerState.for_network(net)
    rng = np.random.default_rng(cfg.seed)
    count = images.shape[0]
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(count)
        total = 0.0
        for start in range(0, count, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            logits = net.forward(images[batch]).data
            loss, grad = loss_and_grad(cfg.head, logits, targets[batch])
            grads = net.backward(grad)
            sgd_step(net, grads, state, cfg)
            total += loss * batch.size
        losses.append(total / count)
        logger.info(f"epoch {epoch + 1}/{cfg.epochs} loss {losses[-1]:.6f}")
    net.clear_caches()
    return TrainResult(net, losses, state)


def fine_tune(checkpoint: Union[Checkpoint, str], num_outputs: int,
              head_lr_multiplier: float = config.HEAD_LR_MULTIPLIER, seed: int = 0,
              specs: Optional[Sequence[LayerSpec]] = None) -> Network:
    """
    Rebuild a pretrained network with a fresh final linear layer.

    Args:
        checkpoint: Checkpoint or path to one
        num_outputs (int): Width Q of the new final layer
        head_lr_multiplier (float): Learning-rate multiplier of the new layer
        seed (int): Seed for the new layer's weights
        specs (sequence, optional): Expected architecture; its non-final layers must match the checkpoint

    Returns:
        Network: Pretrained layers bit-equal to the checkpoint, final layer re-initialized
    """
    if isinstance(checkpoint, str):
        checkpoint = load_checkpoint(checkpoint)
    if num_outputs < 1:
        raise BadArgumentError(f"New output width must be at least 1, got {num_outputs}")
    if not head_lr_multiplier > 0:
        raise BadArgumentError(f"Head learning-rate multiplier must be positive, got {head_lr_multiplier}")
    if not checkpoint.specs or checkpoint.specs[-1].kind != "linear":
        raise BadArgumentError("Checkpoint architecture does not end in a linear layer")

    pretrained = list(checkpoint.specs[:-1])
    if specs is not None:
        expected = list(specs)[:-1]
        if len(expected) != len(pretrained):
            raise BadArgumentError(
                f"Architecture mismatch: checkpoint has {len(pretrained)} non-final layers, expected {len(expected)}"
            )
        for index, (have, want) in enumerate(zip(pretrained, expected)):
            if have.with_lr_mult(1.0) != want.with_lr_mult(1.0):
                raise BadArgumentError(f"Architecture mismatch at layer {index}: checkpoint {have.kind}, expected {want.kind}")

    new_specs = pretrained + [LayerSpec.linear(num_outputs, lr_mult=head_lr_multiplier)]
    net = Network(new_specs, checkpoint.input_shape, seed)
    final_prefix = net.layers[-1].name + "."
    carried = {name: value for name, value in checkpoint.parameters.items() if not name.startswith(final_prefix)}
    try:
        net.load_parameters(carried, strict=False)
    except BadArgumentError as e:
        raise BadArgumentError(f"Architecture mismatch: {e}")
    missing = [name for name, _, _ in net.named_parameters()
               if not name.startswith(final_prefix) and name not in carried]
    if missing:
        raise BadArgumentError(f"Architecture mismatch: checkpoint lacks {', '.join(missing)}")
    logger.info(f"Fine-tuning network: final layer replaced with width {num_outputs}, lr x{head_lr_multiplier:g}")
    return net


def epochs_to_target(losses: Sequence[float], target: float) -> Optional[int]:
    """First epoch (1-based) whose loss is at or below target, or None."""
    for epoch, loss in enumerate(losses, start=1):
        if loss <= target:
            return epoch
    return None


def save_loss_trace(path: str, losses: Sequence[float]):
    frame = pd.DataFrame({"epoch": np.arange(1, len(losses) + 1), "loss": list(losses)})
    frame.to_csv(path, sep="\t", index=False, float_format="%.12g", lineterminator="\n")


class TrainingAgent:
    """
    Builds networks for a dataset and trains them from scratch or by fine-tuning.
    """

    def __init__(self, cfg: TrainConfig, input_shape: Sequence[int] = config.INPUT_SHAPE):
        """
        Initialize the training agent.

        Args:
            cfg (TrainConfig): Training settings
            input_shape (sequence): C×H×W of the images it will see
        """
        self.cfg = cfg
        self.input_shape = tuple(input_shape)

    def scratch_network(self, num_outputs: int) -> Network:
        net = Network(default_layer_specs(num_outputs), self.input_shape, self.cfg.seed)
        net.log_summary()
        return net

    def fine_tune_network(self, checkpoint: Union[Checkpoint, str], num_outputs: int,
                          head_lr_multiplier: float = config.HEAD_LR_MULTIPLIER) -> Network:
        net = fine_tune(checkpoint, num_outputs, head_lr_multiplier, self.cfg.seed)
        if net.input_shape != self.input_shape:
            raise BadArgumentError(f"Checkpoint expects inputs {net.input_shape}, data has {self.input_shape}")
        net.log_summary()
        return net

    def run(self, net: Network, images, targets) -> TrainResult:
        logger.info(f"Training {self.cfg.head} head on {len(targets)} images for {self.cfg.epochs} epochs "
                    f"(lr {self.cfg.learning_rate:g}, batch {self.cfg.batch_size}, seed {self.cfg.seed})")
        return train(net, images, targets, self.cfg)
