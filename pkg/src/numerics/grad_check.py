"""
Finite-difference verification of the analytic gradients.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.exceptions import BadArgumentError
from src.numerics.network import Network
from src.numerics.tensor import Tensor
from src.processors.heads import MULTI_CLASS, MULTI_LABEL, loss_and_grad

logger = logging.getLogger(__name__)

LossFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]

LOSS_IDS = ("sum", "squared", MULTI_CLASS, MULTI_LABEL)

# relative error denominators never drop below this
ERROR_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    """
    Result of a gradient check.

    Attributes:
        errors (dict): Parameter name -> max relative error between analytic and numeric gradients
        failures (list): Parameters whose error exceeded tol or whose perturbation hit a non-finite loss
        tol (float): Tolerance used
        skipped (dict): Parameter name -> entries whose perturbations crossed a ReLU or pooling kink
        unverified (list): Parameters where every checked entry was skipped, so no error was measured
    """
    errors: Dict[str, float] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)
    tol: float = 1e-4
    skipped: Dict[str, int] = field(default_factory=dict)
    unverified: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def verified(self) -> bool:
        """Passed with at least one measured entry in every parameter tensor."""
        return self.passed and not self.unverified

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0


def make_loss(loss: str, logits_shape: Tuple[int, ...], targets=None, seed: int = 0) -> LossFn:
    """
    Build a loss closure over fixed targets.

    Args:
        loss (str): One of sum, squared, multi-class, multi-label
        logits_shape (tuple): N×D shape of the network output
        targets (optional): Fixed targets; drawn from the seed when omitted
        seed (int): Seed for drawn targets

    Returns:
        callable: logits -> (loss, gradient)
    """
    if loss not in LOSS_IDS:
        raise BadArgumentError(f"Unknown loss '{loss}', expected one of {LOSS_IDS}")
    rng = np.random.default_rng(seed)
    batch, width = logits_shape

    if loss == "sum":
        return lambda z: (float(z.sum()), np.ones_like(z))

    if loss == "squared":
        goal = np.zeros(logits_shape) if targets is None else np.asarray(targets, dtype=np.float64)

        def squared(z):
            diff = z - goal
            return float(0.5 * (diff ** 2).sum() / batch), diff / batch
        return squared

    if targets is None:
        if loss == MULTI_CLASS:
            targets = rng.integers(0, width, size=batch)
        else:
            targets = rng.integers(0, 2, size=(batch, width))
    return lambda z: loss_and_grad(loss, z, targets)


def relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric), ERROR_FLOOR)
    return abs(analytic - numeric) / scale


def grad_check(net: Network, batch, loss: str = MULTI_CLASS, step: float = 1e-5, tol: float = 1e-4,
               targets=None, max_entries: Optional[int] = None) -> GradCheckReport:
    """
    Compare analytic parameter gradients with central differences.

    Args:
        net (Network): Network under test
        batch: Input batch N×C×H×W
        loss (str): Loss identifier (sum, squared, multi-class, multi-label)
        step (float): Finite-difference step, > 0
        tol (float): Relative-error tolerance, > 0
        targets (optional): Fixed targets for the loss
        max_entries (int, optional): Check at most this many randomly chosen entries per tensor

    Entries whose perturbations flip a ReLU mask or a pooling winner are skipped and counted in the report.

    Returns:
        GradCheckReport: Per-parameter maximum relative errors and failures
    """
    if not step > 0:
        raise BadArgumentError(f"Finite-difference step must be positive, got {step}")
    if not tol > 0:
        raise BadArgumentError(f"Tolerance must be positive, got {tol}")

    x = batch.data if isinstance(batch, Tensor) else np.asarray(batch, dtype=np.float64)
    logits = net.forward(x, cache=True).data
    loss_fn = make_loss(loss, logits.shape, targets, seed=net.seed)
    _, grad = loss_fn(logits)
    analytic = {name: g.copy() for name, g in net.backward(grad).items()}
    baseline = net.routing()

    def perturbed_loss() -> Tuple[float, bool]:
        value, _ = loss_fn(net.forward(x, cache=True).data)
        same_branch = all(np.array_equal(a, b) for a, b in zip(baseline, net.routing()))
        return value, same_branch

    rng = np.random.default_rng(net.seed)
    report = GradCheckReport(tol=tol)
    for name, tensor, _ in net.named_parameters():
        flat = tensor.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        skipped = 0
        for index in indices:
            original = flat[index]
            smooth = True
            try:
                flat[index] = original + step
                plus, smooth_plus = perturbed_loss()
                flat[index] = original - step
                minus, smooth_minus = perturbed_loss()
                smooth = smooth_plus and smooth_minus
            except ArithmeticError:
                plus = minus = float("nan")
            finally:
                flat[index] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                worst = float("inf")
                break
            if not smooth:
                skipped += 1
                continue
            numeric = (plus - minus) / (2.0 * step)
            worst = max(worst, relative_error(float(analytic[name].reshape(-1)[index]), numeric))
        if skipped:
            report.skipped[name] = skipped
        if np.isfinite(worst) and skipped == len(indices):
            report.unverified.append(name)
            continue
        report.errors[name] = worst
        if not worst <= tol:
            report.failures.append(name)
    net.clear_caches()

    if report.unverified:
        logger.warning(f"No entry of {', '.join(report.unverified)} could be checked away from a kink")
    if report.failures:
        logger.warning(f"Gradient check failed for {', '.join(report.failures)}")
    else:
        logger.info(f"Gradient check passed, max relative error {report.max_error:.2e}")
    return report
