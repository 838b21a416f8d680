"""Adam optimizer, step-decay learning-rate schedule and gradient clipping"""

import bisect
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from beamcast.errors import ConfigurationError, DimensionError, TrainingError
from beamcast.numcore.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """
    Optimizer state for Adam, keyed by parameter name.

    Moments are created lazily on the first update of each parameter and
    always match that parameter's shape.
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be >= 0, got {self.lr}", "lr")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigurationError(f"must be in (0, 1), got {value}", name)
        if not self.eps > 0:
            raise ConfigurationError(f"must be > 0, got {self.eps}", "eps")


def adam_step(params: Mapping[str, Tensor], state: AdamState) -> AdamState:
    """
    Apply one bias-corrected Adam update to every parameter, in place.

    A parameter whose `.grad` is None is treated as having a zero gradient
    (its moments still decay, its value is unchanged when both moments are zero).

    Args:
        params: name -> leaf tensor; updated in place
        state: optimizer state; `step` is incremented once per call

    Returns:
        The same state object, for chaining

    Raises:
        TrainingError: if any gradient is NaN/Inf (names the parameter)
        DimensionError: if a stored moment no longer matches its parameter
    """
    # Validate everything before touching any parameter
    for name, param in params.items():
        if param.grad is not None and not np.all(np.isfinite(param.grad)):
            raise TrainingError("Non-finite gradient", name)
        moment = state.first_moment.get(name)
        if moment is not None and moment.shape != param.shape:
            raise DimensionError(
                f"Adam moment for {name} has shape {list(moment.shape)}, parameter has {list(param.shape)}"
            )

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t

    for name, param in params.items():
        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m.astype(param.dtype)
        state.second_moment[name] = v.astype(param.dtype)

        m_hat = m / correction1
        v_hat = v / correction2
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        param.data = (param.data - update).astype(param.dtype)

    return state


@dataclass(frozen=True)
class LrSchedule:
    """Step decay: lr(e) = initial_lr * decay_factor ** (number of milestones <= e)"""

    initial_lr: float
    milestones: tuple[int, ...] = ()
    decay_factor: float = 0.1

    def __post_init__(self):
        if self.initial_lr < 0:
            raise ConfigurationError(f"must be >= 0, got {self.initial_lr}", "lr")
        if not 0.0 < self.decay_factor < 1.0:
            raise ConfigurationError(f"must be in (0, 1), got {self.decay_factor}", "decay_factor")
        if list(self.milestones) != sorted(self.milestones):
            raise ConfigurationError(f"must be sorted ascending, got {list(self.milestones)}", "milestones")
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))

    def lr_at(self, epoch: int) -> float:
        """Effective learning rate at a 0-based epoch index"""
        passed = bisect.bisect_right(self.milestones, epoch)
        return self.initial_lr * self.decay_factor**passed


def global_grad_norm(params: Mapping[str, Tensor]) -> float:
    total = 0.0
    for param in params.values():
        if param.grad is not None:
            total += float(np.sum(param.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: Optional[float]) -> float:
    """
    Rescale all gradients so their global L2 norm is at most max_norm.

    Returns the norm measured before clipping. A max_norm of None disables clipping.
    """
    norm = global_grad_norm(params)
    if max_norm is None:
        return norm
    if not max_norm > 0:
        raise ConfigurationError(f"must be > 0, got {max_norm}", "clip_grad_norm")
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for param in params.values():
            if param.grad is not None:
                param.grad = (param.grad * scale).astype(param.dtype)
        logger.debug("Clipped gradient norm %.4g -> %.4g", norm, max_norm)
    return norm
