"""Reference two-token cross-entropy: reward readout, loss, and gradients.

Everything here is scalar float64 in log-space, so it stays exact where a
trainer's mixed-precision arithmetic would not. The classifier is
restricted to exactly two vocabulary logits (negative token, positive
token); nothing else is masked or renormalized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .errors import EmptyChain, NonFiniteInput


class TwoTokenLogits(NamedTuple):
    logit_neg: float
    logit_pos: float


@dataclass(frozen=True)
class LossReport:
    total: float
    per_step: tuple[float, ...]


def _check_finite(z: TwoTokenLogits) -> TwoTokenLogits:
    neg, pos = float(z[0]), float(z[1])
    if not (math.isfinite(neg) and math.isfinite(pos)):
        raise NonFiniteInput(f"logits must be finite, got ({z[0]}, {z[1]})")
    return TwoTokenLogits(neg, pos)


def _check_label(label: int) -> int:
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    return label


def _sigmoid(x: float) -> float:
    # Stable in both tails; exp only ever sees non-positive arguments.
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _log1p_exp(x: float) -> float:
    """log(1 + exp(x)) without overflow."""
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def reward_from_logits(z: TwoTokenLogits) -> float:
    """Softmax probability of the positive token: 1/(1+exp(neg-pos))."""
    neg, pos = _check_finite(z)
    return _sigmoid(pos - neg)


def step_loss(z: TwoTokenLogits, label: int) -> float:
    """Cross-entropy of the two-token softmax against a binary label."""
    neg, pos = _check_finite(z)
    _check_label(label)
    margin = (pos - neg) if label == 1 else (neg - pos)
    return _log1p_exp(-margin)


def chain_loss(entries: Sequence[tuple[TwoTokenLogits, int]]) -> LossReport:
    """Sum of per-step losses over a chain of (logits, label) entries."""
    if not entries:
        raise EmptyChain("chain_loss needs at least one entry")
    per_step = tuple(step_loss(z, label) for z, label in entries)
    return LossReport(total=math.fsum(per_step), per_step=per_step)


def loss_gradient(z: TwoTokenLogits, label: int) -> tuple[float, float]:
    """d(step_loss)/d(logit_neg), d(step_loss)/d(logit_pos).

    Equals softmax minus the one-hot label at the two coordinates; written
    as +/-sigmoid of the margin so the gradient stays exact for extreme
    logits where softmax saturates.
    """
    neg, pos = _check_finite(z)
    _check_label(label)
    if label == 1:
        p_neg = _sigmoid(neg - pos)
        return (p_neg, -p_neg)
    p_pos = _sigmoid(pos - neg)
    return (-p_pos, p_pos)
