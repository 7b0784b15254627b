"""Training objectives: cross-entropy, soft Dice and Focal loss.

All three mask the ignore label exactly: masked pixels contribute zero to
the value and zero gradient. Dice statistics are pooled over the whole
batch and macro-averaged over the classes that actually occur in the
target; Focal reduces bit-for-bit to cross-entropy at gamma=0, alpha=1.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .ice_types import IGNORE_VALUE

__all__ = ["LossSpec", "ce_loss", "dice_loss", "focal_loss", "make_loss", "LOSS_KINDS"]

LOSS_KINDS = ("ce", "dice", "focal")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "ce"
    focal_gamma: float = 2.0
    focal_alpha: float = 1.0
    dice_smooth: float = 1.0
    ignore_value: int = IGNORE_VALUE

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be >= 0")
        if self.dice_smooth <= 0:
            raise ValueError("dice_smooth must be > 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "focal_gamma": self.focal_gamma,
                "focal_alpha": self.focal_alpha, "dice_smooth": self.dice_smooth,
                "ignore_value": self.ignore_value}

    @classmethod
    def from_dict(cls, doc: dict) -> "LossSpec":
        return cls(**doc)


def _masked_target(logits, targets, ignore_value):
    if targets.shape != logits.shape[:1] + logits.shape[2:]:
        raise ValueError(f"targets {tuple(targets.shape)} do not match logits {tuple(logits.shape)}")
    num_classes = logits.shape[1]
    bad = (targets != ignore_value) & ((targets < 0) | (targets >= num_classes))
    if bad.any():
        code = int(targets[bad].flatten()[0])
        raise ValueError(f"target code {code} outside 0..{num_classes - 1} and ignore={ignore_value}")
    valid = targets != ignore_value
    safe = torch.where(valid, targets, torch.zeros_like(targets)).long()
    return valid, safe


def ce_loss(logits, targets, ignore_value: int = IGNORE_VALUE):
    """Mean negative log-likelihood over non-ignored pixels."""
    valid, safe = _masked_target(logits, targets, ignore_value)
    n = valid.sum()
    if n == 0:
        return logits.sum() * 0.0
    logp = F.log_softmax(logits, dim=1)
    nll = -logp.gather(1, safe.unsqueeze(1)).squeeze(1)
    return (nll * valid.to(nll.dtype)).sum() / n


def focal_loss(logits, targets, gamma: float = 2.0, alpha: float = 1.0,
               ignore_value: int = IGNORE_VALUE):
    """Cross-entropy with the easy-pixel down-weighting factor (1 - p_t)^gamma."""
    valid, safe = _masked_target(logits, targets, ignore_value)
    n = valid.sum()
    if n == 0:
        return logits.sum() * 0.0
    logp = F.log_softmax(logits, dim=1)
    logp_t = logp.gather(1, safe.unsqueeze(1)).squeeze(1)
    pixel = -alpha * (1.0 - torch.exp(logp_t)) ** gamma * logp_t
    return (pixel * valid.to(pixel.dtype)).sum() / n


def dice_loss(logits, targets, smooth: float = 1.0, ignore_value: int = IGNORE_VALUE):
    """One minus the soft Dice coefficient, averaged over classes present in
    the target; sums pool the whole batch, ignored pixels excluded."""
    valid, safe = _masked_target(logits, targets, ignore_value)
    if valid.sum() == 0:
        return logits.sum() * 0.0
    num_classes = logits.shape[1]
    probs = F.softmax(logits, dim=1)
    mask = valid.unsqueeze(1).to(probs.dtype)
    onehot = F.one_hot(safe, num_classes).permute(0, 3, 1, 2).to(probs.dtype) * mask
    probs = probs * mask
    intersection = (probs * onehot).sum(dim=(0, 2, 3))
    prob_sum = probs.sum(dim=(0, 2, 3))
    target_sum = onehot.sum(dim=(0, 2, 3))
    present = target_sum > 0
    dice = (2.0 * intersection[present] + smooth) / (prob_sum[present] + target_sum[present] + smooth)
    return 1.0 - dice.mean()


def make_loss(spec: LossSpec):
    """Bind a LossSpec to a ``loss(logits, targets)`` callable."""
    if spec.kind == "ce":
        return lambda logits, targets: ce_loss(logits, targets, spec.ignore_value)
    if spec.kind == "dice":
        return lambda logits, targets: dice_loss(logits, targets, spec.dice_smooth, spec.ignore_value)
    return lambda logits, targets: focal_loss(
        logits, targets, spec.focal_gamma, spec.focal_alpha, spec.ignore_value)
