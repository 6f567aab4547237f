"""Distillation objectives as pure numpy functions.

Hidden-state tensors are ``batch x seq x hidden``; padding masks are
``batch x seq`` booleans with True marking padded positions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import log_softmax


@dataclass(frozen=True)
class LossWeights:
    task: float = 0.0
    logit: float = 0.5
    token: float = 0.5

    def __post_init__(self):
        if min(self.task, self.logit, self.token) < 0:
            raise ValueError("loss weights must be non-negative")


# loss weights per task profile
PROFILES = {
    "glue": LossWeights(task=0.0, logit=0.5, token=0.5),
    "squad": LossWeights(task=0.0, logit=1.0, token=0.0),
    "gpt2": LossWeights(task=1.0, logit=0.0, token=0.0),
}


def _check_pair(student, teacher, mask):
    student = np.asarray(student, dtype=np.float64)
    teacher = np.asarray(teacher, dtype=np.float64)
    if student.shape != teacher.shape or student.ndim != 3 or min(student.shape) < 1:
        raise ValueError(f"expected equal non-empty B x seq x H tensors, got "
                         f"{student.shape} and {teacher.shape}")
    if mask is None:
        mask = np.zeros(student.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != student.shape[:2]:
        raise ValueError(f"padding mask {mask.shape} does not match {student.shape[:2]}")
    return student, teacher, mask


def token_loss_layer(student, teacher, mask=None) -> float:
    """Mean Euclidean distance between student and teacher token vectors,
    over non-padded positions."""
    student, teacher, mask = _check_pair(student, teacher, mask)
    keep = ~mask
    n = int(keep.sum())
    if n == 0:
        raise ValueError("all positions are padding; token loss undefined")
    dist = np.linalg.norm(student[keep] - teacher[keep], axis=-1)
    return float(dist.sum() / n)


def token_loss(pairs: Sequence, masks=None) -> float:
    """Average of :func:`token_loss_layer` over unpruned layers.

    ``pairs`` holds ``(student, teacher)`` tuples; ``None`` marks a dropped
    layer, which is left out of the average. ``masks`` is one mask shared by
    all layers or a per-layer sequence.
    """
    per_layer = []
    for i, pair in enumerate(pairs):
        if pair is None:
            continue
        m = masks[i] if isinstance(masks, (list, tuple)) else masks
        per_layer.append(token_loss_layer(pair[0], pair[1], m))
    if not per_layer:
        raise ValueError("token loss needs at least one unpruned layer")
    return float(np.mean(per_layer))


def logit_kl(student_logits, teacher_logits, temperature: float = 1.0) -> float:
    """``T^2``-scaled KL(softmax(teacher/T) || softmax(student/T)), averaged over examples.

    The class axis is the last one; every other position counts as an example.
    """
    s = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError(f"logit shapes differ: {s.shape} vs {t.shape}")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(t))):
        raise ValueError("logits must be finite")
    log_p = log_softmax(t / temperature, axis=-1)
    log_q = log_softmax(s / temperature, axis=-1)
    kl = np.sum(np.exp(log_p) * (log_p - log_q), axis=-1)
    # clamp tiny negative round-off
    return float(max(np.mean(kl), 0.0) * temperature ** 2)


def combined_loss(task_loss: float, logit_loss: float, token_loss_value: float,
                  weights: Optional[LossWeights] = None) -> float:
    w = weights or PROFILES["glue"]
    parts = (task_loss, logit_loss, token_loss_value)
    if not all(np.isfinite(parts)):
        raise ValueError("loss components must be finite")
    return w.task * task_loss + w.logit * logit_loss + w.token * token_loss_value
