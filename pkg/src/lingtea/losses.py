"""Forget, language-teaching, language-modeling and retain losses.

Every loss takes log-probabilities shaped ``[T-1]`` (one sequence) or
``[B, T-1]`` (a right-padded batch, with a boolean ``mask`` marking real
positions). Each sequence is averaged over its own predicted positions first;
the batch value is the plain mean of those per-sequence values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, LengthError, VocabularyError
from .tensor import Tensor


def prediction_mask(lengths, width: int) -> np.ndarray:
    """``[B, width]`` mask of predicted positions for sequences of ``lengths`` tokens."""
    lengths = np.asarray(lengths)
    return np.arange(width)[None, :] < (lengths - 1)[:, None]


def _mask_for(x: Tensor, mask) -> np.ndarray:
    if x.ndim == 0 or x.shape[-1] == 0:
        raise LengthError("loss needs at least one predicted position")
    if mask is None:
        return np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"mask {list(mask.shape)} does not match {list(x.shape)}")
    return mask


def sequence_mean_log_prob(student_log_probs: Tensor, mask=None) -> Tensor:
    """Per-sequence ``(1/n) sum_t log p(x_t | x_<t)``: a scalar, or ``[B]``."""
    return T.masked_row_mean(student_log_probs, _mask_for(student_log_probs, mask))


def forget_loss(student_log_probs: Tensor, mask=None) -> Tensor:
    """Mean log-likelihood (sign as written, so minimizing it unlearns)."""
    return T.mean_all(sequence_mean_log_prob(student_log_probs, mask))


def language_modeling_loss(student_log_probs: Tensor, mask=None) -> Tensor:
    """Mean negative log-likelihood; exactly ``-forget_loss``."""
    return T.scale(forget_loss(student_log_probs, mask), -1.0)


def sequence_nll(student_log_probs: Tensor, mask=None) -> Tensor:
    return T.scale(sequence_mean_log_prob(student_log_probs, mask), -1.0)


def sequence_kl(teacher_log_dists: Tensor, student_log_dists: Tensor, mask=None) -> Tensor:
    """Per-sequence mean over positions of ``KL(teacher || student)``."""
    if teacher_log_dists.shape[-1] != student_log_dists.shape[-1]:
        raise DimensionError(f"vocabulary sizes differ: teacher {teacher_log_dists.shape[-1]}, "
                             f"student {student_log_dists.shape[-1]}")
    if teacher_log_dists.requires_grad:
        teacher_log_dists = teacher_log_dists.detach()
    rows = T.kl_rows(teacher_log_dists, student_log_dists)
    return T.masked_row_mean(rows, _mask_for(rows, mask))


def language_teaching_loss(teacher_log_dists: Tensor, student_log_dists: Tensor, mask=None) -> Tensor:
    """Mean per-position KL from the frozen teacher to the student.

    The teacher side is detached; gradients reach the student only.
    """
    return T.mean_all(sequence_kl(teacher_log_dists, student_log_dists, mask))


def teacher_confidence(teacher_log_dists, targets, mask=None):
    """Mean teacher probability of the true next tokens.

    Returns a float for one sequence or an array with one value per sequence
    for a batch. It is a plain number: nothing differentiates through it.
    """
    ld = teacher_log_dists.data if isinstance(teacher_log_dists, Tensor) else np.asarray(teacher_log_dists)
    targets = np.asarray(targets, dtype=np.int64)
    if ld.shape[:-1] != targets.shape:
        raise DimensionError(f"teacher dists {list(ld.shape)} vs targets {list(targets.shape)}")
    V = ld.shape[-1]
    m = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if np.any((targets[m] < 0) | (targets[m] >= V)):
        raise VocabularyError(f"target id outside vocabulary of size {V}")
    safe = np.where(m, targets, 0)
    p = np.exp(np.take_along_axis(ld, safe[..., None], axis=-1)[..., 0])
    kappa = np.where(m, p, 0.0).sum(axis=-1) / m.sum(axis=-1)
    kappa = np.clip(kappa, 0.0, 1.0)
    return float(kappa) if kappa.ndim == 0 else kappa


def _check_kappa(kappa) -> None:
    k = np.asarray(kappa, dtype=np.float64)
    if np.any(~np.isfinite(k)) or np.any(k < 0.0) or np.any(k > 1.0):
        raise ContractError(f"kappa must lie in [0, 1], got {kappa}")


def retain_loss(l_lt, l_lm, kappa):
    """``kappa * L_LT + (1 - kappa) * L_LM``.

    Works on floats, scalar tensors, or per-sequence ``[B]`` tensors with a
    matching ``kappa`` array.
    """
    _check_kappa(kappa)
    if isinstance(l_lt, Tensor) or isinstance(l_lm, Tensor):
        k = np.asarray(kappa, dtype=np.float64)
        if k.ndim == 0:
            return T.add(T.scale(l_lt, float(k)), T.scale(l_lm, 1.0 - float(k)))
        return T.add(T.mul(l_lt, Tensor(k)), T.mul(l_lm, Tensor(1.0 - k)))
    return kappa * l_lt + (1.0 - kappa) * l_lm


def total_loss(l_f, l_r, lam: float = 1.0):
    """``L_f + lam * L_r``."""
    if lam < 0:
        raise ContractError(f"lambda must be non-negative, got {lam}")
    if isinstance(l_f, Tensor) or isinstance(l_r, Tensor):
        return T.add(l_f, T.scale(l_r, lam))
    return l_f + lam * l_r


@dataclass
class LossBundle:
    """Scalar loss values for one batch.

    ``kappa`` is the batch mean of the per-sequence confidences, so
    ``l_r == kappa * l_lt + (1 - kappa) * l_lm`` holds exactly only when all
    sequences share one kappa (always true for a single sequence).
    """
    l_f: float = float("nan")
    l_lt: float = float("nan")
    l_lm: float = float("nan")
    kappa: float = float("nan")
    l_r: float = float("nan")
    lam: float = 1.0
    l_total: float = float("nan")

    def as_dict(self) -> dict[str, float]:
        return {"l_f": self.l_f, "l_lt": self.l_lt, "l_lm": self.l_lm, "kappa": self.kappa,
                "l_r": self.l_r, "lambda": self.lam, "l_total": self.l_total}


def compute_bundle(student_log_dists: Tensor, teacher_log_dists: Tensor, targets, mask=None,
                   lam: float = 1.0, forget_log_probs: Tensor | None = None) -> tuple[LossBundle, Tensor]:
    """Joint evaluation of every term on one retain batch (plus an optional forget batch).

    Returns the bundle and the differentiable total ``L_f + lam * L_r`` (just
    ``lam * L_r`` without a forget batch).
    """
    targets = np.asarray(targets, dtype=np.int64)
    lp = T.gather_log_prob(student_log_dists, targets)
    lt_seq = sequence_kl(teacher_log_dists, student_log_dists, mask)
    lm_seq = sequence_nll(lp, mask)
    kappa = teacher_confidence(teacher_log_dists, targets, mask)
    l_r = T.mean_all(retain_loss(lt_seq, lm_seq, kappa))
    if forget_log_probs is not None:
        l_f = forget_loss(forget_log_probs)
        total = total_loss(l_f, l_r, lam)
        lf_value = l_f.item()
    else:
        total = T.scale(l_r, lam)
        lf_value = 0.0
    bundle = LossBundle(l_f=lf_value, l_lt=T.mean_all(lt_seq).item(), l_lm=T.mean_all(lm_seq).item(),
                        kappa=float(np.mean(kappa)), l_r=l_r.item(), lam=lam,
                        l_total=total.item() if forget_log_probs is not None else lf_value + lam * l_r.item())
    return bundle, total
