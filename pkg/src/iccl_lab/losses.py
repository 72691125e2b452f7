"""Training objectives.

Every loss is a batch mean of a soft-target negative log-likelihood computed
with log-softmax on logits, so probabilities are never materialised and the
single- and two-label forms share one code path.  With a one-hot target the
interpolative losses reduce exactly to their single-label versions.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import similarity_logits


@dataclass
class LossWeights:
    omega_u: float = 1.0
    omega_it: float = 1.0
    omega_d: float = 0.5
    tau_d: float = 10.0


def one_hot(y, k):
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise IndexError(f"label out of range for {k} classes")
    out = np.zeros((y.size, k))
    out[np.arange(y.size), y] = 1.0
    return out


def mixed_target(y_h, y_t, lam, k):
    """lam * onehot(y_h) + (1 - lam) * onehot(y_t); lam scalar or per row."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or np.any(lam > 1):
        raise ValueError("interpolation weight must lie in [0, 1]")
    w = lam.reshape(-1, 1) if lam.ndim == 1 else lam
    return w * one_hot(y_h, k) + (1.0 - w) * one_hot(y_t, k)


def soft_nll(logits, target):
    """mean_i( -sum_k target_ik * log_softmax(logits)_ik )."""
    logits = T.as_tensor(logits)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != logits.shape:
        raise T.ShapeError(f"target {target.shape} does not match logits {logits.shape}")
    per_row = T.sum(T.mul(T.log_softmax(logits), target), axis=-1)
    return T.scale(T.mean(per_row), -1.0)


def ce_loss(logits, y):
    logits = T.as_tensor(logits)
    return soft_nll(logits, one_hot(y, logits.shape[-1]))


def interpolative_ce(logits_f, y_h, y_t, lam):
    logits_f = T.as_tensor(logits_f)
    return soft_nll(logits_f, mixed_target(y_h, y_t, lam, logits_f.shape[-1]))


def centroid_contrastive(z, y, centroids, tau):
    """Warm-up loss: -log p(c^y | x) against the (constant) centroid bank."""
    logits = similarity_logits(z, _centroids(centroids), tau)
    return soft_nll(logits, one_hot(y, logits.shape[-1]))


def interpolative_cc(z_f, y_h, y_t, lam, centroids, tau):
    logits = similarity_logits(z_f, _centroids(centroids), tau)
    return soft_nll(logits, mixed_target(y_h, y_t, lam, logits.shape[-1]))


def _centroids(bank):
    return getattr(bank, "centroids", bank)


def total_loss(ce=None, ce_it=None, cc_it=None, weights=None):
    """omega_u * L_ce + omega_it * (L_ce^it + L_cc^it); ``None`` terms are switched off."""
    w = weights or LossWeights()
    parts = []
    if ce is not None and w.omega_u != 0:
        parts.append(T.scale(ce, w.omega_u))
    branch = [t for t in (ce_it, cc_it) if t is not None]
    if branch and w.omega_it != 0:
        s = branch[0] if len(branch) == 1 else T.add(branch[0], branch[1])
        parts.append(T.scale(s, w.omega_it))
    if not parts:
        raise ValueError("every loss term is disabled")
    out = parts[0]
    for p in parts[1:]:
        out = T.add(out, p)
    return out


def kl_divergence(teacher_logits, student_logits, tau_d):
    """Batch-mean KL(softmax(teacher / tau_d) || softmax(student / tau_d)); teacher is constant."""
    if tau_d <= 0:
        raise ValueError(f"distillation temperature must be positive, got {tau_d}")
    t = np.asarray(getattr(teacher_logits, "data", teacher_logits), dtype=np.float64) / tau_d
    log_q = T.log_softmax(T.Tensor(t)).data
    q = np.exp(log_q)
    log_p = T.log_softmax(T.scale(student_logits, 1.0 / tau_d))
    per_row = T.sum(T.mul(T.sub(log_q, log_p), q), axis=-1)
    return T.mean(per_row)


def rebalance_loss(student_logits, teacher_logits, y, weights=None):
    """(1 - omega_d) * CE(student, y) + omega_d * tau_d**2 * KL(teacher || student)."""
    w = weights or LossWeights()
    if w.tau_d <= 0:
        raise ValueError(f"distillation temperature must be positive, got {w.tau_d}")
    student_logits = T.as_tensor(student_logits)
    ce = ce_loss(student_logits, y)
    if w.omega_d == 0:
        return ce
    kl = kl_divergence(teacher_logits, student_logits, w.tau_d)
    return T.add(T.scale(ce, 1.0 - w.omega_d), T.scale(kl, w.omega_d * w.tau_d**2))
