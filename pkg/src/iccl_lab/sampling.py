"""Class-agnostic / class-aware samplers, interpolation weights and batches."""
from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def substream(seed, name, *key):
    """Independent generator for a named stream (and optional extra key such as an epoch).

    Streams are derived from the one top-level seed, so turning one component
    on or off never shifts the draws of another.
    """
    spawn = (zlib.crc32(name.encode("utf-8")), *(int(k) for k in key))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn))


def class_aware_probs(class_counts, gamma):
    """p(k) proportional to (1 / n_k) ** gamma."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("class_counts must be a non-empty 1-D sequence")
    if np.any(counts <= 0):
        raise ValueError(f"every class needs at least one example, got counts {counts.tolist()}")
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    logw = -gamma * np.log(counts)
    w = np.exp(logw - logw.max())
    return w / w.sum()


class ClassAgnosticSampler:
    """Every example equally likely: a fresh seeded permutation each epoch.

    ``draw`` continues the permutation stream across epoch boundaries, which is
    what the Monte Carlo fidelity checks use; training iterates ``epoch``.
    """

    def __init__(self, n, seed, stream="sampler/agnostic"):
        if n <= 0:
            raise ValueError("cannot sample from an empty dataset")
        self.n = int(n)
        self.seed = seed
        self.stream = stream
        self._epoch = 0
        self._buf = np.empty(0, dtype=np.int64)

    def permutation(self, epoch):
        return substream(self.seed, self.stream, epoch).permutation(self.n)

    def epoch(self, epoch, batch_size):
        perm = self.permutation(epoch)
        for start in range(0, self.n, batch_size):
            yield perm[start : start + batch_size]

    def draw(self, batch_size):
        while self._buf.size < batch_size:
            self._buf = np.concatenate([self._buf, self.permutation(self._epoch)])
            self._epoch += 1
        out, self._buf = self._buf[:batch_size], self._buf[batch_size:]
        return out


class ClassAwareSampler:
    """Draw a class from ``class_aware_probs`` then one of its examples, with replacement."""

    def __init__(self, labels, num_classes, gamma, seed, stream="sampler/aware"):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size == 0:
            raise ValueError("cannot sample from an empty dataset")
        self.members = [np.flatnonzero(labels == k) for k in range(num_classes)]
        counts = np.array([m.size for m in self.members])
        self.probs = class_aware_probs(counts, gamma)
        self.counts = counts
        self._order = np.concatenate(self.members)
        self._starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        self.seed = seed
        self.stream = stream
        self.rng = substream(seed, stream, 0)

    def reseed(self, epoch):
        self.rng = substream(self.seed, self.stream, epoch)

    def draw(self, batch_size):
        classes = self.rng.choice(len(self.probs), size=batch_size, p=self.probs)
        within = np.floor(self.rng.random(batch_size) * self.counts[classes]).astype(np.int64)
        return self._order[self._starts[classes] + within]


def sample_class_agnostic(dataset, batch_size, rng):
    """One batch of (x, y) with every example equally likely."""
    if len(dataset) == 0:
        raise ValueError("cannot sample from an empty dataset")
    idx = rng.permutation(len(dataset))[:batch_size] if batch_size <= len(dataset) else rng.integers(0, len(dataset), batch_size)
    return dataset.x[idx], dataset.y[idx]


def sample_class_aware(dataset, batch_size, gamma, rng):
    """One batch of (x, y): class by (1/n_k)**gamma, then uniform within the class."""
    if len(dataset) == 0:
        raise ValueError("cannot sample from an empty dataset")
    counts = dataset.class_counts
    present = np.flatnonzero(counts)
    probs = class_aware_probs(counts[present], gamma)
    classes = present[rng.choice(present.size, size=batch_size, p=probs)]
    members = dataset.indices_by_class()
    idx = np.array([members[c][rng.integers(counts[c])] for c in classes], dtype=np.int64)
    return dataset.x[idx], dataset.y[idx]


def draw_lambda(beta_alpha, beta_beta, rng, size=None):
    if beta_alpha <= 0 or beta_beta <= 0:
        raise ValueError(f"Beta parameters must be positive, got ({beta_alpha}, {beta_beta})")
    return rng.beta(beta_alpha, beta_beta, size=size)


@dataclass
class InterpolativeBatch:
    x_h: np.ndarray
    y_h: np.ndarray
    x_t: np.ndarray
    y_t: np.ndarray
    lam: np.ndarray  # scalar (per batch) or shape (batch,)
    x_f: np.ndarray


def make_interpolative_batch(x_h, y_h, x_t, y_t, lam):
    """x_f = lam * x_h + (1 - lam) * x_t; ``lam`` is a scalar or one value per row."""
    x_h, x_t = np.asarray(x_h), np.asarray(x_t)
    if x_h.shape != x_t.shape:
        raise ValueError(f"head batch {x_h.shape} and tail batch {x_t.shape} are not aligned")
    if len(y_h) != len(x_h) or len(y_t) != len(x_t):
        raise ValueError("labels are not batch-aligned with inputs")
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or np.any(lam > 1):
        raise ValueError("interpolation weight must lie in [0, 1]")
    if lam.ndim == 1:
        if lam.shape[0] != x_h.shape[0]:
            raise ValueError("per-example lambda must have one value per row")
        w = lam.reshape((-1,) + (1,) * (x_h.ndim - 1))
    elif lam.ndim == 0:
        w = lam
    else:
        raise ValueError("lambda must be a scalar or a 1-D array")
    x_f = w * x_h + (1.0 - w) * x_t
    return InterpolativeBatch(x_h, np.asarray(y_h), x_t, np.asarray(y_t), lam, x_f)


def hflip(x):
    """Mirror the last (width) axis."""
    return x[..., ::-1]


def pad_crop(x, top, left, pad=4):
    """Zero-pad H and W by ``pad`` then crop back to the original size at (top, left)."""
    h, w = x.shape[-2:]
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    padded = np.pad(x, widths)
    return padded[..., top : top + h, left : left + w]


def augment(x, rng, enabled=True, pad=4):
    """Random horizontal flip (p=0.5) and padded random crop, per example.

    ``x`` has shape (batch, C, H, W). Disabled or non-image input passes through.
    """
    if not enabled or x.ndim != 4:
        return x
    out = np.empty_like(x)
    flips = rng.random(len(x)) < 0.5
    offsets = rng.integers(0, 2 * pad + 1, size=(len(x), 2))
    for i in range(len(x)):
        img = hflip(x[i]) if flips[i] else x[i]
        out[i] = pad_crop(img, offsets[i, 0], offsets[i, 1], pad)
    return out
