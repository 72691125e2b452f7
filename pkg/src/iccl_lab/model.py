"""Encoder, projection head, linear classifier and the EMA class-centroid bank."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class ModelSpec:
    input_dim: int = 32
    hidden: list = field(default_factory=lambda: [256])
    feature_dim: int = 256  # d_g
    embed_dim: int = 128  # d_z
    num_classes: int = 10


class Linear:
    def __init__(self, in_dim, out_dim, rng, name, init="he"):
        if init == "he":
            w = rng.standard_normal((out_dim, in_dim)) * np.sqrt(2.0 / in_dim)
        elif init == "zeros":
            w = np.zeros((out_dim, in_dim))
        else:
            raise ValueError(f"unknown init {init!r}")
        self.weight = Tensor(w, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True, name=f"{name}.bias")

    def __call__(self, x):
        return T.linear(x, self.weight, self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class Encoder:
    """MLP ``input -> hidden... -> d_g`` with ReLU after every layer."""

    def __init__(self, input_dim, hidden, feature_dim, rng, name="encoder"):
        dims = [input_dim, *hidden, feature_dim]
        self.input_dim = input_dim
        self.layers = [Linear(a, b, rng, f"{name}.{i}") for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]

    def __call__(self, x):
        x = T.as_tensor(x)
        if x.data.ndim > 2:
            x = T.reshape(x, (x.shape[0], -1))
        if x.data.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"encoder expects (batch, {self.input_dim}) input, got {x.shape}")
        for layer in self.layers:
            x = T.relu(layer(x))
        return x

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


class ProjectionHead:
    """One hidden layer of width d_g with ReLU, then L2-normalised d_z output."""

    def __init__(self, feature_dim, embed_dim, rng, name="head"):
        self.fc1 = Linear(feature_dim, feature_dim, rng, f"{name}.0")
        self.fc2 = Linear(feature_dim, embed_dim, rng, f"{name}.1")

    def __call__(self, g):
        return T.l2_normalize(self.fc2(T.relu(self.fc1(g))))

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters()


class ICCLNet:
    """Shared-parameter network used by both the uniform and interpolative branches."""

    def __init__(self, spec, rng):
        self.spec = spec
        self.encoder = Encoder(spec.input_dim, spec.hidden, spec.feature_dim, rng)
        self.head = ProjectionHead(spec.feature_dim, spec.embed_dim, rng)
        self.classifier = Linear(spec.feature_dim, spec.num_classes, rng, "classifier")

    def encode(self, x):
        return self.encoder(x)

    def project(self, g):
        return self.head(g)

    def classify(self, g):
        return self.classifier(g)

    def forward(self, x):
        g = self.encode(x)
        return g, self.project(g), self.classify(g)

    def parameters(self):
        return self.encoder.parameters() + self.head.parameters() + self.classifier.parameters()

    def named_parameters(self):
        return {p.name: p for p in self.parameters()}

    def predict_logits(self, x, batch_size=1024):
        out = []
        for start in range(0, len(x), batch_size):
            out.append(self.classify(self.encode(x[start : start + batch_size])).data)
        return np.concatenate(out) if out else np.zeros((0, self.spec.num_classes))

    def embed(self, x, batch_size=1024):
        out = []
        for start in range(0, len(x), batch_size):
            out.append(self.project(self.encode(x[start : start + batch_size])).data)
        return np.concatenate(out) if out else np.zeros((0, self.spec.embed_dim))


def probs(logits):
    """Softmax over the last axis as a plain array."""
    return T.softmax(T.as_tensor(logits)).data


class CentroidBank:
    """K unit-norm class centroids maintained by an exponential moving average."""

    def __init__(self, num_classes, embed_dim, momentum=0.99, renormalize=True, rng=None):
        if not 0.0 <= momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {momentum}")
        self.momentum = float(momentum)
        self.renormalize = renormalize
        rng = rng if rng is not None else np.random.default_rng(0)
        c = rng.standard_normal((num_classes, embed_dim))
        self.centroids = c / np.linalg.norm(c, axis=1, keepdims=True)

    @property
    def num_classes(self):
        return self.centroids.shape[0]

    def update(self, z, y):
        """Apply c[y_i] <- m * c[y_i] + (1 - m) * z_i for each row in batch order."""
        z = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise IndexError(f"label out of range for {self.num_classes} centroids")
        m = self.momentum
        if m == 1.0:
            return
        c = self.centroids
        for zi, yi in zip(z, y):
            row = m * c[yi] + (1.0 - m) * zi
            if self.renormalize:
                n = np.sqrt(row @ row)
                if n > 0:
                    row = row / n
            c[yi] = row

    def initialize(self, z, y, rng):
        """Reset every centroid to its class's normalised mean embedding.

        Classes with no samples get a fresh random unit vector from ``rng``.
        """
        z = np.asarray(z, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        k, d = self.centroids.shape
        fresh = rng.standard_normal((k, d))
        for cls in range(k):
            rows = z[y == cls]
            v = rows.mean(axis=0) if len(rows) else fresh[cls]
            n = np.linalg.norm(v)
            self.centroids[cls] = v / n if n > 0 else fresh[cls] / np.linalg.norm(fresh[cls])

    def norms(self):
        return np.linalg.norm(self.centroids, axis=1)


def similarity_logits(z, centroids, tau):
    """z . c^k / tau for every class, centroids held constant."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    c = T.Tensor(np.array(centroids, dtype=np.float64))  # snapshot: the bank mutates in place
    z = T.as_tensor(z)
    if z.data.ndim != 2 or z.shape[1] != c.shape[1]:
        raise ShapeError(f"embeddings {z.shape} do not match centroids {c.shape}")
    return T.scale(T.matmul(z, T.transpose(c)), 1.0 / tau)


def retrieval_probs(z, bank, tau):
    """p(c^k | x) = softmax_k(z . c^k / tau), rows summing to one."""
    centroids = bank.centroids if isinstance(bank, CentroidBank) else bank
    z = np.atleast_2d(z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64))
    return T.softmax(similarity_logits(z, centroids, tau)).data
