"""Small tanh MLP on synthetic shifted-domain blob data.

Weights live in one flat parameter vector. Backprop gives the analytic
gradient; a forward-over-reverse tangent pass gives an analytic
Hessian-vector product, so spectral estimators run without finite
differences.
"""

from __future__ import annotations

import csv

import numpy as np

from ..core import SeededRng, as_params
from .base import DomainObjective, MultiDomainProblem

__all__ = [
    "MlpObjective",
    "SyntheticDomainDataset",
    "make_shifted_blob_dataset",
    "mlp_problem_from_dataset",
    "init_mlp_params",
]


def _shapes(layer_sizes):
    return [
        ((layer_sizes[i], layer_sizes[i + 1]), (layer_sizes[i + 1],))
        for i in range(len(layer_sizes) - 1)
    ]


def n_params(layer_sizes) -> int:
    return sum(w[0] * w[1] + b[0] for w, b in _shapes(layer_sizes))


def init_mlp_params(rng: SeededRng, layer_sizes=(2, 16, 16, 2), scale=1.0) -> np.ndarray:
    """Fan-in scaled normal init, flattened."""
    parts = []
    for (win, wout), _ in _shapes(layer_sizes):
        parts.append(rng.normal((win, wout)).ravel() * scale / np.sqrt(win))
        parts.append(np.zeros(wout))
    return np.concatenate(parts)


def _unpack(theta, layer_sizes):
    out = []
    idx = 0
    for (wshape, bshape) in _shapes(layer_sizes):
        wn = wshape[0] * wshape[1]
        W = theta[idx:idx + wn].reshape(wshape)
        idx += wn
        b = theta[idx:idx + bshape[0]]
        idx += bshape[0]
        out.append((W, b))
    return out


def _pack(pairs):
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in pairs])


def _log_softmax(z):
    zmax = np.max(z, axis=1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


class MlpObjective(DomainObjective):
    """Softmax cross-entropy loss of a tanh MLP on one domain's points."""

    deterministic = False
    has_analytic_hvp = True

    def __init__(self, X, y, layer_sizes=(2, 16, 16, 2)):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be (n, d_in) matching y")
        if self.X.shape[1] != layer_sizes[0]:
            raise ValueError("input width does not match layer_sizes[0]")
        if np.any(self.y < 0) or np.any(self.y >= layer_sizes[-1]):
            raise ValueError("labels out of range")
        self.layer_sizes = tuple(layer_sizes)
        self.dim = n_params(layer_sizes)
        self.n = self.X.shape[0]

    # forward / backward ------------------------------------------------------

    def _forward(self, theta):
        layers = _unpack(as_params(theta), self.layer_sizes)
        a = self.X
        acts = [a]
        for W, b in layers[:-1]:
            a = np.tanh(a @ W + b)
            acts.append(a)
        W, b = layers[-1]
        logits = acts[-1] @ W + b
        return layers, acts, logits

    def loss(self, theta):
        _, _, logits = self._forward(theta)
        logp = _log_softmax(logits)
        return float(-np.mean(logp[np.arange(self.n), self.y]))

    def predict_proba(self, theta):
        _, _, logits = self._forward(theta)
        return np.exp(_log_softmax(logits))

    def _deltas(self, layers, acts, logits):
        p = np.exp(_log_softmax(logits))
        d = p.copy()
        d[np.arange(self.n), self.y] -= 1.0
        d /= self.n
        deltas = [d]
        for li in range(len(layers) - 1, 0, -1):
            W, _ = layers[li]
            d = (d @ W.T) * (1.0 - acts[li] ** 2)
            deltas.append(d)
        deltas.reverse()
        return p, deltas

    def gradient(self, theta):
        layers, acts, logits = self._forward(theta)
        _, deltas = self._deltas(layers, acts, logits)
        grads = [(acts[li].T @ deltas[li], deltas[li].sum(axis=0))
                 for li in range(len(layers))]
        return _pack(grads)

    def hessian_vector_product(self, theta, v):
        """Forward-over-reverse tangent of the backprop gradient."""
        v = as_params(v, "v")
        if v.size != self.dim:
            raise ValueError("tangent dimension mismatch")
        layers, acts, logits = self._forward(theta)
        vlayers = _unpack(v, self.layer_sizes)

        # tangent forward pass
        r_acts = [np.zeros_like(self.X)]
        ra = r_acts[0]
        for (W, _), (rW, rb), a_next in zip(layers[:-1], vlayers[:-1], acts[1:]):
            rz = ra @ W + acts[len(r_acts) - 1] @ rW + rb
            ra = (1.0 - a_next**2) * rz
            r_acts.append(ra)
        W, _ = layers[-1]
        rW, rb = vlayers[-1]
        r_logits = r_acts[-1] @ W + acts[-1] @ rW + rb

        p, deltas = self._deltas(layers, acts, logits)
        # tangent of softmax-CE delta: (diag(p) - p p^T) r_logits / n
        pr = p * r_logits
        r_d = (pr - p * pr.sum(axis=1, keepdims=True)) / self.n
        r_deltas = [r_d]
        for li in range(len(layers) - 1, 0, -1):
            W, _ = layers[li]
            rW, _ = vlayers[li]
            back = r_d @ W.T + deltas[li] @ rW.T
            r_d = back * (1.0 - acts[li] ** 2) + (deltas[li] @ W.T) * (
                -2.0 * acts[li] * r_acts[li]
            )
            r_deltas.append(r_d)
        r_deltas.reverse()

        hv = []
        for li in range(len(layers)):
            rgW = r_acts[li].T @ deltas[li] + acts[li].T @ r_deltas[li]
            rgb = r_deltas[li].sum(axis=0)
            hv.append((rgW, rgb))
        return _pack(hv)

    def sample_minibatch(self, rng: SeededRng, batch_size: int):
        if batch_size > self.n:
            raise ValueError(
                f"batch_size {batch_size} exceeds domain size {self.n}"
            )
        idx = np.sort(rng.choice_without_replacement(self.n, batch_size))
        sub = MlpObjective(self.X[idx], self.y[idx], self.layer_sizes)
        sub.indices = idx
        return sub


class SyntheticDomainDataset:
    """S domains of labeled 2-D points; one rotated/shifted blob pair each."""

    def __init__(self, domains, rotations, separation, noise):
        self.domains = [(np.asarray(X, dtype=np.float64),
                         np.asarray(y, dtype=np.int64)) for X, y in domains]
        self.rotations = list(rotations)
        self.separation = float(separation)
        self.noise = float(noise)

    @property
    def n_domains(self):
        return len(self.domains)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["domain", "x1", "x2", "label"])
            for di, (X, y) in enumerate(self.domains):
                for row, lab in zip(X, y):
                    w.writerow([di, repr(float(row[0])), repr(float(row[1])), int(lab)])


def make_shifted_blob_dataset(n_domains=3, n_per_domain=500, separation=2.0,
                              noise=0.45, rotation_degrees=None, shift_scale=0.5,
                              seed=0) -> SyntheticDomainDataset:
    """Binary blobs: class centers at +-separation/2 along a per-domain
    rotated axis, plus a per-domain translation."""
    rng = SeededRng(seed)
    if rotation_degrees is None:
        rotation_degrees = [i * 180.0 / max(1, 2 * n_domains) for i in range(n_domains)]
    if len(rotation_degrees) != n_domains:
        raise ValueError("need one rotation per domain")
    domains = []
    for di in range(n_domains):
        ang = np.deg2rad(rotation_degrees[di])
        axis = np.array([np.cos(ang), np.sin(ang)])
        shift = shift_scale * np.array([np.cos(2 * ang), np.sin(2 * ang)])
        n0 = n_per_domain // 2
        n1 = n_per_domain - n0
        x0 = shift - 0.5 * separation * axis + noise * rng.normal((n0, 2))
        x1 = shift + 0.5 * separation * axis + noise * rng.normal((n1, 2))
        X = np.vstack([x0, x1])
        y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
        perm = rng.permutation(n_per_domain)
        domains.append((X[perm], y[perm]))
    return SyntheticDomainDataset(domains, rotation_degrees, separation, noise)


def mlp_problem_from_dataset(dataset: SyntheticDomainDataset,
                             layer_sizes=(2, 16, 16, 2),
                             holdout_last=False) -> MultiDomainProblem:
    """One MlpObjective per domain; optionally hold the last domain out as
    the unseen evaluation domain."""
    objectives = [MlpObjective(X, y, layer_sizes) for X, y in dataset.domains]
    unseen = None
    if holdout_last:
        if len(objectives) < 2:
            raise ValueError("need at least two domains to hold one out")
        unseen = objectives.pop()
    return MultiDomainProblem(objectives, unseen=unseen)
