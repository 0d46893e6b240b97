"""Layers with analytic inverses and hand-written reverse-mode gradients.

Every layer maps a batch ``X`` of shape ``(N, in_dim)`` to ``(N, out_dim)``.
``forward`` returns the output together with a cache that ``backward`` uses to
pull an output cotangent ``dY`` back to ``(dX, grads)``, where ``grads`` has
one array per parameter.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from ..errors import DimMismatch, ParseError


class Layer:
    kind = "layer"
    in_dim: int
    out_dim: int

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise DimMismatch(f"{self.kind} expects width {self.in_dim}, got {X.shape}")
        return X

    def __call__(self, X):
        return self.forward(X)[0]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                       for k, v in self.params.items()},
            **self._extra(),
        }

    def _extra(self) -> dict:
        return {}

    def _load_params(self, doc):
        for k, v in doc.get("params", {}).items():
            if k not in self.params:
                raise ParseError(f"{self.kind} has no parameter {k!r}")
            arr = np.asarray(v["data"], dtype=float).reshape(v["shape"])
            if arr.shape != self.params[k].shape:
                raise ParseError(f"parameter {k!r} has shape {arr.shape}, "
                                 f"expected {self.params[k].shape}")
            self.params[k] = arr


class ZeroPad(Layer):
    """Injection ``x -> (x, 0)``."""

    kind = "zeropad"

    def __init__(self, in_dim: int, added: int):
        super().__init__()
        if added < 0:
            raise ValueError("added dimensions must be >= 0")
        self.in_dim = in_dim
        self.added = added
        self.out_dim = in_dim + added

    def forward(self, X):
        X = self._check(X)
        return np.concatenate([X, np.zeros((X.shape[0], self.added))], axis=1), None

    def backward(self, cache, dY):
        return dY[:, : self.in_dim], {}

    def inverse(self, Y):
        # left inverse: drop the padded coordinates
        return np.asarray(Y, dtype=float)[:, : self.in_dim]

    def _extra(self):
        return {"added": self.added}


class InvLinear(Layer):
    """Affine map ``y = W x + b`` with ``W = L U`` kept invertible.

    ``L`` is unit lower triangular and ``U`` upper triangular with diagonal
    ``exp(log_diag)``, so ``W`` is invertible for every parameter value.
    """

    kind = "invlinear"

    def __init__(self, dim: int, rng=None, noise: float = 1e-2):
        super().__init__()
        self.in_dim = self.out_dim = dim
        rng = np.random.default_rng(rng)
        lower_mask = np.tril(np.ones((dim, dim)), -1)
        upper_mask = np.triu(np.ones((dim, dim)), 1)
        self.params = {
            "lower": noise * rng.standard_normal((dim, dim)) * lower_mask,
            "upper": noise * rng.standard_normal((dim, dim)) * upper_mask,
            "log_diag": noise * rng.standard_normal(dim),
            "bias": np.zeros(dim),
        }
        self._lmask = lower_mask
        self._umask = upper_mask

    def factors(self):
        p = self.params
        L = np.eye(self.in_dim) + p["lower"] * self._lmask
        U = p["upper"] * self._umask + np.diag(np.exp(p["log_diag"]))
        return L, U

    def matrix(self) -> np.ndarray:
        L, U = self.factors()
        return L @ U

    def forward(self, X):
        X = self._check(X)
        L, U = self.factors()
        W = L @ U
        return X @ W.T + self.params["bias"], (X, L, U, W)

    def backward(self, cache, dY):
        X, L, U, W = cache
        dW = dY.T @ X
        dU = L.T @ dW
        grads = {
            "lower": (dW @ U.T) * self._lmask,
            "upper": dU * self._umask,
            "log_diag": np.diag(dU) * np.exp(self.params["log_diag"]),
            "bias": dY.sum(axis=0),
        }
        return dY @ W, grads

    def inverse(self, Y):
        Y = np.asarray(Y, dtype=float)
        L, U = self.factors()
        Z = solve_triangular(L, (Y - self.params["bias"]).T, lower=True, unit_diagonal=True)
        return solve_triangular(U, Z, lower=False).T


class Coupling(Layer):
    """Affine coupling ``y_b = x_b * exp(s(x_a)) + t(x_a)``, ``y_a = x_a``.

    ``mask`` marks the conditioning coordinates ``a``.  The conditioner is a
    tanh MLP with two hidden layers whose output layer starts at zero, so a
    fresh coupling is the identity.
    """

    kind = "coupling"

    def __init__(self, mask, hidden: int = 64, rng=None, input_scale: float = 1.0,
                 scale_bound: float = 2.0):
        super().__init__()
        self.scale_bound = scale_bound
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 1 or mask.all() or not mask.any():
            raise ValueError("coupling mask must select a proper nonempty subset")
        self.mask = mask
        self.in_dim = self.out_dim = mask.size
        self.hidden = hidden
        self._a = np.flatnonzero(mask)
        self._b = np.flatnonzero(~mask)
        na, nb = self._a.size, self._b.size
        rng = np.random.default_rng(rng)
        self.params = {
            "W1": input_scale * rng.standard_normal((na, hidden)) / np.sqrt(na),
            "b1": np.zeros(hidden),
            "W2": rng.standard_normal((hidden, hidden)) / np.sqrt(hidden),
            "b2": np.zeros(hidden),
            "W3": np.zeros((hidden, 2 * nb)),
            "b3": np.zeros(2 * nb),
        }

    def _conditioner(self, Xa):
        p = self.params
        h1 = np.tanh(Xa @ p["W1"] + p["b1"])
        h2 = np.tanh(h1 @ p["W2"] + p["b2"])
        out = h2 @ p["W3"] + p["b3"]
        nb = self._b.size
        # log-scale squashed into (-scale_bound, scale_bound)
        c = self.scale_bound
        th = np.tanh(out[:, :nb] / c)
        return c * th, out[:, nb:], (Xa, h1, h2, th)

    def forward(self, X):
        X = self._check(X)
        Xa, Xb = X[:, self._a], X[:, self._b]
        s, t, mlp = self._conditioner(Xa)
        es = np.exp(s)
        Y = np.empty_like(X)
        Y[:, self._a] = Xa
        Y[:, self._b] = Xb * es + t
        return Y, (Xb, es, mlp)

    def backward(self, cache, dY):
        Xb, es, (Xa, h1, h2, th) = cache
        p = self.params
        dya, dyb = dY[:, self._a], dY[:, self._b]
        dout = np.concatenate([dyb * Xb * es * (1 - th ** 2), dyb], axis=1)
        dh2 = dout @ p["W3"].T
        dz2 = dh2 * (1 - h2 ** 2)
        dh1 = dz2 @ p["W2"].T
        dz1 = dh1 * (1 - h1 ** 2)
        grads = {
            "W3": h2.T @ dout, "b3": dout.sum(axis=0),
            "W2": h1.T @ dz2, "b2": dz2.sum(axis=0),
            "W1": Xa.T @ dz1, "b1": dz1.sum(axis=0),
        }
        dX = np.empty_like(dY)
        dX[:, self._a] = dya + dz1 @ p["W1"].T
        dX[:, self._b] = dyb * es
        return dX, grads

    def inverse(self, Y):
        Y = np.asarray(Y, dtype=float)
        Ya, Yb = Y[:, self._a], Y[:, self._b]
        s, t, _ = self._conditioner(Ya)
        X = np.empty_like(Y)
        X[:, self._a] = Ya
        X[:, self._b] = (Yb - t) * np.exp(-s)
        return X

    def _extra(self):
        return {"mask": self.mask.astype(int).tolist(), "hidden": self.hidden,
                "scale_bound": self.scale_bound}


def layer_from_dict(doc) -> Layer:
    try:
        kind = doc["kind"]
        if kind == "zeropad":
            layer = ZeroPad(int(doc["in_dim"]), int(doc["added"]))
        elif kind == "invlinear":
            layer = InvLinear(int(doc["in_dim"]), noise=0.0)
        elif kind == "coupling":
            layer = Coupling(np.asarray(doc["mask"], dtype=bool), int(doc["hidden"]),
                             scale_bound=float(doc.get("scale_bound", 2.0)))
        else:
            raise ParseError(f"unknown layer kind {kind!r}")
        layer._load_params(doc)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed layer document: {exc}") from exc
    return layer


def run_forward(layers, X):
    """Apply ``layers`` in order, keeping the caches for ``run_backward``."""
    caches = []
    for layer in layers:
        X, cache = layer.forward(X)
        caches.append(cache)
    return X, caches


def run_backward(layers, caches, dY):
    """Reverse sweep; returns ``dX`` and one gradient dict per layer."""
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        dY, grads[i] = layers[i].backward(caches[i], dY)
    return dY, grads


def batch_jacobian(layers, X, out_dim: int) -> np.ndarray:
    """Jacobians ``(N, out_dim, in_dim)`` by one reverse sweep per output row."""
    Y, caches = run_forward(layers, X)
    N = Y.shape[0]
    rows = []
    for k in range(out_dim):
        dY = np.zeros((N, out_dim))
        dY[:, k] = 1.0
        rows.append(run_backward(layers, caches, dY)[0])
    return np.stack(rows, axis=1)
