"""Extension-projection networks ``T . p . E``.

``E`` pads its input with zeros and then applies invertible layers, so it is
injective.  ``p`` keeps the first ``proj_keep`` coordinates and ``T`` is a
bijection of ``R^proj_keep``.  The composite can therefore be many-to-one while
every factor stays invertible (``E`` on its range).
"""

from __future__ import annotations

import copy
import csv
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import as_points
from ..errors import (DimMismatch, Diverged, EmptyCandidates, IoError, NotInRange,
                      ParseError)
from .layers import (Coupling, InvLinear, ZeroPad, batch_jacobian, layer_from_dict,
                     run_backward, run_forward)

RANGE_TOL = 1e-6


def _split_masks(dim: int, head: int):
    """Masks conditioning on the first ``head`` coordinates and on the rest."""
    a = np.zeros(dim, dtype=bool)
    a[:head] = True
    return a, ~a


class EPNetwork(BaseEstimator, TransformerMixin):
    """Injective ``E``, projection ``p`` and bijective ``T``, fit by regression.

    Parameters
    ----------
    proj_keep : int or None
        Number of coordinates kept by ``p``.  Inferred from ``U`` when omitted.
    n_e_couplings, n_t_couplings : int
        Coupling layers in ``E`` and ``T``.  ``E`` alternates between updating
        the padded block from the input block and the reverse.
    hidden : int
        Width of the two hidden layers of every coupling conditioner.
    max_steps, step_size, momentum, batch_size :
        Heavy-ball gradient descent on the mean squared error; ``batch_size``
        of ``None`` means full batch.
    n_checkpoints : int
        Parameter snapshots kept at evenly spaced steps (the last one is the
        end of training).
    """

    def __init__(self, proj_keep=None, n_e_couplings=4, n_t_couplings=2, hidden=64,
                 max_steps=2000, step_size=1e-2, momentum=0.9, batch_size=None,
                 seed=0, n_checkpoints=10, restore_best=True, input_scale=1.0,
                 clip_norm=None, decay=None):
        self.proj_keep = proj_keep
        self.n_e_couplings = n_e_couplings
        self.n_t_couplings = n_t_couplings
        self.hidden = hidden
        self.max_steps = max_steps
        self.step_size = step_size
        self.momentum = momentum
        self.batch_size = batch_size
        self.seed = seed
        self.n_checkpoints = n_checkpoints
        self.restore_best = restore_best
        self.input_scale = input_scale
        self.clip_norm = clip_norm
        self.decay = decay

    # -- construction -----------------------------------------------------
    def _build(self, in_dim: int, out_dim: int, proj_keep: int, rng):
        if out_dim < in_dim:
            raise DimMismatch("E cannot reduce dimension")
        if proj_keep > out_dim:
            raise DimMismatch("proj_keep exceeds the output width of E")
        E = [ZeroPad(in_dim, out_dim - in_dim)]
        if out_dim > in_dim:
            head, rest = _split_masks(out_dim, in_dim)
            for i in range(self.n_e_couplings):
                E.append(Coupling(head if i % 2 == 0 else rest, self.hidden, rng,
                                  self.input_scale))
        E.append(InvLinear(out_dim, rng))
        T = [InvLinear(proj_keep, rng)]
        if proj_keep >= 2:
            half = _split_masks(proj_keep, proj_keep // 2)
            for i in range(self.n_t_couplings):
                T.append(Coupling(half[i % 2], self.hidden, rng))
        return E, T

    @classmethod
    def from_layers(cls, E_layers, T_layers, proj_keep: int, **params):
        """Wrap explicit layer stacks in an already fitted network."""
        net = cls(proj_keep=proj_keep, **params)
        net._set_layers(list(E_layers), list(T_layers), proj_keep)
        net.loss_history_ = []
        net.checkpoints_ = []
        return net

    def _set_layers(self, E_layers, T_layers, proj_keep):
        for a, b in zip(E_layers, E_layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimMismatch("E layer widths do not chain")
        for a, b in zip(T_layers, T_layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimMismatch("T layer widths do not chain")
        if any(not isinstance(layer, (ZeroPad, InvLinear, Coupling)) for layer in E_layers):
            raise TypeError("E layers must be ZeroPad, InvLinear or Coupling")
        if any(not isinstance(layer, (InvLinear, Coupling)) for layer in T_layers):
            raise TypeError("T layers must be InvLinear or Coupling")
        dims = [E_layers[0].in_dim] + [layer.out_dim for layer in E_layers]
        if any(b < a for a, b in zip(dims, dims[1:])):
            raise DimMismatch("E dimensions must be non-decreasing")
        if proj_keep > dims[-1]:
            raise DimMismatch("proj_keep exceeds the output width of E")
        if T_layers and T_layers[0].in_dim != proj_keep:
            raise DimMismatch("T width must equal proj_keep")
        self.E_layers_ = E_layers
        self.T_layers_ = T_layers
        self.proj_keep_ = proj_keep
        self.dims_ = dims
        self.n_features_in_ = dims[0]

    @property
    def in_dim(self) -> int:
        return self.dims_[0]

    @property
    def e_dim(self) -> int:
        return self.dims_[-1]

    # -- evaluation -------------------------------------------------------
    def forward_E(self, X):
        check_is_fitted(self, "E_layers_")
        X, single = as_points(X, self.in_dim)
        Z = run_forward(self.E_layers_, X)[0]
        return Z[0] if single else Z

    def transform(self, X):
        return self.forward_E(X)

    def forward_T(self, U):
        check_is_fitted(self, "E_layers_")
        U, single = as_points(U, self.proj_keep_)
        Y = run_forward(self.T_layers_, U)[0]
        return Y[0] if single else Y

    def predict(self, X):
        """``T(p(E(x)))``."""
        Z = np.atleast_2d(self.forward_E(X))
        Y = run_forward(self.T_layers_, Z[:, : self.proj_keep_])[0]
        return Y[0] if np.ndim(X) == 1 else Y

    forward = predict

    def inverse_T(self, Y):
        check_is_fitted(self, "E_layers_")
        Y, single = as_points(Y, self.proj_keep_)
        for layer in reversed(self.T_layers_):
            Y = layer.inverse(Y)
        return Y[0] if single else Y

    def left_inverse_E(self, Z, tol: float = RANGE_TOL):
        """Recover ``x`` from ``z = E(x)``; raises ``NotInRange`` off the range."""
        check_is_fitted(self, "E_layers_")
        Z, single = as_points(Z, self.e_dim)
        X = Z
        for layer in reversed(self.E_layers_):
            X = layer.inverse(X)
        resid = np.linalg.norm(run_forward(self.E_layers_, X)[0] - Z, axis=1)
        if resid.size and resid.max() > tol:
            raise NotInRange(f"point is {resid.max():.3g} away from the range of E")
        return X[0] if single else X

    def jacobian(self, X, stage: str = "full"):
        """Analytic Jacobians; ``stage`` is ``"E"``, ``"T"`` or ``"full"``."""
        check_is_fitted(self, "E_layers_")
        if stage == "E":
            X, single = as_points(X, self.in_dim)
            J = batch_jacobian(self.E_layers_, X, self.e_dim)
        elif stage == "T":
            X, single = as_points(X, self.proj_keep_)
            J = batch_jacobian(self.T_layers_, X, self.proj_keep_)
        elif stage == "full":
            X, single = as_points(X, self.in_dim)
            Z = run_forward(self.E_layers_, X)[0]
            JE = batch_jacobian(self.E_layers_, X, self.e_dim)
            JT = batch_jacobian(self.T_layers_, Z[:, : self.proj_keep_], self.proj_keep_)
            J = JT @ JE[:, : self.proj_keep_, :]
        else:
            raise ValueError(f"unknown stage {stage!r}")
        return J[0] if single else J

    # -- training ---------------------------------------------------------
    def fit(self, X, H, U=None, H2=None):
        """Fit ``E`` to ``(X, H)`` and ``T`` to ``(U, H2)``.

        Without ``U`` the bijection ``T`` is fit to the identity on the first
        ``proj_keep`` columns of ``H``.
        """
        X, _ = as_points(X, None, "X")
        H, _ = as_points(H, None, "H")
        if X.shape[0] != H.shape[0]:
            raise DimMismatch("X and H need the same number of rows")
        proj_keep = self.proj_keep
        if U is not None:
            U, _ = as_points(U, proj_keep, "U")
            proj_keep = U.shape[1]
            H2 = U if H2 is None else as_points(H2, proj_keep, "H2")[0]
            if H2.shape[0] != U.shape[0]:
                raise DimMismatch("U and H2 need the same number of rows")
        else:
            if proj_keep is None:
                raise ValueError("proj_keep is required when U is not given")
            U = H[:, :proj_keep]
            H2 = U
        if self.max_steps < 0 or self.step_size <= 0 or not 0 <= self.momentum < 1:
            raise ValueError("invalid optimiser settings")

        rng = np.random.default_rng(self.seed)
        E, T = self._build(X.shape[1], H.shape[1], proj_keep, rng)
        self._set_layers(E, T, proj_keep)
        self._train(X, H, U, H2, rng)
        return self

    def _loss_and_grads(self, layers, X, Y):
        out, caches = run_forward(layers, X)
        err = out - Y
        loss = float(np.mean(np.sum(err ** 2, axis=1)))
        _, grads = run_backward(layers, caches, 2.0 * err / X.shape[0])
        return loss, grads

    def _snapshot(self):
        return ([{k: v.copy() for k, v in layer.params.items()} for layer in self.E_layers_],
                [{k: v.copy() for k, v in layer.params.items()} for layer in self.T_layers_])

    def _restore(self, snap):
        for layer, p in zip(self.E_layers_, snap[0]):
            layer.params = {k: v.copy() for k, v in p.items()}
        for layer, p in zip(self.T_layers_, snap[1]):
            layer.params = {k: v.copy() for k, v in p.items()}

    def _train(self, X, H, U, H2, rng):
        layers = self.E_layers_ + self.T_layers_
        velocity = [{k: np.zeros_like(v) for k, v in layer.params.items()} for layer in layers]
        n_steps = self.max_steps
        cps = sorted({int(round(n_steps * (i + 1) / self.n_checkpoints))
                      for i in range(self.n_checkpoints)}) if self.n_checkpoints else []
        self.loss_history_ = []
        self.checkpoints_ = []
        best = (np.inf, None)

        def batch(A, B):
            if self.batch_size is None or self.batch_size >= A.shape[0]:
                return A, B
            idx = rng.choice(A.shape[0], size=self.batch_size, replace=False)
            return A[idx], B[idx]

        for step in range(n_steps + 1):
            xb, hb = batch(X, H)
            ub, h2b = batch(U, H2)
            loss_e, grads_e = self._loss_and_grads(self.E_layers_, xb, hb)
            loss_t, grads_t = self._loss_and_grads(self.T_layers_, ub, h2b)
            loss = loss_e + loss_t
            if not np.isfinite(loss):
                raise Diverged(f"loss became {loss} at step {step}")
            self.loss_history_.append((step, loss, loss_e, loss_t))
            if loss < best[0]:
                best = (loss, self._snapshot())
            if step in cps:
                self.checkpoints_.append((step, self._snapshot()))
            if step == n_steps:
                break
            all_grads = grads_e + grads_t
            scale = 1.0
            if self.clip_norm is not None:
                norm = np.sqrt(sum(float(np.sum(a ** 2)) for g in all_grads for a in g.values()))
                scale = min(1.0, self.clip_norm / max(norm, 1e-300))
            lr = self.step_size * scale * self._schedule(step, n_steps)
            for i, (layer, g) in enumerate(zip(layers, all_grads)):
                v = velocity[i]
                for k in layer.params:
                    v[k] = self.momentum * v[k] - lr * g[k]
                    layer.params[k] = layer.params[k] + v[k]
        if self.restore_best and best[1] is not None:
            self._restore(best[1])
        self.best_loss_ = best[0]

    def _schedule(self, step, n_steps):
        if self.decay is None:
            return 1.0
        if self.decay == "cosine":
            return 0.5 * (1 + np.cos(np.pi * step / max(n_steps, 1)))
        if self.decay == "linear":
            return 1.0 - step / max(n_steps, 1)
        raise ValueError(f"unknown decay {self.decay!r}")

    @property
    def best_so_far_(self) -> np.ndarray:
        return np.minimum.accumulate(np.array([row[1] for row in self.loss_history_]))

    def at_checkpoint(self, i: int) -> "EPNetwork":
        """Copy of the network with the parameters of checkpoint ``i``."""
        net = copy.deepcopy(self)
        net._restore(self.checkpoints_[i][1])
        return net

    # -- inversion --------------------------------------------------------
    def multivalued_invert(self, y, d: int, candidates, manifold=None, n_steps: int = 20,
                           dup_tol: float = 1e-3, candidate_E=None) -> "Inversion":
        """Points ``x_j`` with ``E(x_j)`` closest to ``(T^{-1}(y), j, 0)``, ``j = 1..d``.

        Each starts at the best candidate and is polished with damped
        Gauss-Newton steps.  With a ``manifold`` (anything offering
        ``nearest_point`` and ``tangent_basis``) steps are taken in the
        tangent plane and projected back onto it.
        """
        check_is_fitted(self, "E_layers_")
        C, _ = as_points(candidates, self.in_dim, "candidates")
        if C.shape[0] == 0:
            raise EmptyCandidates("no candidate points")
        y = np.asarray(y, dtype=float)
        if y.shape != (self.proj_keep_,):
            raise DimMismatch(f"y must have shape ({self.proj_keep_},)")
        tail = self.e_dim - self.proj_keep_ - 1
        if tail < 0:
            raise DimMismatch("E output has no room for the sheet coordinate")
        EC = self.forward_E(C) if candidate_E is None else candidate_E
        u = self.inverse_T(y)
        points, objective = [], []
        for j in range(1, d + 1):
            z = np.concatenate([u, [float(j)], np.zeros(tail)])
            x0 = C[int(np.argmin(np.sum((EC - z) ** 2, axis=1)))]
            x, obj = self._gauss_newton(x0, z, manifold, n_steps)
            points.append(x)
            objective.append(obj)
        P = np.array(points)
        dups = [(a, b) for a in range(d) for b in range(a + 1, d)
                if np.linalg.norm(P[a] - P[b]) < dup_tol]
        return Inversion(P, np.array(objective), dups)

    def _gauss_newton(self, x, z, manifold, n_steps):
        def resid(p):
            return run_forward(self.E_layers_, p[None, :])[0][0] - z

        if manifold is not None:
            x = manifold.nearest_point(x)
        r = resid(x)
        obj = float(r @ r)
        lam = 1e-3
        for _ in range(n_steps):
            J = batch_jacobian(self.E_layers_, x[None, :], self.e_dim)[0]
            B = manifold.tangent_basis(x) if manifold is not None else np.eye(self.in_dim)
            Jt = J @ B
            A = Jt.T @ Jt
            g = Jt.T @ r
            improved = False
            for _ in range(10):
                delta = -np.linalg.solve(A + lam * np.eye(A.shape[0]), g)
                cand = x + B @ delta
                if manifold is not None:
                    cand = manifold.nearest_point(cand)
                rc = resid(cand)
                oc = float(rc @ rc)
                if oc < obj:
                    x, r, obj = cand, rc, oc
                    lam = max(lam / 10, 1e-12)
                    improved = True
                    break
                lam *= 10
            if not improved:
                break
        return x, obj

    # -- persistence ------------------------------------------------------
    def to_dict(self) -> dict:
        check_is_fitted(self, "E_layers_")
        params = {k: v for k, v in self.get_params().items()}
        return {
            "proj_keep": self.proj_keep_,
            "dims": self.dims_,
            "E_layers": [layer.to_dict() for layer in self.E_layers_],
            "T_layers": [layer.to_dict() for layer in self.T_layers_],
            "hyperparameters": params,
        }

    @classmethod
    def from_dict(cls, doc) -> "EPNetwork":
        try:
            E = [layer_from_dict(d) for d in doc["E_layers"]]
            T = [layer_from_dict(d) for d in doc["T_layers"]]
            hp = dict(doc.get("hyperparameters", {}))
            hp.pop("proj_keep", None)
            net = cls.from_layers(E, T, int(doc["proj_keep"]), **hp)
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed network document: {exc}") from exc
        if "dims" in doc and list(doc["dims"]) != net.dims_:
            raise ParseError("stored dims do not match the layers")
        return net

    def save(self, path) -> None:
        try:
            with open(path, "w") as fh:
                json.dump(self.to_dict(), fh)
        except OSError as exc:
            raise IoError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "EPNetwork":
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise IoError(str(exc)) from exc
        return cls.from_dict(doc)

    def write_loss_csv(self, path) -> None:
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "loss", "loss_E", "loss_T"])
                for row in self.loss_history_:
                    w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])
        except OSError as exc:
            raise IoError(str(exc)) from exc


@dataclass
class Inversion:
    points: np.ndarray
    objective: np.ndarray
    duplicates: list = field(default_factory=list)
