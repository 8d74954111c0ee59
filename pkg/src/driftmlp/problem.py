"""Drift control problems on the nonnegative orthant.

A problem instance is a diffusion with constant covariance, a base drift
that the controller can shift through a bounded linear channel, normal or
oblique reflection at the orthant boundary, linear holding costs, optional
penalties on the boundary pushing process, and an optional terminal cost,
all over a finite horizon with exponential discounting.

The Hamiltonians here are the pointwise optimized drift-adjustment-plus-
cost terms; with a box action set and linear dynamics the optimizer is a
vertex per component, which gives the closed forms below and the bang-bang
policy readout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgumentError, UnsupportedCombinationError

__all__ = [
    "ProblemSpec",
    "WeightFn",
    "ReferenceProcess",
    "zero_terminal",
    "TERMINAL_COSTS",
    "hamiltonian_general",
    "hamiltonian_bar",
    "weight",
    "policy_readout",
]

_ROW_SUM_TOL = 1e-12


def zero_terminal(x) -> float:
    """The identically-zero terminal cost."""
    return 0.0


#: Named terminal costs usable in serialized configs.  Arbitrary callables
#: work in memory but refuse to serialize; register them here to round-trip.
TERMINAL_COSTS: dict = {"zero": zero_terminal}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProblemSpec:
    """Full data of one drift control problem.

    Fields
    ------
    dim : int
        State dimension d.
    control_dim : int
        Action dimension K.
    horizon : float
        Terminal time T > 0.
    discount : float
        Discount rate, >= 0.
    sigma : (d, d) array
        Diffusion matrix (diagonal with positive entries for the exact
        backend).
    reflection : (d, d) array
        Reflection matrix R = I - Q^T with Q nonnegative, zero diagonal
        and row sums <= 1.
    drift_base : (d,) array
        Base drift, the drift under the zero action.
    control_matrix : (d, K) array
        Maps an action a to the drift adjustment G a.
    action_bound : float
        Box bound: actions live in [0, action_bound]^K.
    holding_cost : (d,) array
        Linear running cost rate h, componentwise >= 0.
    pushing_penalty : (d,) array
        Penalty rates on the boundary regulator, componentwise >= 0.
    terminal_cost : callable
        Terminal cost on the orthant, defaults to zero.
    """

    dim: int
    control_dim: int
    horizon: float
    discount: float
    sigma: np.ndarray
    reflection: np.ndarray
    drift_base: np.ndarray
    control_matrix: np.ndarray
    action_bound: float
    holding_cost: np.ndarray
    pushing_penalty: np.ndarray
    terminal_cost: Callable = zero_terminal

    def __post_init__(self):
        d = int(self.dim)
        k = int(self.control_dim)
        if d < 1 or k < 1:
            raise InvalidArgumentError("dim and control_dim must be positive")
        object.__setattr__(self, "dim", d)
        object.__setattr__(self, "control_dim", k)
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "action_bound", float(self.action_bound))
        for name, shape in [
            ("sigma", (d, d)),
            ("reflection", (d, d)),
            ("drift_base", (d,)),
            ("control_matrix", (d, k)),
            ("holding_cost", (d,)),
            ("pushing_penalty", (d,)),
        ]:
            arr = _readonly(getattr(self, name))
            if arr.shape != shape:
                raise InvalidArgumentError(
                    f"{name} must have shape {shape}, got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if self.horizon <= 0:
            raise InvalidArgumentError("horizon must be positive")
        if self.discount < 0:
            raise InvalidArgumentError("discount must be nonnegative")
        if self.action_bound < 0:
            raise InvalidArgumentError("action_bound must be nonnegative")
        if np.any(self.holding_cost < 0) or np.any(self.pushing_penalty < 0):
            raise InvalidArgumentError("cost rates must be nonnegative")
        q = self.pushing_matrix
        if np.any(np.abs(np.diag(q)) > 0):
            raise InvalidArgumentError("reflection diagonal must be one")
        if np.any(q < -_ROW_SUM_TOL):
            raise InvalidArgumentError(
                "off-diagonal reflection entries must be nonpositive"
            )
        if np.any(q.sum(axis=1) > 1 + _ROW_SUM_TOL):
            raise InvalidArgumentError("reflection row-sum condition violated")
        if not callable(self.terminal_cost):
            raise InvalidArgumentError("terminal_cost must be callable")

    # -- derived views -------------------------------------------------

    @property
    def pushing_matrix(self) -> np.ndarray:
        """Q with R = I - Q^T."""
        return (np.eye(self.dim) - self.reflection).T

    @property
    def reflection_is_identity(self) -> bool:
        return bool(np.array_equal(self.reflection, np.eye(self.dim)))

    @property
    def sigma_is_diagonal(self) -> bool:
        return bool(
            np.array_equal(self.sigma, np.diag(np.diag(self.sigma)))
        )

    @property
    def sigma_diag(self) -> np.ndarray:
        if not self.sigma_is_diagonal:
            raise UnsupportedCombinationError("sigma is not diagonal")
        return np.diag(self.sigma)

    @property
    def has_pushing_penalty(self) -> bool:
        return bool(np.any(self.pushing_penalty > 0))

    @property
    def has_terminal_cost(self) -> bool:
        return self.terminal_cost is not zero_terminal

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        name = None
        for key, fn in TERMINAL_COSTS.items():
            if fn is self.terminal_cost:
                name = key
                break
        if name is None:
            raise InvalidArgumentError(
                "terminal_cost is not a registered named cost; add it to "
                "TERMINAL_COSTS to serialize"
            )
        return {
            "dim": self.dim,
            "control_dim": self.control_dim,
            "horizon": self.horizon,
            "discount": self.discount,
            "sigma": self.sigma.tolist(),
            "reflection": self.reflection.tolist(),
            "drift_base": self.drift_base.tolist(),
            "control_matrix": self.control_matrix.tolist(),
            "action_bound": self.action_bound,
            "holding_cost": self.holding_cost.tolist(),
            "pushing_penalty": self.pushing_penalty.tolist(),
            "terminal_cost": name,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        data = dict(data)
        name = data.pop("terminal_cost", "zero")
        if name not in TERMINAL_COSTS:
            raise InvalidArgumentError(f"unknown terminal_cost {name!r}")
        try:
            return cls(terminal_cost=TERMINAL_COSTS[name], **data)
        except TypeError as exc:
            raise InvalidArgumentError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ProblemSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class WeightFn:
    """Polynomial growth weight w(x) = 1 + (log d)^{a0/2} + ||x||_inf^a0."""

    alpha0: float
    log_dim_term: float

    def __post_init__(self):
        if self.alpha0 < 1:
            raise InvalidArgumentError("alpha0 must be >= 1")
        if self.log_dim_term < 0:
            raise InvalidArgumentError("log_dim_term must be >= 0")

    @classmethod
    def for_dim(cls, dim: int, alpha0: float = 1.0) -> "WeightFn":
        return cls(alpha0=alpha0, log_dim_term=np.log(dim) ** (alpha0 / 2.0))


def weight(w: WeightFn, x) -> float:
    """Evaluate the growth weight at a state (always >= 1)."""
    x = np.asarray(x, dtype=float)
    return float(1.0 + w.log_dim_term + np.max(np.abs(x)) ** w.alpha0)


@dataclass(frozen=True)
class ReferenceProcess:
    """A reference dynamic: drift choice plus simulation backend.

    backend "exact" simulates independent one-dimensional reflected
    Brownian coordinates without discretization; it requires the constant
    base drift (drift=None), diagonal sigma and identity reflection.
    backend "euler" discretizes with a fixed number of uniform steps per
    time interval and supports a state-dependent drift with analytic
    Jacobian (callables must be module-level or partials to stay
    picklable for multi-process runs).
    """

    backend: str
    drift: Optional[Callable] = None
    jacobian: Optional[Callable] = None
    steps_per_interval: int = 50

    def __post_init__(self):
        if self.backend not in ("exact", "euler"):
            raise InvalidArgumentError(f"unknown backend {self.backend!r}")
        if self.steps_per_interval < 1:
            raise InvalidArgumentError("steps_per_interval must be >= 1")
        if self.backend == "exact" and self.drift is not None:
            raise UnsupportedCombinationError(
                "exact backend only supports the constant base drift"
            )

    @classmethod
    def exact_rbm(cls) -> "ReferenceProcess":
        return cls(backend="exact")

    @classmethod
    def euler(cls, drift=None, jacobian=None, steps_per_interval=50):
        return cls(
            backend="euler",
            drift=drift,
            jacobian=jacobian,
            steps_per_interval=steps_per_interval,
        )

    def drift_at(self, spec: ProblemSpec, x: np.ndarray) -> np.ndarray:
        if self.drift is None:
            return np.broadcast_to(
                spec.drift_base, np.shape(x)
            ).astype(float, copy=True) if np.ndim(x) > 1 else spec.drift_base
        return np.asarray(self.drift(x), dtype=float)

    def jacobian_at(self, spec: ProblemSpec, x: np.ndarray):
        """Jacobian of the reference drift, or None meaning zero."""
        if self.jacobian is None:
            if self.drift is not None:
                raise InvalidArgumentError(
                    "state-dependent drift requires an analytic jacobian"
                )
            return None
        return np.asarray(self.jacobian(x), dtype=float)


def hamiltonian_general(spec: ProblemSpec, x, p, btilde_x) -> float:
    """Optimized Hamiltonian against an arbitrary reference drift.

    inf over actions a in the box of (b(x,a) - btilde(x))^T p + c(x,a)
    with b(x,a) = drift_base + G a and c(x,a) = h^T x.  The objective is
    affine in a, so the infimum sits at a per-component vertex determined
    by the sign of (G^T p).
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    btilde_x = np.asarray(btilde_x, dtype=float)
    if not (
        np.all(np.isfinite(x))
        and np.all(np.isfinite(p))
        and np.all(np.isfinite(btilde_x))
    ):
        raise InvalidArgumentError("non-finite input to hamiltonian_general")
    gp = spec.control_matrix.T @ p
    return float(
        (spec.drift_base - btilde_x) @ p
        + spec.action_bound * np.minimum(gp, 0.0).sum()
        + spec.holding_cost @ x
    )


def hamiltonian_bar(spec: ProblemSpec, p):
    """State-free part of the Hamiltonian under the base reference drift.

    C_A * sum_k min((G^T p)_k, 0); equals hamiltonian_general minus the
    running cost h^T x when the reference drift is the base drift.
    Accepts a batch of gradients with shape (..., d).
    """
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise InvalidArgumentError("non-finite input to hamiltonian_bar")
    gp = p @ spec.control_matrix
    out = spec.action_bound * np.minimum(gp, 0.0).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def policy_readout(grad, spec: ProblemSpec) -> np.ndarray:
    """Bang-bang action from a gradient estimate.

    Component k of the action is action_bound when (G^T grad)_k <= 0 and
    zero otherwise; ties take the bound (the infimum's weak inequality).
    """
    grad = np.asarray(grad, dtype=float)
    gp = spec.control_matrix.T @ grad
    return np.where(gp <= 0.0, spec.action_bound, 0.0)
