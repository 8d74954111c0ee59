"""Skorokhod maps and Euler time stepping of reflected reference paths.

The deterministic half of this module solves the discrete Skorokhod
problem: given a free path, find the minimal nondecreasing regulator
keeping the constrained path in the nonnegative orthant.  With normal
reflection each coordinate has the classical running-minimum closed
form; with an oblique reflection matrix R = I - Q^T the per-step least
fixed point is found by monotone iteration.

The stochastic half steps a reflected diffusion with a (possibly
state-dependent) reference drift on a uniform grid, one Skorokhod
projection per step, together with its pathwise derivative matrix and
the accumulated stochastic-integral weight that converts value samples
into gradient samples.  Derivative rows are killed, permanently, the
first time their state coordinate lands on the boundary; with normal
reflection and a grid this loses only re-activation effects of
measure-zero multi-hit events, which are not modeled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    InvalidArgumentError,
    NumericalFailureError,
    UnsupportedCombinationError,
)
from .exact import MIN_DT
from .problem import ProblemSpec, ReferenceProcess
from .streams import RngStream

__all__ = [
    "DiscretePath",
    "DerivativeState",
    "WeightedPathResult",
    "skorokhod_map_1d",
    "skorokhod_map_orthant",
    "euler_reference_step",
    "simulate_weighted_path",
    "euler_tuple_batch",
    "complementarity_residual",
]

_FP_TOL = 1e-12
_FP_MAX_ITER = 10_000


def skorokhod_map_1d(free_path):
    """Reflect a scalar path at zero with the minimal regulator.

    Returns (reflected, regulator) with reflected = free + regulator,
    regulator(t) = max(0, max_{s<=t} -free(s)) nondecreasing from 0.
    """
    f = np.asarray(free_path, dtype=float)
    if f.ndim != 1 or f.size == 0:
        raise InvalidArgumentError("free_path must be a nonempty 1-d array")
    if f[0] < 0:
        raise InvalidArgumentError("free path must start nonnegative")
    g = np.maximum(np.maximum.accumulate(-f), 0.0)
    return f + g, g


@dataclass(frozen=True)
class DiscretePath:
    """A grid path of a reflected process with its regulator.

    times is the increasing grid, states the constrained path in the
    orthant, regulator the componentwise nondecreasing pushing process
    starting at zero.
    """

    times: np.ndarray
    states: np.ndarray
    regulator: np.ndarray


def complementarity_residual(path: DiscretePath, atol: float = 1e-10) -> float:
    """Total regulator mass spent while the state was off the boundary.

    Sums regulator increments in coordinates whose post-step state
    exceeds `atol`; exactly zero for the closed-form normal-reflection
    map, and bounded by the fixed-point tolerance otherwise.
    """
    dy = np.diff(path.regulator, axis=0)
    off_boundary = path.states[1:] > atol
    return float(np.sum(dy * off_boundary))


def skorokhod_map_orthant(times, free_path, reflection) -> DiscretePath:
    """Solve the discrete Skorokhod problem on the orthant.

    With identity reflection this is the coordinatewise closed form;
    otherwise each step's regulator is the least fixed point of
    g = max(g_prev, Q^T g - f), found by monotone iteration to 1e-12.
    """
    times = np.asarray(times, dtype=float)
    f = np.asarray(free_path, dtype=float)
    if f.ndim != 2 or f.shape[0] != times.shape[0]:
        raise InvalidArgumentError("free_path must be (len(times), d)")
    if np.any(f[0] < 0):
        raise InvalidArgumentError("free path must start in the orthant")
    r = np.asarray(reflection, dtype=float)
    d = f.shape[1]
    if r.shape != (d, d):
        raise InvalidArgumentError("reflection must be d x d")
    q = (np.eye(d) - r).T
    if np.allclose(q, 0.0):
        g = np.maximum(np.maximum.accumulate(-f, axis=0), 0.0)
        return DiscretePath(times=times, states=f + g, regulator=g)
    qt = q.T
    n = f.shape[0]
    g = np.zeros((n, d))
    for k in range(1, n):
        gk = g[k - 1].copy()
        prev = g[k - 1]
        fk = f[k]
        for _ in range(_FP_MAX_ITER):
            nxt = np.maximum(prev, qt @ gk - fk)
            if np.max(np.abs(nxt - gk)) <= _FP_TOL:
                gk = nxt
                break
            gk = nxt
        else:
            raise NumericalFailureError(
                f"oblique Skorokhod step failed to converge at index {k}"
            )
        g[k] = gk
    states = f + g @ r.T
    return DiscretePath(times=times, states=states, regulator=g)


@dataclass(frozen=True)
class DerivativeState:
    """Pathwise derivative matrix with its boundary-kill bookkeeping.

    matrix[i, j] is the sensitivity of state coordinate i to the j-th
    initial coordinate; alive_mask[i] turns False forever once
    coordinate i has touched the boundary.
    """

    matrix: np.ndarray
    alive_mask: np.ndarray

    @classmethod
    def initial(cls, d: int) -> "DerivativeState":
        return cls(matrix=np.eye(d), alive_mask=np.ones(d, dtype=bool))


def euler_reference_step(state, deriv: DerivativeState, btilde, jacobian_btilde,
                         sigma, dW, dt: float):
    """One projected Euler step of the state and its derivative matrix.

    btilde and jacobian_btilde are the drift value and Jacobian at the
    current state (jacobian None means zero).  Only normal reflection is
    supported: the projection is a componentwise floor at zero and the
    regulator increment is the shortfall.  Rows of the derivative whose
    coordinate lands on (or has ever landed on) the boundary are zeroed.
    """
    state = np.asarray(state, dtype=float)
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    free = state + np.asarray(btilde, dtype=float) * dt + np.asarray(sigma) @ np.asarray(dW)
    new_state = np.maximum(free, 0.0)
    dy = new_state - free
    mat = deriv.matrix
    if jacobian_btilde is not None:
        mat = mat + dt * (np.asarray(jacobian_btilde, dtype=float) @ mat)
    alive = deriv.alive_mask & (new_state > 0.0)
    mat = mat * alive[:, None]
    return new_state, DerivativeState(matrix=mat, alive_mask=alive), dy


@dataclass(frozen=True)
class WeightedPathResult:
    """Per-target outputs of one weighted reference path.

    For target s_k: states[k] is the reflected state, weights[k] the
    accumulated gradient weight (the normalized stochastic integral of
    the inverse-sigma derivative), pushing[k] the discounted penalty on
    the regulator over (t, s_k], pushing_weights[k] its initial-state
    derivative.  The raw grid path and derivative norms come along when
    recorded.
    """

    targets: np.ndarray
    states: np.ndarray
    weights: np.ndarray
    pushing: np.ndarray
    pushing_weights: np.ndarray
    path: Optional[DiscretePath] = None
    deriv_norms: Optional[np.ndarray] = None


def simulate_weighted_path(
    stream: RngStream,
    ref: ReferenceProcess,
    spec: ProblemSpec,
    t: float,
    x,
    s_targets: Sequence[float],
    steps_per_interval: Optional[int] = None,
    record_path: bool = False,
) -> WeightedPathResult:
    """Simulate one reference path with weights at the given targets.

    Targets must be sorted and lie in (t, horizon].  Each consecutive
    interval gets the same number of uniform Euler steps.  This is the
    readable single-path reference implementation; the batched
    euler_tuple_batch below is the throughput path.
    """
    if not spec.reflection_is_identity:
        raise UnsupportedCombinationError(
            "euler reference simulation supports identity reflection only"
        )
    steps = ref.steps_per_interval if steps_per_interval is None else int(steps_per_interval)
    if steps < 1:
        raise InvalidArgumentError("steps_per_interval must be >= 1")
    targets = np.asarray(s_targets, dtype=float)
    if targets.ndim != 1 or targets.size == 0:
        raise InvalidArgumentError("need at least one target time")
    if np.any(np.diff(targets) <= 0) or targets[0] <= t or targets[-1] > spec.horizon + 1e-12:
        raise InvalidArgumentError("targets must be increasing and lie in (t, horizon]")
    x = np.asarray(x, dtype=float)
    d = spec.dim
    sigma = spec.sigma
    sigma_inv = np.linalg.inv(sigma)
    kappa = spec.pushing_penalty
    beta = spec.discount

    gen = stream.generator()
    state = x.copy()
    deriv = DerivativeState.initial(d)
    ito = np.zeros(d)
    push = 0.0
    pushw = np.zeros(d)
    now = t

    out_states = np.empty((targets.size, d))
    out_weights = np.empty((targets.size, d))
    out_push = np.empty(targets.size)
    out_pushw = np.empty((targets.size, d))
    rec_t, rec_x, rec_y, rec_dn = [now], [state.copy()], [np.zeros(d)], [float(np.abs(deriv.matrix).max())]
    y_accum = np.zeros(d)

    for k, s_k in enumerate(targets):
        dt = (s_k - now) / steps
        for _ in range(steps):
            db = gen.standard_normal(d) * np.sqrt(dt)
            btilde = ref.drift_at(spec, state)
            jac = ref.jacobian_at(spec, state)
            # weight integrand uses the pre-step derivative (left endpoint)
            ito = ito + (sigma_inv @ deriv.matrix).T @ db
            disc = np.exp(-beta * (now - t))
            mat_free = deriv.matrix if jac is None else deriv.matrix + dt * (jac @ deriv.matrix)
            state, deriv_new, dy = euler_reference_step(
                state, deriv, btilde, jac, sigma, db, dt
            )
            push += disc * float(kappa @ dy)
            pushw = pushw + disc * (kappa @ (deriv_new.matrix - mat_free))
            deriv = deriv_new
            now += dt
            if record_path:
                y_accum = y_accum + dy
                rec_t.append(now)
                rec_x.append(state.copy())
                rec_y.append(y_accum.copy())
                rec_dn.append(float(np.abs(deriv.matrix).max()))
        now = float(s_k)
        out_states[k] = state
        out_weights[k] = ito / np.sqrt(max(s_k - t, MIN_DT))
        out_push[k] = push
        out_pushw[k] = pushw

    path = None
    dnorms = None
    if record_path:
        path = DiscretePath(
            times=np.asarray(rec_t),
            states=np.asarray(rec_x),
            regulator=np.asarray(rec_y),
        )
        dnorms = np.asarray(rec_dn)
    return WeightedPathResult(
        targets=targets,
        states=out_states,
        weights=out_weights,
        pushing=out_push,
        pushing_weights=out_pushw,
        path=path,
        deriv_norms=dnorms,
    )


def _drift_batch(ref: ReferenceProcess, spec: ProblemSpec, states: np.ndarray) -> np.ndarray:
    if ref.drift is None:
        return np.broadcast_to(spec.drift_base, states.shape)
    return np.asarray(ref.drift(states), dtype=float)


def _jacobian_batch(ref: ReferenceProcess, spec: ProblemSpec, states: np.ndarray):
    if ref.jacobian is None:
        if ref.drift is not None:
            raise InvalidArgumentError(
                "state-dependent drift requires an analytic jacobian"
            )
        return None
    return np.asarray(ref.jacobian(states), dtype=float)


def euler_tuple_batch(
    gen: np.random.Generator,
    spec: ProblemSpec,
    ref: ReferenceProcess,
    t,
    x,
    s,
    want_terminal: bool,
):
    """Vectorized weighted paths from (t_i, x_i) to s_i (and on to T).

    Each path gets steps_per_interval uniform steps on (t_i, s_i), plus
    the same count on (s_i, T) when the terminal segment is requested.
    Drift/jacobian callables must accept batched states (m, d).  Returns
    a dict with z_s, weight_s and, when want_terminal, z_T, weight_T,
    push_T, pushw_T.  Draws one (m, d) normal block per step, in step
    order, so results are reproducible for a fixed generator.
    """
    if not spec.reflection_is_identity:
        raise UnsupportedCombinationError(
            "euler reference simulation supports identity reflection only"
        )
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    m, d = x.shape
    steps = ref.steps_per_interval
    sigma = spec.sigma
    sigma_inv = np.linalg.inv(sigma)
    kappa = spec.pushing_penalty
    beta = spec.discount
    track_push = want_terminal and bool(np.any(kappa > 0))

    state = x.copy()
    deriv = np.broadcast_to(np.eye(d), (m, d, d)).copy()
    alive = np.ones((m, d), dtype=bool)
    ito = np.zeros((m, d))
    push = np.zeros(m)
    pushw = np.zeros((m, d))
    now = t.copy()

    def _run_segment(until):
        nonlocal state, deriv, alive, ito, push, pushw, now
        dt = (until - now) / steps
        sqdt = np.sqrt(np.maximum(dt, 0.0))
        for _ in range(steps):
            db = gen.standard_normal((m, d)) * sqdt[:, None]
            drift = _drift_batch(ref, spec, state)
            jac = _jacobian_batch(ref, spec, state)
            sd = np.einsum("ab,mbj->maj", sigma_inv, deriv)
            ito += np.einsum("mij,mi->mj", sd, db)
            if track_push:
                disc = np.exp(-beta * (now - t))
            free = state + drift * dt[:, None] + db @ sigma.T
            new_state = np.maximum(free, 0.0)
            if track_push:
                push += disc * ((new_state - free) @ kappa)
            mat_free = deriv if jac is None else deriv + dt[:, None, None] * np.einsum(
                "mij,mjk->mik", jac, deriv
            )
            alive = alive & (new_state > 0.0)
            new_deriv = mat_free * alive[:, :, None]
            if track_push:
                pushw += disc[:, None] * np.einsum("i,mij->mj", kappa, new_deriv - mat_free)
            state = new_state
            deriv = new_deriv
            now = now + dt

    _run_segment(s)
    out = {
        "z_s": state.copy(),
        "weight_s": ito / np.sqrt(np.maximum(s - t, MIN_DT))[:, None],
    }
    if want_terminal:
        horizon = np.full(m, spec.horizon)
        _run_segment(horizon)
        out["z_T"] = state
        out["weight_T"] = ito / np.sqrt(np.maximum(spec.horizon - t, MIN_DT))[:, None]
        out["push_T"] = push
        out["pushw_T"] = pushw
    return out
