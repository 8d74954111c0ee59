"""The parallel-server benchmark family.

Builders for the open-chain drift control problem (work flows down a
chain of buffers, each control component moves effort from one buffer
to the next), the least-control baseline that regulates each coordinate
against the cumulative pushing of the previous one, and policy-map
extraction from gradient estimates.

The least-control construction is exact up to the grid: coordinate i's
free path subtracts the regulator of coordinate i-1 at the same grid
time, and its own regulator is the running maximum of the negative
part, updated in one pass.  Discretization touches only the regulator
resolution and the cost quadrature, which biases the cost slightly low
on coarse grids (the regulator of a continuous path is undershot
between grid points).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, UnsupportedCombinationError
from .problem import ProblemSpec, ReferenceProcess
from .streams import RngStream

__all__ = [
    "BaselineResult",
    "PolicyCell",
    "open_chain_control_matrix",
    "build_open_chain",
    "least_control_cost",
    "least_control_paths",
    "lc_optimality_check",
    "switching_curve_reference",
    "policy_grid",
    "policy_grid_rows",
    "grid_states",
    "value_difference_rows",
]

# normals pre-drawn per block are capped at about this many doubles
_BASE_DRAW_BUDGET = 1 << 24


def open_chain_control_matrix(d: int) -> np.ndarray:
    """Control-to-drift matrix of the d-buffer chain: column k has +1 in
    row k and -1 in row k+1, so action k serves buffer k into buffer
    k+1."""
    g = np.zeros((d, d - 1))
    idx = np.arange(d - 1)
    g[idx, idx] = 1.0
    g[idx + 1, idx] = -1.0
    return g


def build_open_chain(d: int, action_bound: float, holding_cost,
                     horizon: float = 0.2) -> ProblemSpec:
    """Standard open-chain instance: unit covariance, normal reflection,
    base drift -1 per buffer, zero discount, no pushing or terminal
    cost."""
    if d < 2:
        raise InvalidArgumentError("the chain needs at least two buffers")
    h = np.asarray(holding_cost, dtype=float)
    if h.shape != (d,):
        raise InvalidArgumentError(f"holding_cost must have shape ({d},)")
    return ProblemSpec(
        dim=d,
        control_dim=d - 1,
        horizon=horizon,
        discount=0.0,
        sigma=np.eye(d),
        reflection=np.eye(d),
        drift_base=-np.ones(d),
        control_matrix=open_chain_control_matrix(d),
        action_bound=action_bound,
        holding_cost=h,
        pushing_penalty=np.zeros(d),
    )


@dataclass(frozen=True)
class BaselineResult:
    """Monte Carlo summary of the least-control cost."""

    mean: float
    stderr: float
    n_paths: int
    dt: float


def _lc_block(args):
    """Simulate one contiguous block of least-control paths.

    Each path owns stream.child(path_index), so results do not depend
    on the block partition or the worker count.  Returns per-path costs
    and, when requested, the full state and regulator paths.
    """
    (stream, spec, t, x, dt, n_steps, lo, hi, keep_paths) = args
    d = spec.dim
    gamma = spec.drift_base
    sig = spec.sigma_diag
    h = spec.holding_cost
    beta = spec.discount
    nb = hi - lo
    draws = np.empty((nb, n_steps, d))
    for p in range(nb):
        draws[p] = stream.child(lo + p).generator().standard_normal((n_steps, d))
    draws *= np.sqrt(dt)

    cumb = np.zeros((nb, d))
    y = np.zeros((nb, d))
    z = np.broadcast_to(x, (nb, d)).copy()
    cost = np.zeros(nb)
    f_prev = np.full(nb, float(h @ x))
    if keep_paths:
        z_rec = np.empty((nb, n_steps + 1, d))
        y_rec = np.empty((nb, n_steps + 1, d))
        z_rec[:, 0] = x
        y_rec[:, 0] = 0.0
    for k in range(n_steps):
        cumb += draws[:, k, :]
        el = (k + 1) * dt
        prev_reg = 0.0
        for i in range(d):
            free_i = x[i] + gamma[i] * el + sig[i] * cumb[:, i] - prev_reg
            np.maximum(y[:, i], -free_i, out=y[:, i])
            z[:, i] = free_i + y[:, i]
            prev_reg = y[:, i]
        f_new = np.exp(-beta * el) * (z @ h)
        cost += 0.5 * dt * (f_prev + f_new)
        f_prev = f_new
        if keep_paths:
            z_rec[:, k + 1] = z
            y_rec[:, k + 1] = y
    if keep_paths:
        return cost, z_rec, y_rec
    return cost, None, None


def _lc_prepare(spec, t, x, dt, n_paths):
    if not spec.reflection_is_identity:
        raise UnsupportedCombinationError(
            "least control is defined for normal reflection"
        )
    spec.sigma_diag
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,) or np.any(x < 0):
        raise InvalidArgumentError("x must be a state in the orthant")
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    if n_paths < 2:
        raise InvalidArgumentError("need at least two paths")
    t = float(t)
    if not 0.0 <= t < spec.horizon:
        raise InvalidArgumentError("t must lie in [0, horizon)")
    n_steps = max(1, int(round((spec.horizon - t) / dt)))
    dt_eff = (spec.horizon - t) / n_steps
    return x, t, n_steps, dt_eff


def least_control_cost(stream: RngStream, spec: ProblemSpec, t, x, dt: float,
                       n_paths: int, workers: int = 1) -> BaselineResult:
    """Monte Carlo cost of the least-control policy from (t, x).

    Discounted holding cost integrated by the trapezoid rule on the dt
    grid; the regulator cascade runs coordinate by coordinate.  Paths
    are simulated in blocks, one substream per path, and summed in path
    order, so the result is independent of worker count.
    """
    x, t, n_steps, dt_eff = _lc_prepare(spec, t, x, dt, n_paths)
    block = max(1, min(1024, _BASE_DRAW_BUDGET // (n_steps * spec.dim)))
    jobs = [
        (stream, spec, t, x, dt_eff, n_steps, lo, min(lo + block, n_paths), False)
        for lo in range(0, n_paths, block)
    ]
    if workers is None:
        workers = 1
    workers = max(1, min(int(workers), len(jobs)))
    if workers == 1:
        parts = [_lc_block(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_lc_block, jobs))
    costs = np.concatenate([p[0] for p in parts])
    return BaselineResult(
        mean=float(costs.mean()),
        stderr=float(costs.std(ddof=1) / np.sqrt(n_paths)),
        n_paths=int(n_paths),
        dt=dt_eff,
    )


def least_control_paths(stream: RngStream, spec: ProblemSpec, t, x, dt: float,
                        n_paths: int):
    """Full least-control paths for inspection: (times, states,
    regulators) with shapes (N+1,), (n_paths, N+1, d), (n_paths, N+1, d).
    Meant for small path counts; memory grows as n_paths * N * d."""
    x, t, n_steps, dt_eff = _lc_prepare(spec, t, x, dt, n_paths)
    _, z_rec, y_rec = _lc_block(
        (stream, spec, t, x, dt_eff, n_steps, 0, n_paths, True)
    )
    times = t + dt_eff * np.arange(n_steps + 1)
    return times, z_rec, y_rec


def lc_optimality_check(h) -> bool:
    """Least control is optimal when holding costs are nonincreasing
    along the chain."""
    h = np.asarray(h, dtype=float)
    return bool(np.all(np.diff(h) <= 0))


def _switch_drift(action_bound, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise InvalidArgumentError("the switching-curve drift is two-dimensional")
    u = 2.0 * x[..., 1] - x[..., 0]
    f = 0.5 * action_bound * (np.tanh(u) + 1.0)
    return np.stack([f, -f], axis=-1)


def _switch_jacobian(action_bound, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise InvalidArgumentError("the switching-curve drift is two-dimensional")
    u = 2.0 * x[..., 1] - x[..., 0]
    c = 0.5 * action_bound / np.cosh(u) ** 2
    jac = np.empty(x.shape[:-1] + (2, 2))
    jac[..., 0, 0] = -c
    jac[..., 0, 1] = 2.0 * c
    jac[..., 1, 0] = c
    jac[..., 1, 1] = -2.0 * c
    return jac


def switching_curve_reference(action_bound: float,
                              steps_per_interval: int = 50) -> ReferenceProcess:
    """Reference drift that serves buffer one at the full bound above
    the line x1 = 2 x2 and idles below it, smoothed by a tanh profile.
    Comes with its analytic Jacobian for the derivative recursion."""
    if action_bound <= 0:
        raise InvalidArgumentError("action_bound must be positive")
    return ReferenceProcess.euler(
        drift=partial(_switch_drift, action_bound),
        jacobian=partial(_switch_jacobian, action_bound),
        steps_per_interval=steps_per_interval,
    )


@dataclass(frozen=True)
class PolicyCell:
    """One policy-map cell: the raw gradient alongside the label so
    downstream thresholding stays reproducible."""

    state: tuple
    gradient: tuple
    diff: float
    label: str


def grid_states(axis1, axis2):
    """Row-major list of (x1, x2) grid states."""
    return [(float(a), float(b)) for a in np.asarray(axis1, dtype=float)
            for b in np.asarray(axis2, dtype=float)]


def policy_grid(estimates: Mapping, spec: ProblemSpec,
                states: Optional[Sequence] = None):
    """Label each grid state serve ("+") or idle ("x") from its gradient.

    estimates maps a state tuple to a gradient vector.  The label comes
    from the first control component: serve when the projected gradient
    is <= 0.  States without an estimate are reported absent, never
    interpolated.
    """
    if spec.dim != 2:
        raise InvalidArgumentError("policy maps are two-dimensional")
    keyed = {tuple(float(v) for v in k): np.asarray(g, dtype=float)
             for k, g in estimates.items()}
    if states is None:
        use = sorted(keyed)
    else:
        use = [tuple(float(v) for v in s) for s in states]
    cells = []
    for st in use:
        g = keyed.get(st)
        if g is None:
            cells.append(PolicyCell(state=st, gradient=(float("nan"),) * 2,
                                    diff=float("nan"), label="absent"))
            continue
        diff = float((spec.control_matrix.T @ g)[0])
        cells.append(PolicyCell(state=st, gradient=tuple(g),
                                diff=diff, label="+" if diff <= 0 else "x"))
    return cells


def policy_grid_rows(cells):
    """CSV form of a policy map: (x1, x2, d1, d2, label)."""
    header = ["x1", "x2", "d1", "d2", "label"]
    rows = [
        [repr(c.state[0]), repr(c.state[1]), repr(c.gradient[0]),
         repr(c.gradient[1]), c.label]
        for c in cells
    ]
    return header, rows


def value_difference_rows(values: Mapping, baselines: Mapping):
    """CSV form of the value-gap map: estimator value minus baseline
    per state, for states present in both maps."""
    header = ["x1", "x2", "value", "baseline", "difference"]
    vals = {tuple(float(v) for v in k): float(val) for k, val in values.items()}
    base = {tuple(float(v) for v in k): float(val) for k, val in baselines.items()}
    rows = []
    for st in sorted(vals):
        if st not in base:
            continue
        rows.append([repr(st[0]), repr(st[1]), repr(vals[st]),
                     repr(base[st]), repr(vals[st] - base[st])])
    return header, rows
