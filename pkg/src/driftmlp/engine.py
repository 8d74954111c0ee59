"""Full-history recursive multilevel estimator for value and gradient.

The estimator at approximation level n averages M^n independent
uncontrolled cost-to-go samples, then corrects with telescoping
Hamiltonian differences evaluated at recursively estimated gradients of
levels l and l-1, with M^(n-l) samples at correction level l.  Every
node of the recursion tree draws from its own deterministic substream,
so a replicate is a pure function of (stream, level, branch base) and
is bitwise reproducible regardless of scheduling.

The recursion is evaluated breadth first and batched: all samples that
share a structural position in the tree are processed together in one
array program, which keeps the per-sample Python overhead at a few
nanoseconds instead of a function call.  Batches are additionally
split into fixed-size blocks so peak memory stays bounded; block
boundaries are part of the stream-key layout and therefore do not
affect results.

Estimates for several action bounds can share one set of reference
tuples (the reference process does not depend on the control), which
is how the per-level comparison tables are produced cheaply.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import exact
from .errors import InvalidArgumentError, UnsupportedCombinationError
from .exact import MIN_DT
from .problem import ProblemSpec, ReferenceProcess
from .skorokhod import _drift_batch, euler_tuple_batch
from .streams import RngStream

__all__ = [
    "MlpConfig",
    "MlpEstimate",
    "mlp_estimate",
    "mlp_estimate_family",
    "mlp_estimate_variance_reduced",
    "summarize_replicates",
    "expected_sampler_calls",
    "PicardDiagnostics",
    "picard_reference_iteration",
]

# exact-backend tuples transformed per kernel slab
TUPLE_CHUNK = 1 << 19
# euler-backend paths stepped per slab (each carries steps_per_interval steps)
EULER_CHUNK = 1 << 12
# flat rows per correction-site block; the block grid is part of the
# stream-key layout, so this constant must not change between runs that
# are meant to reproduce each other
ROW_BLOCK = 1 << 21


@dataclass(frozen=True)
class MlpConfig:
    """Estimator configuration.

    level is the approximation depth n, branch_base the per-level
    branching factor M.  variance_reduced switches the level-0 gradient
    channel to its conditional-expectation form, valid only for the
    constant-drift benchmark family.
    """

    level: int
    branch_base: int
    replicates: int = 5
    backend: str = "exact"
    variance_reduced: bool = False

    def __post_init__(self):
        if self.level < 0:
            raise InvalidArgumentError("level must be >= 0")
        if self.branch_base < 1:
            raise InvalidArgumentError("branch_base must be >= 1")
        if self.replicates < 1:
            raise InvalidArgumentError("replicates must be >= 1")
        if self.backend not in ("exact", "euler"):
            raise InvalidArgumentError(
                f"backend must be 'exact' or 'euler', got {self.backend!r}"
            )


@dataclass(frozen=True)
class MlpEstimate:
    """Replicate-averaged estimate with per-replicate raw values.

    value and gradient are replicate means; values/gradients hold the
    raw replicates, summary the spread statistics.  sampler_calls is
    the deterministic per-replicate tuple count (so it obeys the level
    recursion), wall_time the elapsed seconds of the whole run that
    produced this estimate (shared across a family).
    """

    value: float
    gradient: np.ndarray
    values: np.ndarray
    gradients: np.ndarray
    summary: dict
    sampler_calls: int
    wall_time: float


def summarize_replicates(values, gradients) -> dict:
    values = np.asarray(values, dtype=float)
    gradients = np.asarray(gradients, dtype=float)
    n = values.shape[0]
    if n >= 2:
        v_std = float(np.std(values, ddof=1))
        g_std = np.std(gradients, axis=0, ddof=1)
    else:
        v_std = float("nan")
        g_std = np.full(gradients.shape[1], np.nan)
    v_mean = float(np.mean(values))
    g_mean = np.mean(gradients, axis=0)

    def _pct(std, mean):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(mean != 0.0, 100.0 * std / np.abs(mean), np.nan)

    return {
        "replicates": n,
        "value_mean": v_mean,
        "value_std": v_std,
        "value_pct": float(_pct(np.array(v_std), np.array(v_mean))),
        "gradient_mean": g_mean.tolist(),
        "gradient_std": np.asarray(g_std, dtype=float).tolist(),
        "gradient_pct": np.asarray(_pct(g_std, g_mean), dtype=float).tolist(),
    }


def expected_sampler_calls(level: int, branch_base: int) -> int:
    """Deterministic tuple count of one replicate at (level, branch_base)."""
    m = int(branch_base)
    counts = {0: 0}
    for k in range(1, int(level) + 1):
        counts[k] = m ** k + sum(
            m ** (k - l) * (1 + counts[l] + counts[l - 1]) for l in range(1, k)
        )
    return counts[int(level)]


class _Counter:
    __slots__ = ("tuples",)

    def __init__(self):
        self.tuples = 0


class _Engine:
    """Per-replicate evaluation context (immutable problem data plus a
    tuple counter)."""

    def __init__(self, spec: ProblemSpec, ref: ReferenceProcess,
                 config: MlpConfig, ca_values: np.ndarray):
        self.spec = spec
        self.ref = ref
        self.config = config
        self.ca = np.asarray(ca_values, dtype=float)
        self.n_lanes = self.ca.size
        self.d = spec.dim
        self.M = config.branch_base
        self.T = spec.horizon
        self.beta = spec.discount
        self.h = spec.holding_cost
        self.G = spec.control_matrix
        self.gamma = spec.drift_base
        self.exact_backend = config.backend == "exact"
        if self.exact_backend:
            self.sig_diag = spec.sigma_diag
        self.state_dep_drift = ref.drift is not None
        self.want_terminal = (not self.exact_backend) and (
            spec.has_pushing_penalty or spec.has_terminal_cost
        )
        self.chunk = TUPLE_CHUNK if self.exact_backend else EULER_CHUNK
        self.counter = _Counter()

    def discount_norm(self, t_flat):
        delta = np.maximum(self.T - t_flat, MIN_DT)
        return exact.normalizing_constant(self.beta, delta)

    # -- tuple draws ---------------------------------------------------

    def draw_tuples(self, gen, t_flat, x_flat, want_terminal):
        """Draw one reference tuple per row, in canonical order."""
        cnt = t_flat.size
        u = gen.random(cnt)
        s = exact.random_time_from_uniform(u, t_flat, self.T, self.beta)
        np.minimum(s, self.T - MIN_DT, out=s)
        dt = np.maximum(s - t_flat, MIN_DT)
        self.counter.tuples += cnt
        if self.exact_backend:
            _, z, bw = exact.draw_triples(gen, x_flat, dt, self.gamma, self.sig_diag)
            v = bw / (self.sig_diag[None, :] * np.sqrt(dt)[:, None])
            return {"s": s, "dt": dt, "z_s": z, "weight_s": v}
        out = euler_tuple_batch(gen, self.spec, self.ref, t_flat, x_flat, s,
                                want_terminal=want_terminal)
        out["s"] = s
        out["dt"] = dt
        return out


def _reduce_by_item(items, vcon, gcon, n_per_item, val, grad):
    """Accumulate chunk contributions into per-item lane averages."""
    starts = np.flatnonzero(np.concatenate(([True], items[1:] != items[:-1])))
    ids = items[starts]
    vs = np.add.reduceat(vcon, starts)
    gs = np.add.reduceat(gcon, starts, axis=0)
    val[ids, :] += (vs / n_per_item)[:, None]
    grad[ids, :, :] += (gs / n_per_item)[:, None, :]


def _level0_accumulate(eng: _Engine, gen, t, x, n0, val, grad):
    """Uncontrolled cost-to-go samples, averaged n0 per item.

    The contribution is lane-independent, so it is broadcast across the
    action-bound lanes.  With variance reduction the gradient channel
    takes its coordinatewise conditional-expectation form; the value
    channel is unchanged.
    """
    spec = eng.spec
    total = t.size * n0
    pos = 0
    while pos < total:
        cnt = min(eng.chunk, total - pos)
        flat = np.arange(pos, pos + cnt)
        items = flat // n0
        t_flat = t[items]
        x_flat = x[items]
        tup = eng.draw_tuples(gen, t_flat, x_flat, want_terminal=eng.want_terminal)
        z = tup["z_s"]
        v = tup["weight_s"]
        dt = tup["dt"]
        c = eng.discount_norm(t_flat)
        hz = z @ eng.h
        vcon = c * np.sqrt(dt) * hz
        if eng.config.variance_reduced:
            gcon = c[:, None] * (eng.h[None, :] * z * v)
        else:
            gcon = (c * hz)[:, None] * v
        if eng.want_terminal:
            delta_T = np.maximum(eng.T - t_flat, MIN_DT)
            disc_T = np.exp(-eng.beta * (eng.T - t_flat))
            if spec.has_pushing_penalty:
                vcon = vcon + tup["push_T"]
                gcon = gcon + tup["pushw_T"]
            if spec.has_terminal_cost:
                xi = np.asarray(spec.terminal_cost(tup["z_T"]), dtype=float)
                vcon = vcon + disc_T * xi
                gcon = gcon + ((disc_T * xi) / np.sqrt(delta_T))[:, None] * tup["weight_T"]
        _reduce_by_item(items, vcon, gcon, n0, val, grad)
        pos += cnt


def _ham_diff(eng: _Engine, z, g_hi, g_lo):
    """Per-lane Hamiltonian difference between gradient approximations.

    The running-cost term cancels in the difference; the control term
    is the action bound times the negative part of the projected
    gradient, and a state-dependent reference drift contributes its
    gap to the base drift against the gradient difference.
    """
    proj_hi = np.matmul(g_hi, eng.G)
    neg_hi = np.sum(np.minimum(proj_hi, 0.0), axis=2)
    if g_lo is None:
        neg_lo = 0.0
        dgrad = g_hi
    else:
        proj_lo = np.matmul(g_lo, eng.G)
        neg_lo = np.sum(np.minimum(proj_lo, 0.0), axis=2)
        dgrad = g_hi - g_lo
    dh = eng.ca[None, :] * (neg_hi - neg_lo)
    if eng.state_dep_drift:
        gap = eng.gamma[None, :] - _drift_batch(eng.ref, eng.spec, z)
        dh = dh + np.einsum("fad,fd->fa", dgrad, gap)
    return dh


def _diff_site(eng: _Engine, root: RngStream, pos, level, l, t, x, val, grad):
    """One correction site: M^(level-l) tuples per item, children at
    levels l and l-1 evaluated at the sampled (time, state) pairs."""
    b_items = t.size
    nl = eng.M ** (level - l)
    items_per_block = max(1, ROW_BLOCK // nl)
    for blk in range(0, -(-b_items // items_per_block)):
        lo_i = blk * items_per_block
        hi_i = min(b_items, lo_i + items_per_block)
        nb = hi_i - lo_i
        flat_n = nb * nl
        t_sub = np.repeat(t[lo_i:hi_i], nl)
        x_sub = np.repeat(x[lo_i:hi_i], nl, axis=0)
        gen = root.child(*pos, 0, l, blk).generator()
        s = np.empty(flat_n)
        dtc = np.empty(flat_n)
        z = np.empty((flat_n, eng.d))
        v = np.empty((flat_n, eng.d))
        at = 0
        while at < flat_n:
            cnt = min(eng.chunk, flat_n - at)
            sl = slice(at, at + cnt)
            tup = eng.draw_tuples(gen, t_sub[sl], x_sub[sl], want_terminal=False)
            s[sl] = tup["s"]
            dtc[sl] = tup["dt"]
            z[sl] = tup["z_s"]
            v[sl] = tup["weight_s"]
            at += cnt
        _, g_hi = _eval_batch(eng, root, pos + (l, blk), l, s, z)
        if l >= 2:
            _, g_lo = _eval_batch(eng, root, pos + (-l, blk), l - 1, s, z)
        else:
            g_lo = None
        dh = _ham_diff(eng, z, g_hi, g_lo)
        c_par = eng.discount_norm(t_sub)
        vcon = (c_par * np.sqrt(dtc))[:, None] * dh
        gcon = c_par[:, None, None] * dh[:, :, None] * v[:, None, :]
        starts = np.arange(0, flat_n, nl)
        val[lo_i:hi_i] += np.add.reduceat(vcon, starts, axis=0) / nl
        grad[lo_i:hi_i] += np.add.reduceat(gcon, starts, axis=0) / nl


def _eval_batch(eng: _Engine, root: RngStream, pos, level, t, x):
    """Estimate (value, gradient) lanes for a batch sharing one
    structural tree position.  Returns (B, A) values and (B, A, d)
    gradients; level 0 is identically zero."""
    b_items = t.size
    val = np.zeros((b_items, eng.n_lanes))
    grad = np.zeros((b_items, eng.n_lanes, eng.d))
    if level == 0 or b_items == 0:
        return val, grad
    gen = root.child(*pos, 0, 0).generator()
    _level0_accumulate(eng, gen, t, x, eng.M ** level, val, grad)
    for l in range(1, level):
        _diff_site(eng, root, pos, level, l, t, x, val, grad)
    return val, grad


def _validate_combination(spec: ProblemSpec, ref: ReferenceProcess, config: MlpConfig):
    if config.backend != ref.backend:
        raise InvalidArgumentError(
            f"config backend {config.backend!r} does not match reference "
            f"process backend {ref.backend!r}"
        )
    if not spec.reflection_is_identity:
        raise UnsupportedCombinationError(
            "the estimator supports normal (identity) reflection only"
        )
    if config.backend == "exact":
        spec.sigma_diag  # raises if sigma is not diagonal
        if ref.drift is not None:
            raise UnsupportedCombinationError(
                "exact simulation models the constant base drift only"
            )
        if spec.has_pushing_penalty or spec.has_terminal_cost:
            raise UnsupportedCombinationError(
                "pushing penalties and terminal costs need the euler backend"
            )
    if config.variance_reduced:
        if ref.drift is not None or spec.has_pushing_penalty or spec.has_terminal_cost:
            raise UnsupportedCombinationError(
                "variance reduction is valid only for the constant-drift "
                "benchmark family without pushing or terminal costs"
            )
        spec.sigma_diag


def _replicate_job(args):
    spec, ref, config, t, x, ca_values, stream, rep = args
    eng = _Engine(spec, ref, config, ca_values)
    rep_stream = stream.child(rep)
    t_arr = np.full(1, float(t))
    x_arr = np.asarray(x, dtype=float).reshape(1, -1)
    val, grad = _eval_batch(eng, rep_stream, (), config.level, t_arr, x_arr)
    return val[0], grad[0], eng.counter.tuples


def _run_replicates(spec, ref, config, t, x, ca_values, stream, workers):
    jobs = [
        (spec, ref, config, t, x, ca_values, stream, rep)
        for rep in range(config.replicates)
    ]
    if workers is None:
        workers = 1
    workers = max(1, min(int(workers), config.replicates))
    if workers == 1:
        return [_replicate_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replicate_job, jobs))


def mlp_estimate_family(
    spec: ProblemSpec,
    ref: ReferenceProcess,
    config: MlpConfig,
    t: float,
    x,
    ca_values: Sequence[float],
    stream: RngStream,
    workers: int = 1,
):
    """Estimate value and gradient for several action bounds at once.

    All lanes share the same reference tuples (the reference process is
    control-free), so the marginal cost of an extra action bound is a
    few array operations.  Returns one MlpEstimate per action bound, in
    order.  Lane estimates produced this way are correlated across
    action bounds; use separate streams when independence matters.
    """
    ca = np.asarray(list(ca_values), dtype=float)
    if ca.ndim != 1 or ca.size == 0:
        raise InvalidArgumentError("need at least one action bound")
    if np.any(~np.isfinite(ca)) or np.any(ca < 0):
        raise InvalidArgumentError("action bounds must be nonnegative and finite")
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,):
        raise InvalidArgumentError(f"x must have shape ({spec.dim},)")
    if np.any(x < 0):
        raise InvalidArgumentError("x must lie in the nonnegative orthant")
    t = float(t)
    if not 0.0 <= t < spec.horizon:
        raise InvalidArgumentError("t must lie in [0, horizon)")
    _validate_combination(spec, ref, config)

    start = time.perf_counter()
    if config.level == 0:
        results = [
            (np.zeros(ca.size), np.zeros((ca.size, spec.dim)), 0)
            for _ in range(config.replicates)
        ]
    else:
        results = _run_replicates(spec, ref, config, t, x, ca, stream, workers)
    elapsed = time.perf_counter() - start

    calls_per_rep = results[0][2]
    estimates = []
    for lane in range(ca.size):
        vals = np.array([r[0][lane] for r in results])
        grads = np.stack([r[1][lane] for r in results])
        summary = summarize_replicates(vals, grads)
        estimates.append(
            MlpEstimate(
                value=summary["value_mean"],
                gradient=np.asarray(summary["gradient_mean"]),
                values=vals,
                gradients=grads,
                summary=summary,
                sampler_calls=calls_per_rep,
                wall_time=elapsed,
            )
        )
    return estimates


def mlp_estimate(
    spec: ProblemSpec,
    ref: ReferenceProcess,
    config: MlpConfig,
    t: float,
    x,
    stream: RngStream,
    workers: int = 1,
) -> MlpEstimate:
    """Estimate value and gradient at (t, x) for the spec's own action
    bound."""
    return mlp_estimate_family(
        spec, ref, config, t, x, [spec.action_bound], stream, workers=workers
    )[0]


def mlp_estimate_variance_reduced(
    spec: ProblemSpec,
    ref: ReferenceProcess,
    config: MlpConfig,
    t: float,
    x,
    stream: RngStream,
    workers: int = 1,
) -> MlpEstimate:
    """Estimate with the variance-reduced level-0 gradient channel."""
    if not config.variance_reduced:
        config = MlpConfig(
            level=config.level,
            branch_base=config.branch_base,
            replicates=config.replicates,
            backend=config.backend,
            variance_reduced=True,
        )
    return mlp_estimate(spec, ref, config, t, x, stream, workers=workers)


# -- fixed-grid reference iteration ----------------------------------------


@dataclass(frozen=True)
class PicardDiagnostics:
    """Iterates of the fixed-grid contraction diagnostic.

    values[k] and gradients[k] are the k-th iterate tables over
    (times, *axes); iterate 0 is identically zero.  sup_diffs[k-1] is
    the sup-norm value gap between iterates k and k-1, and the probe
    arrays read the tables at the requested (t, x), which is a grid
    node by construction.
    """

    times: np.ndarray
    axes: tuple
    values: np.ndarray
    gradients: np.ndarray
    sup_diffs: np.ndarray
    grad_sup_diffs: np.ndarray
    probe_values: np.ndarray
    probe_gradients: np.ndarray


def picard_reference_iteration(
    spec: ProblemSpec,
    ref: ReferenceProcess,
    t: float,
    x,
    n_iter: int,
    mc_budget: int,
    stream: RngStream,
    time_nodes: int = 7,
    space_nodes: int = 17,
) -> PicardDiagnostics:
    """Iterate the cost-to-go fixed point on a small space-time grid.

    Starting from zero, each sweep re-estimates value and gradient at
    every grid node by Monte Carlo against the previous gradient table
    (linearly interpolated, queries clipped to the grid).  Draws are
    re-created from fixed per-node streams each sweep, so consecutive
    iterates share their randomness and the sup-norm gaps between them
    measure the contraction, not the noise.  Supported for dimension
    at most 2 with the exactly simulated reference process.
    """
    from scipy.interpolate import RegularGridInterpolator

    if spec.dim > 2:
        raise UnsupportedCombinationError(
            "the grid diagnostic is supported for dimension <= 2"
        )
    cfg = MlpConfig(level=1, branch_base=1, replicates=1, backend="exact")
    _validate_combination(spec, ref, cfg)
    if n_iter < 1:
        raise InvalidArgumentError("n_iter must be >= 1")
    if mc_budget < 1:
        raise InvalidArgumentError("mc_budget must be >= 1")
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,):
        raise InvalidArgumentError(f"x must have shape ({spec.dim},)")
    t = float(t)
    if not 0.0 <= t < spec.horizon:
        raise InvalidArgumentError("t must lie in [0, horizon)")

    eng = _Engine(spec, ref, cfg, np.array([spec.action_bound]))
    times = np.linspace(t, spec.horizon, time_nodes)
    axes = tuple(
        np.unique(np.concatenate([np.linspace(0.0, xj + 1.25, space_nodes), [xj]]))
        for xj in x
    )
    grid_shape = tuple(a.size for a in axes)
    mesh = np.meshgrid(*axes, indexing="ij")
    states = np.stack([m.ravel() for m in mesh], axis=1)
    n_states = states.shape[0]
    probe_idx = tuple(int(np.searchsorted(a, xj)) for a, xj in zip(axes, x))

    d = spec.dim
    values = np.zeros((n_iter + 1, time_nodes) + grid_shape)
    gradients = np.zeros((n_iter + 1, time_nodes) + grid_shape + (d,))
    sup_diffs = np.empty(n_iter)
    grad_sup_diffs = np.empty(n_iter)
    hi_clip = np.array([a[-1] for a in axes])

    for it in range(1, n_iter + 1):
        prev_grad = gradients[it - 1]
        interp = RegularGridInterpolator((times,) + axes, prev_grad)
        for i in range(time_nodes - 1):
            ti = times[i]
            gen = stream.child(1, i).generator()
            total = n_states * mc_budget
            vsum = np.zeros(n_states)
            gsum = np.zeros((n_states, d))
            at = 0
            while at < total:
                cnt = min(TUPLE_CHUNK, total - at)
                flat = np.arange(at, at + cnt)
                node = flat // mc_budget
                t_flat = np.full(cnt, ti)
                tup = eng.draw_tuples(gen, t_flat, states[node], want_terminal=False)
                z = tup["z_s"]
                pts = np.concatenate(
                    [tup["s"][:, None], np.clip(z, 0.0, hi_clip[None, :])], axis=1
                )
                p = interp(pts)
                ham = z @ spec.holding_cost + spec.action_bound * np.sum(
                    np.minimum(p @ spec.control_matrix, 0.0), axis=1
                )
                c = eng.discount_norm(t_flat)
                vcon = c * np.sqrt(tup["dt"]) * ham
                gcon = (c * ham)[:, None] * tup["weight_s"]
                starts = np.flatnonzero(
                    np.concatenate(([True], node[1:] != node[:-1]))
                )
                np.add.at(vsum, node[starts], np.add.reduceat(vcon, starts))
                np.add.at(gsum, node[starts], np.add.reduceat(gcon, starts, axis=0))
                at += cnt
            values[it, i] = (vsum / mc_budget).reshape(grid_shape)
            gradients[it, i] = (gsum / mc_budget).reshape(grid_shape + (d,))
        # the horizon row stays at the terminal condition: zero
        sup_diffs[it - 1] = np.max(np.abs(values[it] - values[it - 1]))
        grad_sup_diffs[it - 1] = np.max(np.abs(gradients[it] - gradients[it - 1]))

    probe_values = values[(slice(None), 0) + probe_idx]
    probe_gradients = gradients[(slice(None), 0) + probe_idx]
    return PicardDiagnostics(
        times=times,
        axes=axes,
        values=values,
        gradients=gradients,
        sup_diffs=sup_diffs,
        grad_sup_diffs=grad_sup_diffs,
        probe_values=probe_values,
        probe_gradients=probe_gradients,
    )
