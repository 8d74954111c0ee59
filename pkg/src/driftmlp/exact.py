"""Discretization-free simulation of reflected Brownian coordinates.

For a one-dimensional Brownian motion with drift gamma <= 0 and scale
sigma started at x >= 0 and reflected at zero, this module samples,
without any time grid:

* the first passage time to zero (inverse Gaussian law; the squared
  reciprocal-normal law when gamma = 0),
* the reflected marginal at a later time restarted from zero (running-
  maximum representation: simulate the endpoint together with the
  bridge maximum),
* the positive marginal conditioned on hitting zero exactly at a known
  later time (a meander bridge; a normal plus an independent exponential
  under a square root),

and composes them into the (hitting time, state, stopped Brownian
increment) triple that the estimator consumes, together with the
square-root-density random evaluation time that turns time integrals
into single-time evaluations.

All samplers draw from keyed `RngStream`s or from a caller-provided
Generator in a fixed canonical order, so results are reproducible bit
for bit.  The batch path runs a fused per-coordinate kernel, compiled
with numba when available (set DRIFTMLP_JIT=0 to force the pure numpy
twin; both consume identical pre-drawn blocks and agree to rounding).
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import erf, ndtri

from .errors import InvalidArgumentError, UnsupportedCombinationError
from .problem import ProblemSpec, ReferenceProcess
from .streams import RngStream

__all__ = [
    "MIN_DT",
    "CoordinateTriple",
    "SampleTuple",
    "normalizing_constant",
    "random_time_from_uniform",
    "sample_random_time",
    "sample_hitting_time",
    "sample_rbm_marginal_from_zero",
    "sample_meander_at",
    "sample_coordinate_triple",
    "assemble_tuple",
    "draw_triples",
    "triple_batch",
    "kernel_backend",
]

#: Durations are clamped below by this before square roots and divisions;
#: the random-time sampler can land arbitrarily close to the left endpoint.
MIN_DT = 1e-15

_USE_NUMBA = os.environ.get("DRIFTMLP_JIT", "1") != "0"
if _USE_NUMBA:
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a declared dependency
        numba = None
        _USE_NUMBA = False


def kernel_backend() -> str:
    """Which triple kernel is active, "numba" or "numpy"."""
    return "numba" if _USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# random evaluation time
# ---------------------------------------------------------------------------


def normalizing_constant(beta: float, delta):
    """Mass constant of the square-root-biased time density on (0, delta).

    2*sqrt(delta) for beta = 0, sqrt(pi/beta)*erf(sqrt(beta*delta))
    otherwise.  Accepts an array of durations.
    """
    if beta < 0:
        raise InvalidArgumentError("beta must be nonnegative")
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise InvalidArgumentError("delta must be positive")
    if beta == 0.0:
        out = 2.0 * np.sqrt(delta)
    else:
        out = np.sqrt(np.pi / beta) * erf(np.sqrt(beta * delta))
    return float(out) if np.ndim(out) == 0 else out


def random_time_from_uniform(u, t, T: float, beta: float):
    """Inverse-CDF transform of uniforms into evaluation times on (t, T).

    beta = 0: S = t + (T-t) u^2 (square-root CDF).  beta > 0: S - t is
    the square of a standard normal truncated to (0, sqrt(2 beta (T-t))),
    scaled by 1/(2 beta).
    """
    u = np.asarray(u, dtype=float)
    t = np.asarray(t, dtype=float)
    delta = T - t
    if beta == 0.0:
        return t + delta * u * u
    c = erf(np.sqrt(beta * delta))
    q = ndtri((1.0 + u * c) / 2.0)
    return t + q * q / (2.0 * beta)


def sample_random_time(stream: RngStream, t: float, T: float, beta: float) -> float:
    """Draw one evaluation time S in (t, T) from the keyed stream."""
    if T <= t:
        raise InvalidArgumentError("need T > t")
    if beta < 0:
        raise InvalidArgumentError("beta must be nonnegative")
    u = stream.generator().random()
    return float(random_time_from_uniform(u, t, T, beta))


# ---------------------------------------------------------------------------
# scalar transforms (shared by the scalar ops and the numpy twin kernel)
# ---------------------------------------------------------------------------


def _hitting_from_draws(n, u, x, gamma, sigma):
    """First passage time of drift-gamma scale-sigma BM from x > 0 to 0.

    gamma < 0: inverse Gaussian with mean -x/gamma and shape (x/sigma)^2,
    via the squared-normal root plus a uniform coin on the two roots.
    gamma = 0: the stable-1/2 law (x / (sigma N))^2, the infinite-mean
    limit of the same family.
    """
    if gamma == 0.0:
        if n == 0.0:
            return np.inf
        return (x / (sigma * n)) ** 2
    mu = -x / gamma
    lam = (x / sigma) ** 2
    y = n * n
    w = mu * y
    xc = mu * (1.0 + (w - np.sqrt(w * (4.0 * lam + w))) / (2.0 * lam))
    if u * (mu + xc) <= mu:
        return xc
    return mu * mu / xc


def _rbm_zero_from_draws(n, u, t, gamma, sigma):
    """Reflected marginal at duration t from a zero start.

    Equal in law to the running maximum of a Brownian motion with drift
    -gamma: draw the endpoint W ~ N(-gamma t, sigma^2 t), then the
    conditional maximum M = (W + sqrt(W^2 - 2 sigma^2 t log(1-u)))/2,
    and return M - W >= 0.
    """
    w = -gamma * t + sigma * np.sqrt(t) * n
    m = 0.5 * (w + np.sqrt(w * w - 2.0 * sigma * sigma * t * np.log(1.0 - u)))
    return m - w


def _meander_from_draws(n, u, s, tau, x, sigma):
    """Positive marginal at s of a path from x > 0 hitting 0 first at tau > s."""
    a = x * (tau - s) / tau
    v = s * (tau - s) / tau
    e = -np.log(1.0 - u)
    t1 = a + sigma * np.sqrt(v) * n
    return np.sqrt(t1 * t1 + 2.0 * sigma * sigma * v * e)


def sample_hitting_time(stream: RngStream, x: float, gamma: float, sigma: float) -> float:
    """Draw the first passage time to zero from x > 0."""
    if x <= 0:
        raise InvalidArgumentError(
            "hitting-time sampler needs x > 0; a zero start is degenerate "
            "(the caller should short-circuit it)"
        )
    if gamma > 0:
        raise InvalidArgumentError("gamma must be <= 0 (passage may fail otherwise)")
    if sigma <= 0:
        raise InvalidArgumentError("sigma must be positive")
    gen = stream.generator()
    n = gen.standard_normal()
    u = gen.random()
    return float(_hitting_from_draws(n, u, x, gamma, sigma))


def sample_rbm_marginal_from_zero(
    stream: RngStream, t: float, gamma: float, sigma: float
) -> float:
    """Draw the reflected marginal after duration t > 0 from a zero start."""
    if t <= 0:
        raise InvalidArgumentError("duration must be positive")
    if sigma <= 0:
        raise InvalidArgumentError("sigma must be positive")
    gen = stream.generator()
    n = gen.standard_normal()
    u = gen.random()
    return float(_rbm_zero_from_draws(n, u, t, gamma, sigma))


def sample_meander_at(
    stream: RngStream, s: float, tau: float, x: float, sigma: float
) -> float:
    """Draw the state at time s given the first zero hit is exactly at tau."""
    if not 0 < s < tau:
        raise InvalidArgumentError("need 0 < s < tau")
    if x <= 0:
        raise InvalidArgumentError("need x > 0")
    if sigma <= 0:
        raise InvalidArgumentError("sigma must be positive")
    gen = stream.generator()
    n = gen.standard_normal()
    u = gen.random()
    return float(_meander_from_draws(n, u, s, tau, x, sigma))


# ---------------------------------------------------------------------------
# fused per-coordinate triple kernel: numba and numpy twins
# ---------------------------------------------------------------------------


def _triple_kernel_py(x, dts, gamma, sigma, n_ig, u_ig, n_z, u_z, tau_out, z_out, bw_out):
    m, d = x.shape
    for i in range(m):
        s = dts[i]
        for j in range(d):
            xi = x[i, j]
            g = gamma[j]
            sg = sigma[j]
            if xi > 0.0:
                if g < 0.0:
                    mu = -xi / g
                    lam = (xi / sg) ** 2
                    y = n_ig[i, j] * n_ig[i, j]
                    w = mu * y
                    xc = mu * (
                        1.0 + (w - np.sqrt(w * (4.0 * lam + w))) / (2.0 * lam)
                    )
                    if u_ig[i, j] * (mu + xc) <= mu:
                        tau = xc
                    else:
                        tau = mu * mu / xc
                else:
                    nn = n_ig[i, j]
                    tau = np.inf if nn == 0.0 else (xi / (sg * nn)) ** 2
            else:
                tau = 0.0
            if tau <= s:
                trem = s - tau
                wt = -g * trem + sg * np.sqrt(trem) * n_z[i, j]
                mm = 0.5 * (
                    wt
                    + np.sqrt(
                        wt * wt - 2.0 * sg * sg * trem * np.log(1.0 - u_z[i, j])
                    )
                )
                z_out[i, j] = mm - wt
                bw_out[i, j] = -(xi + g * tau) / sg
            else:
                if tau == np.inf:
                    a = xi
                    v = s
                else:
                    a = xi * (tau - s) / tau
                    v = s * (tau - s) / tau
                e = -np.log(1.0 - u_z[i, j])
                t1 = a + sg * np.sqrt(v) * n_z[i, j]
                z = np.sqrt(t1 * t1 + 2.0 * sg * sg * v * e)
                z_out[i, j] = z
                bw_out[i, j] = (z - xi - g * s) / sg
            tau_out[i, j] = tau


if _USE_NUMBA:
    _triple_kernel_jit = numba.njit(cache=True, fastmath=False)(_triple_kernel_py)
else:  # pragma: no cover - exercised via DRIFTMLP_JIT=0 runs
    _triple_kernel_jit = None


def triple_batch(x, dts, gamma, sigma, n_ig, u_ig, n_z, u_z):
    """Transform pre-drawn blocks into (tau, z, bw) triples.

    Shapes: x, n_ig, u_ig, n_z, u_z are (m, d); dts is (m,); gamma and
    sigma are (d,).  Durations are relative to the path start; tau is too.
    bw is the Brownian increment stopped at the hit, B(tau ^ s) - B(0).
    """
    x = np.ascontiguousarray(x, dtype=float)
    dts = np.ascontiguousarray(dts, dtype=float)
    gamma = np.ascontiguousarray(gamma, dtype=float)
    sigma = np.ascontiguousarray(sigma, dtype=float)
    m, d = x.shape
    tau = np.empty((m, d))
    z = np.empty((m, d))
    bw = np.empty((m, d))
    if _USE_NUMBA:
        _triple_kernel_jit(x, dts, gamma, sigma, n_ig, u_ig, n_z, u_z, tau, z, bw)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            _triple_kernel_numpy(
                x, dts, gamma, sigma, n_ig, u_ig, n_z, u_z, tau, z, bw
            )
    return tau, z, bw


def _triple_kernel_numpy(x, dts, gamma, sigma, n_ig, u_ig, n_z, u_z, tau_out, z_out, bw_out):
    """Vectorized twin of the fused kernel (same branches via masks)."""
    g = np.broadcast_to(gamma, x.shape)
    sg = np.broadcast_to(sigma, x.shape)
    s = dts[:, None]

    drifted = g < 0.0
    mu = np.where(drifted, -x / np.where(drifted, g, -1.0), np.inf)
    lam = (x / sg) ** 2
    y = n_ig * n_ig
    w = mu * y
    with np.errstate(over="ignore"):
        xc = mu * (1.0 + (w - np.sqrt(w * (4.0 * lam + w))) / (2.0 * lam))
    tau_ig = np.where(u_ig * (mu + xc) <= mu, xc, mu * mu / xc)
    tau_levy = np.where(n_ig == 0.0, np.inf, (x / (sg * np.where(n_ig == 0.0, 1.0, n_ig))) ** 2)
    tau = np.where(x > 0.0, np.where(drifted, tau_ig, tau_levy), 0.0)

    hit = tau <= s
    trem = np.where(hit, s - tau, 0.0)
    wt = -g * trem + sg * np.sqrt(trem) * n_z
    mm = 0.5 * (wt + np.sqrt(wt * wt - 2.0 * sg * sg * trem * np.log(1.0 - u_z)))
    z_hit = mm - wt
    bw_hit = -(x + g * np.where(hit, tau, 0.0)) / sg

    infinite = np.isinf(tau)
    safe_tau = np.where(hit | infinite, 1.0, tau)
    a = np.where(infinite, x, x * (safe_tau - s) / safe_tau)
    v = np.where(infinite, s, s * (safe_tau - s) / safe_tau)
    v = np.where(hit, 0.0, v)
    e = -np.log(1.0 - u_z)
    t1 = a + sg * np.sqrt(v) * n_z
    z_me = np.sqrt(t1 * t1 + 2.0 * sg * sg * v * e)
    bw_me = (z_me - x - g * s) / sg

    tau_out[...] = tau
    z_out[...] = np.where(hit, z_hit, z_me)
    bw_out[...] = np.where(hit, bw_hit, bw_me)


def draw_triples(gen: np.random.Generator, x, dts, gamma, sigma):
    """Draw the random blocks in canonical order and run the kernel.

    Canonical order per batch: normals for the passage times, uniforms
    for the root coin, normals for the marginal, uniforms for the bridge
    maximum / exponential.  Callers that chunk a long layout must call
    this with consecutive sub-batches of the same generator.
    """
    x = np.asarray(x, dtype=float)
    dts = np.asarray(dts, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(gamma > 0):
        raise InvalidArgumentError("triple sampling needs gamma <= 0 per coordinate")
    if np.any(sigma <= 0):
        raise InvalidArgumentError("sigma must be positive per coordinate")
    if np.any(x < 0):
        raise InvalidArgumentError("states must lie in the nonnegative orthant")
    if np.any(dts <= 0):
        raise InvalidArgumentError("durations must be positive")
    m, d = x.shape
    n_ig = gen.standard_normal((m, d))
    u_ig = gen.random((m, d))
    n_z = gen.standard_normal((m, d))
    u_z = gen.random((m, d))
    return triple_batch(x, dts, gamma, sigma, n_ig, u_ig, n_z, u_z)


# ---------------------------------------------------------------------------
# composed per-coordinate and per-tuple samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoordinateTriple:
    """One coordinate's exact draw at a fixed evaluation time s.

    tau is the absolute first passage time to zero (inf if the coordinate
    never hits under a zero drift draw), z_at_s the reflected state at s,
    and b_at_tau_min_s the driving Brownian increment B(tau ^ s) - B(t).
    """

    tau: float
    z_at_s: float
    b_at_tau_min_s: float


def sample_coordinate_triple(
    stream: RngStream,
    t: float,
    s: float,
    x_j: float,
    gamma_j: float,
    sigma_j: float,
) -> CoordinateTriple:
    """Exact (tau, state, stopped increment) draw for one coordinate.

    A zero start short-circuits: tau = t, the increment is dead at zero,
    and the state is the reflected marginal restarted from the boundary.
    Ties tau = s resolve to the hit branch (a probability-zero event).
    """
    if s <= t:
        raise InvalidArgumentError("need s > t")
    if x_j < 0:
        raise InvalidArgumentError("need x_j >= 0")
    gen = stream.generator()
    tau_rel, z, bw = draw_triples(
        gen,
        np.array([[x_j]]),
        np.array([s - t]),
        np.array([gamma_j]),
        np.array([sigma_j]),
    )
    tau = t + tau_rel[0, 0]
    return CoordinateTriple(tau=float(tau), z_at_s=float(z[0, 0]), b_at_tau_min_s=float(bw[0, 0]))


@dataclass(frozen=True)
class SampleTuple:
    """One full draw of the estimator's building block at (t, x).

    Terminal-time entries are None when the problem has no pushing
    penalty and no terminal cost (the exact backend's only supported
    configuration), in which case the discounted pushing term is zero.
    """

    s: float
    z_at_s: np.ndarray
    weight_at_s: np.ndarray
    pushing_discounted: float = 0.0
    z_at_T: Optional[np.ndarray] = None
    weight_at_T: Optional[np.ndarray] = None
    pushing_weight_at_T: Optional[np.ndarray] = None


def assemble_tuple(
    stream: RngStream,
    spec: ProblemSpec,
    ref: ReferenceProcess,
    t: float,
    x,
) -> SampleTuple:
    """Draw one estimator tuple under the exact independent-RBM backend.

    The evaluation time is drawn first, then the coordinates
    independently given it; the gradient weight is the stopped Brownian
    increment scaled by 1/(sigma_j sqrt(S - t)).
    """
    if ref.backend != "exact":
        raise UnsupportedCombinationError(
            "assemble_tuple only supports the exact backend; use the "
            "time-stepping simulator for Euler references"
        )
    if not spec.sigma_is_diagonal or not spec.reflection_is_identity:
        raise UnsupportedCombinationError(
            "exact backend needs diagonal sigma and identity reflection"
        )
    if spec.has_pushing_penalty or spec.has_terminal_cost:
        raise UnsupportedCombinationError(
            "exact backend does not simulate pushing or terminal channels"
        )
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,):
        raise InvalidArgumentError(f"x must have shape ({spec.dim},)")
    if not 0 <= t < spec.horizon:
        raise InvalidArgumentError("need 0 <= t < horizon")
    sig = spec.sigma_diag
    if np.any(sig <= 0):
        raise InvalidArgumentError("diagonal sigma entries must be positive")
    gen = stream.generator()
    u = gen.random()
    s_time = float(random_time_from_uniform(u, t, spec.horizon, spec.discount))
    dt = max(s_time - t, MIN_DT)
    _, z, bw = draw_triples(
        gen, x[None, :], np.array([dt]), spec.drift_base, sig
    )
    v = bw[0] / (sig * np.sqrt(dt))
    return SampleTuple(s=s_time, z_at_s=z[0], weight_at_s=v)
