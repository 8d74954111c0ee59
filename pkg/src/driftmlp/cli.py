"""Command-line driver: experiment plans, single estimates, baselines,
policy grids, and sampler diagnostics.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 unsupported problem/backend combination.

Output files are deterministic for a fixed plan and seed: CSV cells are
written with repr (shortest round-trip) and wall-clock times live only
in the JSON sidecar, so rerunning a plan reproduces the CSV byte for
byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .benchmark import (
    build_open_chain,
    grid_states,
    least_control_cost,
    policy_grid,
    policy_grid_rows,
    switching_curve_reference,
    value_difference_rows,
)
from .engine import (
    MlpConfig,
    expected_sampler_calls,
    mlp_estimate,
    mlp_estimate_family,
    picard_reference_iteration,
)
from .errors import (
    InvalidArgumentError,
    NumericalFailureError,
    UnsupportedCombinationError,
)
from . import exact
from .problem import ProblemSpec, ReferenceProcess
from .skorokhod import complementarity_residual, skorokhod_map_orthant
from .streams import RngStream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_UNSUPPORTED = 4


def _parse_vector(text: str, name: str = "vector") -> np.ndarray:
    try:
        return np.array([float(p) for p in text.split(",") if p.strip() != ""])
    except ValueError as exc:
        raise InvalidArgumentError(f"cannot parse {name} {text!r}") from exc


def _parse_axis(text: str) -> np.ndarray:
    """Parse 'lo:hi:count' into a uniform axis."""
    parts = text.split(":")
    if len(parts) != 3:
        raise InvalidArgumentError(f"axis must be lo:hi:count, got {text!r}")
    try:
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise InvalidArgumentError(f"cannot parse axis {text!r}") from exc
    if count < 1 or hi < lo:
        raise InvalidArgumentError(f"bad axis {text!r}")
    return np.linspace(lo, hi, count)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _holding_cost(args, d):
    if args.h is None:
        return np.ones(d)
    h = _parse_vector(args.h, "--h")
    if h.size != d:
        raise InvalidArgumentError(f"--h needs {d} components")
    return h


def _seed_of(args) -> int:
    return 0 if args.seed is None else int(args.seed)


def _workers_of(args) -> int:
    if args.workers is not None:
        return max(1, int(args.workers))
    return max(1, os.cpu_count() or 1)


# -- experiment plans ------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPlan:
    """A sweep over states, levels and action bounds for one problem.

    Serialized form is flat JSON with these exact keys: problem (d, h,
    T), t, states, levels, C_A, replicates, seed, backend, euler_steps,
    variance_reduced, independent_ca, outputs (csv, json).
    """

    dim: int
    holding_cost: tuple
    horizon: float
    start_time: float
    states: tuple
    levels: tuple
    ca_values: tuple
    replicates: int
    seed: int
    backend: str
    euler_steps: int
    variance_reduced: bool
    independent_ca: bool
    outputs: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        known = {
            "problem", "t", "states", "levels", "C_A", "replicates", "seed",
            "backend", "euler_steps", "variance_reduced", "independent_ca",
            "outputs",
        }
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(
                f"unknown plan keys: {sorted(unknown)}; known keys are {sorted(known)}"
            )
        problem = data.get("problem")
        if not isinstance(problem, dict) or "d" not in problem or "h" not in problem:
            raise InvalidArgumentError("plan needs a problem block with keys d and h")
        extra = set(problem) - {"d", "h", "T"}
        if extra:
            raise InvalidArgumentError(f"unknown problem keys: {sorted(extra)}")
        d = int(problem["d"])
        h = tuple(float(v) for v in problem["h"])
        if len(h) != d:
            raise InvalidArgumentError(f"problem.h needs {d} components")
        horizon = float(problem.get("T", 0.2))
        states = data.get("states")
        if not isinstance(states, list):
            raise InvalidArgumentError("plan.states must be a list of states")
        norm_states = []
        for i, st in enumerate(states):
            vec = tuple(float(v) for v in st)
            if len(vec) != d:
                raise InvalidArgumentError(f"states[{i}] needs {d} components")
            if any(v < 0 for v in vec):
                raise InvalidArgumentError(f"states[{i}] must lie in the orthant")
            norm_states.append(vec)
        levels = data.get("levels")
        if not isinstance(levels, list) or not levels:
            raise InvalidArgumentError("plan.levels must be a nonempty list of [n, M]")
        norm_levels = []
        for i, pair in enumerate(levels):
            if len(pair) != 2:
                raise InvalidArgumentError(f"levels[{i}] must be an [n, M] pair")
            n, m = int(pair[0]), int(pair[1])
            if n < 1 or m < 1:
                raise InvalidArgumentError(f"levels[{i}]: need n >= 1 and M >= 1")
            norm_levels.append((n, m))
        ca = data.get("C_A")
        if not isinstance(ca, list) or not ca:
            raise InvalidArgumentError("plan.C_A must be a nonempty list")
        ca_vals = tuple(float(v) for v in ca)
        if any(v < 0 for v in ca_vals):
            raise InvalidArgumentError("plan.C_A entries must be nonnegative")
        backend = data.get("backend", "exact")
        if backend not in ("exact", "euler"):
            raise InvalidArgumentError(f"unknown backend {backend!r}")
        outputs = dict(data.get("outputs", {}))
        extra = set(outputs) - {"csv", "json"}
        if extra:
            raise InvalidArgumentError(f"unknown output keys: {sorted(extra)}")
        return cls(
            dim=d,
            holding_cost=h,
            horizon=horizon,
            start_time=float(data.get("t", 0.0)),
            states=tuple(norm_states),
            levels=tuple(norm_levels),
            ca_values=ca_vals,
            replicates=int(data.get("replicates", 5)),
            seed=int(data.get("seed", 0)),
            backend=backend,
            euler_steps=int(data.get("euler_steps", 50)),
            variance_reduced=bool(data.get("variance_reduced", False)),
            independent_ca=bool(data.get("independent_ca", False)),
            outputs=outputs,
        )

    def to_dict(self) -> dict:
        return {
            "problem": {
                "d": self.dim,
                "h": list(self.holding_cost),
                "T": self.horizon,
            },
            "t": self.start_time,
            "states": [list(s) for s in self.states],
            "levels": [list(p) for p in self.levels],
            "C_A": list(self.ca_values),
            "replicates": self.replicates,
            "seed": self.seed,
            "backend": self.backend,
            "euler_steps": self.euler_steps,
            "variance_reduced": self.variance_reduced,
            "independent_ca": self.independent_ca,
            "outputs": dict(self.outputs),
        }


def load_plan(path: str) -> ExperimentPlan:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise InvalidArgumentError(f"{path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"
        ) from exc
    return ExperimentPlan.from_dict(data)


def _plan_header(d):
    cols = [f"x{i + 1}" for i in range(d)]
    cols += ["level", "M", "C_A", "value_mean", "value_std_pct"]
    cols += [f"grad{i + 1}_mean" for i in range(d)]
    cols += [f"grad{i + 1}_std_pct" for i in range(d)]
    cols += ["sampler_calls"]
    return cols


def _estimate_row(state, level, m, ca, est):
    s = est.summary
    row = [repr(float(v)) for v in state]
    row += [str(level), str(m), repr(float(ca))]
    row += [repr(s["value_mean"]), repr(s["value_pct"])]
    row += [repr(v) for v in s["gradient_mean"]]
    row += [repr(v) for v in s["gradient_pct"]]
    row += [str(est.sampler_calls)]
    return row


def _estimate_record(state, level, m, ca, est):
    return {
        "state": list(state),
        "level": level,
        "M": m,
        "C_A": float(ca),
        "summary": est.summary,
        "replicate_values": est.values.tolist(),
        "replicate_gradients": est.gradients.tolist(),
        "sampler_calls": est.sampler_calls,
        "wall_time": est.wall_time,
    }


def run_plan(plan: ExperimentPlan, workers: int = 1, out_dir: str = "."):
    """Execute a plan and write its CSV table and JSON sidecar.

    Rows are ordered state-major, then by level pair, then by action
    bound.  Returns (csv_path, json_path).
    """
    spec = build_open_chain(
        plan.dim, plan.ca_values[0], plan.holding_cost, plan.horizon
    )
    if plan.backend == "exact":
        ref = ReferenceProcess.exact_rbm()
    else:
        ref = ReferenceProcess.euler(steps_per_interval=plan.euler_steps)
    root = RngStream(plan.seed)
    rows = []
    records = []
    for si, state in enumerate(plan.states):
        for li, (level, m) in enumerate(plan.levels):
            config = MlpConfig(
                level=level,
                branch_base=m,
                replicates=plan.replicates,
                backend=plan.backend,
                variance_reduced=plan.variance_reduced,
            )
            if plan.independent_ca:
                ests = [
                    mlp_estimate(
                        ProblemSpec.from_dict({**spec.to_dict(), "action_bound": ca}),
                        ref, config, plan.start_time, state,
                        root.child(si, li, ci), workers=workers,
                    )
                    for ci, ca in enumerate(plan.ca_values)
                ]
            else:
                ests = mlp_estimate_family(
                    spec, ref, config, plan.start_time, state,
                    plan.ca_values, root.child(si, li), workers=workers,
                )
            for ca, est in zip(plan.ca_values, ests):
                rows.append(_estimate_row(state, level, m, ca, est))
                records.append(_estimate_record(state, level, m, ca, est))
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, plan.outputs.get("csv", "results.csv"))
    json_path = os.path.join(out_dir, plan.outputs.get("json", "results.json"))
    _write_csv(csv_path, _plan_header(plan.dim), rows)
    with open(json_path, "w") as fh:
        json.dump(
            {"plan": plan.to_dict(), "workers": workers, "rows": records},
            fh, indent=2,
        )
    return csv_path, json_path


# -- subcommand handlers ---------------------------------------------------


def _cmd_run(args) -> int:
    plan = load_plan(args.plan)
    if args.seed is not None:
        plan = ExperimentPlan.from_dict({**plan.to_dict(), "seed": int(args.seed)})
    csv_path, json_path = run_plan(plan, workers=_workers_of(args), out_dir=args.out_dir)
    print(f"wrote {csv_path}")
    print(f"wrote {json_path}")
    return EXIT_OK


def _resolve_reference(args, backend):
    if getattr(args, "switching_curve", False):
        if backend == "exact":
            raise InvalidArgumentError(
                "the switching-curve reference needs --backend euler"
            )
        return switching_curve_reference(args.ca, args.euler_steps)
    if backend == "euler":
        return ReferenceProcess.euler(steps_per_interval=args.euler_steps)
    return ReferenceProcess.exact_rbm()


def _cmd_solve(args) -> int:
    d = args.d
    x = _parse_vector(args.x, "--x")
    if x.size != d:
        raise InvalidArgumentError(f"--x needs {d} components")
    h = _holding_cost(args, d)
    backend = args.backend or ("euler" if args.switching_curve else "exact")
    spec = build_open_chain(d, args.ca, h, args.T)
    ref = _resolve_reference(args, backend)
    config = MlpConfig(
        level=args.level,
        branch_base=args.M,
        replicates=args.replicates,
        backend=backend,
        variance_reduced=args.variance_reduced,
    )
    est = mlp_estimate(
        spec, ref, config, args.t, x, RngStream(_seed_of(args)),
        workers=_workers_of(args),
    )
    s = est.summary
    print(f"value {s['value_mean']:.6f} ± {s['value_pct']:.2f}% "
          f"({s['replicates']} replicates)")
    for i in range(d):
        print(f"gradient[{i + 1}] {s['gradient_mean'][i]:.6f} "
              f"± {s['gradient_pct'][i]:.2f}%")
    print(f"sampler calls per replicate: {est.sampler_calls}")
    print(f"wall time: {est.wall_time:.2f}s")
    if args.out_dir is not None:
        os.makedirs(args.out_dir, exist_ok=True)
        _write_csv(
            os.path.join(args.out_dir, "solve.csv"),
            _plan_header(d),
            [_estimate_row(tuple(x), args.level, args.M, args.ca, est)],
        )
        with open(os.path.join(args.out_dir, "solve.json"), "w") as fh:
            json.dump(
                _estimate_record(tuple(x), args.level, args.M, args.ca, est),
                fh, indent=2,
            )
    return EXIT_OK


def _cmd_baseline(args) -> int:
    d = args.d
    x = _parse_vector(args.x, "--x")
    if x.size != d:
        raise InvalidArgumentError(f"--x needs {d} components")
    h = _holding_cost(args, d)
    spec = build_open_chain(d, 1.0, h, args.T)
    res = least_control_cost(
        RngStream(_seed_of(args)), spec, args.t, x, args.dt, args.paths,
        workers=_workers_of(args),
    )
    print(f"baseline {res.mean:.6f} stderr {res.stderr:.6f} "
          f"({res.n_paths} paths, dt={res.dt:g})")
    if args.out is not None:
        header = [f"x{i + 1}" for i in range(d)] + ["mean", "stderr"]
        _write_csv(args.out, header,
                   [[repr(float(v)) for v in x] + [repr(res.mean), repr(res.stderr)]])
    return EXIT_OK


def _cmd_policy_grid(args) -> int:
    axis1 = _parse_axis(args.grid if args.grid1 is None else args.grid1)
    axis2 = _parse_axis(args.grid if args.grid2 is None else args.grid2)
    h = _holding_cost(args, 2)
    spec = build_open_chain(2, args.ca, h, args.T)
    backend = args.backend or "exact"
    ref = _resolve_reference(args, backend)
    config = MlpConfig(
        level=args.level,
        branch_base=args.M,
        replicates=args.replicates,
        backend=backend,
        variance_reduced=args.variance_reduced,
    )
    root = RngStream(_seed_of(args))
    workers = _workers_of(args)
    grads = {}
    values = {}
    for i, a in enumerate(axis1):
        for j, b in enumerate(axis2):
            est = mlp_estimate(
                spec, ref, config, args.t, np.array([a, b]),
                root.child(i, j), workers=workers,
            )
            grads[(float(a), float(b))] = est.gradient
            values[(float(a), float(b))] = est.value
            print(f"state ({a:g}, {b:g}) gradient "
                  f"({est.gradient[0]:.5f}, {est.gradient[1]:.5f})",
                  file=sys.stderr, flush=True)
    cells = policy_grid(grads, spec, states=grid_states(axis1, axis2))
    os.makedirs(args.out_dir, exist_ok=True)
    header, rows = policy_grid_rows(cells)
    grid_path = os.path.join(args.out_dir, "policy.csv")
    _write_csv(grid_path, header, rows)
    print(f"wrote {grid_path}")
    if args.value_diff:
        base = {}
        for i, a in enumerate(axis1):
            for j, b in enumerate(axis2):
                res = least_control_cost(
                    root.child(1, i, j), spec, args.t, np.array([a, b]),
                    args.dt, args.paths, workers=workers,
                )
                base[(float(a), float(b))] = res.mean
        header, rows = value_difference_rows(values, base)
        diff_path = os.path.join(args.out_dir, "value_diff.csv")
        _write_csv(diff_path, header, rows)
        print(f"wrote {diff_path}")
    return EXIT_OK


def _cmd_diag_sampler(args) -> int:
    n = args.n
    if n < 1:
        raise InvalidArgumentError("--n must be >= 1")
    gen = RngStream(_seed_of(args)).generator()
    which = args.which
    if which == "hitting-time":
        norm = gen.standard_normal(n)
        unif = gen.random(n)
        samples = np.array([
            exact._hitting_from_draws(norm[i], unif[i], args.x, args.gamma, args.sigma)
            for i in range(n)
        ])
        header, columns = ["sample"], [samples]
    elif which == "rbm-zero":
        norm = gen.standard_normal(n)
        unif = gen.random(n)
        samples = np.array([
            exact._rbm_zero_from_draws(norm[i], unif[i], args.s, args.gamma, args.sigma)
            for i in range(n)
        ])
        header, columns = ["sample"], [samples]
    elif which == "meander":
        if not 0 < args.s < args.tau:
            raise InvalidArgumentError("meander needs 0 < --s < --tau")
        norm = gen.standard_normal(n)
        unif = gen.random(n)
        samples = np.array([
            exact._meander_from_draws(norm[i], unif[i], args.s, args.tau,
                                      args.x, args.sigma)
            for i in range(n)
        ])
        header, columns = ["sample"], [samples]
    elif which == "random-time":
        unif = gen.random(n)
        samples = exact.random_time_from_uniform(unif, args.t, args.T, args.beta)
        header, columns = ["sample"], [samples]
    else:  # triple
        if args.s <= args.t:
            raise InvalidArgumentError("triple needs --s > --t")
        x = np.full((n, 1), float(args.x))
        dts = np.full(n, args.s - args.t)
        tau, z, bw = exact.draw_triples(
            gen, x, dts, np.array([args.gamma]), np.array([args.sigma])
        )
        header = ["tau", "z", "bridge_endpoint"]
        columns = [tau[:, 0], z[:, 0], bw[:, 0]]
    rows = zip(*(np.asarray(c, dtype=float) for c in columns))
    if args.out is None or args.out == "-":
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows([repr(float(v)) for v in row] for row in rows)
        out_name = "stdout"
    else:
        _write_csv(args.out, header,
                   ([repr(float(v)) for v in row] for row in rows))
        out_name = args.out
    finite = np.isfinite(columns[0])
    print(f"wrote {n} samples to {out_name}; "
          f"mean {np.mean(np.asarray(columns[0])[finite]):.6f} "
          f"std {np.std(np.asarray(columns[0])[finite]):.6f} "
          f"({int(n - finite.sum())} non-finite)",
          file=sys.stderr)
    return EXIT_OK


def _cmd_picard_diag(args) -> int:
    x = _parse_vector(args.x, "--x")
    d = x.size
    h = _holding_cost(args, d)
    spec = build_open_chain(d, args.ca, h, args.T)
    diag = picard_reference_iteration(
        spec, ReferenceProcess.exact_rbm(), args.t, x, args.iters, args.budget,
        RngStream(_seed_of(args)), time_nodes=args.time_nodes,
        space_nodes=args.space_nodes,
    )
    print("iterate  sup_diff      grad_sup_diff  probe_value")
    for k in range(args.iters):
        print(f"{k + 1:7d}  {diag.sup_diffs[k]:.6e}  "
              f"{diag.grad_sup_diffs[k]:.6e}   {diag.probe_values[k + 1]:.6f}")
    if args.out is not None:
        header = ["iterate", "sup_diff", "grad_sup_diff", "probe_value"] + [
            f"probe_grad{i + 1}" for i in range(d)
        ]
        rows = [
            [str(k + 1), repr(float(diag.sup_diffs[k])),
             repr(float(diag.grad_sup_diffs[k])),
             repr(float(diag.probe_values[k + 1]))]
            + [repr(float(g)) for g in diag.probe_gradients[k + 1]]
            for k in range(args.iters)
        ]
        _write_csv(args.out, header, rows)
        print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    """Run the always-on invariant suite at small scale."""
    failures = []

    def check(name, ok, detail=""):
        tail = f" ({detail})" if detail else ""
        print(f"{'PASS' if ok else 'FAIL'}: {name}{tail}")
        if not ok:
            failures.append(name)

    seed = _seed_of(args)
    spec = build_open_chain(2, 1.0, [1.0, 1.0])
    ref = ReferenceProcess.exact_rbm()
    x = np.array([0.4, 0.4])

    config = MlpConfig(level=2, branch_base=6, replicates=2)
    e1 = mlp_estimate(spec, ref, config, 0.0, x, RngStream(seed), workers=1)
    e2 = mlp_estimate(spec, ref, config, 0.0, x, RngStream(seed), workers=2)
    check(
        "determinism across worker counts",
        bool(np.array_equal(e1.values, e2.values)
             and np.array_equal(e1.gradients, e2.gradients)),
    )

    ok = True
    details = []
    for level, m in [(1, 5), (2, 4), (3, 3)]:
        cfg = MlpConfig(level=level, branch_base=m, replicates=1)
        est = mlp_estimate(spec, ref, cfg, 0.0, x, RngStream(seed))
        want = expected_sampler_calls(level, m)
        bound = 5 * (3 * m) ** level
        ok = ok and est.sampler_calls == want and est.sampler_calls <= bound
        details.append(f"({level},{m})={est.sampler_calls}")
    check("sampler-call count matches recursion and bound", ok, " ".join(details))

    gen = RngStream(seed, (99,)).generator()
    count = 200_000
    dts = np.full(count, 0.1)
    x0 = np.tile(x, (count, 1))
    _, _, bw = exact.draw_triples(gen, x0, dts, spec.drift_base, np.ones(2))
    w = bw / np.sqrt(0.1)
    ok = True
    for j in range(2):
        se = w[:, j].std(ddof=1) / np.sqrt(count)
        ok = ok and abs(w[:, j].mean()) <= 4 * se
    check("gradient weights have mean zero", ok)

    rng = np.random.default_rng(seed + 1)
    times = np.linspace(0.0, 1.0, 201)
    free = 0.3 + np.cumsum(
        np.concatenate([np.zeros((1, 2)), rng.normal(0, 0.07, (200, 2))]), axis=0
    )
    reflection = np.eye(2) - np.array([[0.0, 0.3], [0.2, 0.0]]).T
    path = skorokhod_map_orthant(times, free, reflection)
    resid = complementarity_residual(path)
    check(
        "oblique Skorokhod map complementarity",
        resid <= 1e-10 and np.all(path.states >= -1e-12)
        and np.all(np.diff(path.regulator, axis=0) >= -1e-15),
        f"residual {resid:.2e}",
    )

    diag = picard_reference_iteration(
        spec, ref, 0.0, x, 5, 400, RngStream(seed, (7,)),
        time_nodes=5, space_nodes=9,
    )
    gaps = diag.sup_diffs
    check(
        "grid iteration contracts",
        bool(np.all(gaps[2:] < gaps[1:-1])),
        " ".join(f"{g:.2e}" for g in gaps),
    )

    if failures:
        print(f"{len(failures)} invariant(s) failed")
        return EXIT_NUMERICAL
    print("all invariants passed")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="root seed (default 0; `run` defaults to the plan seed)")
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: available cores)")

    parser = argparse.ArgumentParser(
        prog="driftmlp",
        description="Multilevel estimator for drift control of reflected "
                    "Brownian motion on the orthant",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("run", parents=[common],
                       help="execute an experiment plan file")
    p.add_argument("--plan", required=True, help="JSON plan file")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.set_defaults(handler=_cmd_run)

    p = sub.add_parser("solve", parents=[common],
                       help="estimate value and gradient at one state")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--x", required=True, help="state, comma-separated")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--ca", type=float, default=1.0, help="action bound")
    p.add_argument("--h", default=None, help="holding costs (default: ones)")
    p.add_argument("--T", type=float, default=0.2)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--replicates", type=int, default=5)
    p.add_argument("--backend", choices=["exact", "euler"], default=None)
    p.add_argument("--euler-steps", type=int, default=50)
    p.add_argument("--variance-reduced", action="store_true")
    p.add_argument("--switching-curve", action="store_true",
                   help="use the tanh switching-curve reference drift (euler)")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(handler=_cmd_solve)

    p = sub.add_parser("baseline", parents=[common],
                       help="least-control baseline cost")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--x", required=True)
    p.add_argument("--h", default=None)
    p.add_argument("--T", type=float, default=0.2)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--paths", type=int, default=10_000)
    p.add_argument("--out", default=None, help="CSV output path")
    p.set_defaults(handler=_cmd_baseline)

    p = sub.add_parser("policy-grid", parents=[common],
                       help="policy labels over a two-dimensional state grid")
    p.add_argument("--grid", default="0:1:11", help="axis spec lo:hi:count")
    p.add_argument("--grid1", default=None, help="override for the x1 axis")
    p.add_argument("--grid2", default=None, help="override for the x2 axis")
    p.add_argument("--h", default="1,2")
    p.add_argument("--ca", type=float, default=1.0)
    p.add_argument("--level", type=int, default=4)
    p.add_argument("--M", type=int, default=48)
    p.add_argument("--replicates", type=int, default=3)
    p.add_argument("--T", type=float, default=0.2)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--backend", choices=["exact", "euler"], default=None)
    p.add_argument("--euler-steps", type=int, default=50)
    p.add_argument("--variance-reduced", action="store_true")
    p.add_argument("--switching-curve", action="store_true")
    p.add_argument("--value-diff", action="store_true",
                   help="also emit value minus baseline per state")
    p.add_argument("--dt", type=float, default=1e-4,
                   help="baseline grid step for --value-diff")
    p.add_argument("--paths", type=int, default=10_000,
                   help="baseline path count for --value-diff")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(handler=_cmd_policy_grid)

    p = sub.add_parser("diag-sampler", parents=[common],
                       help="dump sampler distributions to CSV")
    p.add_argument("which", choices=["hitting-time", "rbm-zero", "meander",
                                     "random-time", "triple"])
    p.add_argument("--x", type=float, default=1.0, help="start level")
    p.add_argument("--gamma", type=float, default=-1.0, help="drift")
    p.add_argument("--sigma", type=float, default=1.0, help="volatility")
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--s", type=float, default=0.5, help="evaluation time")
    p.add_argument("--tau", type=float, default=1.0,
                   help="conditioning hitting time for the meander")
    p.add_argument("--T", type=float, default=0.2)
    p.add_argument("--beta", type=float, default=0.0, help="discount rate")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(handler=_cmd_diag_sampler)

    p = sub.add_parser("picard-diag", parents=[common],
                       help="fixed-grid contraction diagnostic")
    p.add_argument("--x", default="0.4,0.4")
    p.add_argument("--h", default=None)
    p.add_argument("--ca", type=float, default=1.0)
    p.add_argument("--T", type=float, default=0.2)
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--iters", type=int, default=6)
    p.add_argument("--budget", type=int, default=2000,
                   help="samples per grid node per sweep")
    p.add_argument("--time-nodes", type=int, default=7)
    p.add_argument("--space-nodes", type=int, default=17)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_picard_diag)

    p = sub.add_parser("validate", parents=[common],
                       help="run the invariant suite")
    p.set_defaults(handler=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    if getattr(args, "handler", None) is None:
        parser.print_usage(file=sys.stderr)
        return EXIT_CONFIG
    try:
        return int(args.handler(args))
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except UnsupportedCombinationError as exc:
        print(f"unsupported combination: {exc}", file=sys.stderr)
        return EXIT_UNSUPPORTED


if __name__ == "__main__":
    sys.exit(main())
