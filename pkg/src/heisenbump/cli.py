"""Batch front end: audit battery, multi-bump solves, parameter sweeps.

Commands
    verify  run the stock audit battery and write audit_report.csv
    solve   continuation solve from a config; writes the flow trace CSV
            (step,tau,energy,grad_norm,alpha_i,xi_i...,lambda_i), a
            witness file, and plain two-column plot data
    sweep   kappa(beta) tables, flatness vector-norm grids over xi-hat,
            or tau-continuation summaries, as long-format CSV
            param,value,quantity

Exit codes: 0 success, 1 usage or configuration error, 2 failed checks,
3 solver non-convergence (outputs are still written).

Configuration is TOML.  Keys by command:

    [verify]  c0_override (float, negative-control knob)
    [solve]   k, eps, lam, thetas, cutoff_radii, regions (k boxes of
              three [lo, hi] pairs); [solve.rspec] kind = constant |
              flatness | periodicSum plus that family's parameters;
              [solve.flow] tau_schedule, max_steps, gradient_tolerance,
              step_size, projection
    [sweep]   mode = kappa | flatness | continuation; kappa: betas;
              flatness: beta, coeff_a, coeff_b, coeff_c, and
              xihat_axes = three [start, stop, count] triples;
              continuation: the [solve] keys

Randomized sampling threads through --seed and floats are written with
repr(), so a fixed seed and thread count give byte-identical outputs.
"""

from __future__ import annotations

import argparse
import math
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from .audit import (AuditReport, flatness_vector, kappa_constant,
                    make_report, run_battery, summary_text, write_report_csv)
from .bubbles import constants
from .fields import GridSpec
from .functional import subcritical_exponent
from .multibump import (FlowConfig, MultiBump, _unpack, ansatz,
                        constant_curvature, covariant_energy,
                        flatness_curvature, periodic_sum_curvature,
                        subcritical_continuation, v_neighborhood_test)


def _rspec_from_config(d: dict, n: int):
    kind = d.get("kind")
    if kind == "constant":
        return constant_curvature(d.get("value", 1.0), n)
    if kind == "flatness":
        return flatness_curvature(d.get("base_point", [0.0] * (2 * n + 1)),
                                  d["beta"], d["coeff_a"], d["coeff_b"],
                                  d["coeff_c"], d.get("base_value", 1.0),
                                  d.get("floor"))
    if kind == "periodicSum":
        return periodic_sum_curvature(d["period"], d["amplitude"], d["width"],
                                      d.get("base_value", 1.0),
                                      d.get("cells", 2))
    raise ValueError(f"unsupported rspec kind {kind!r} in config")


def _grid_from_config(d: dict | None, n: int) -> GridSpec | None:
    if d is None:
        return None
    return GridSpec(n, tuple(tuple(b) for b in d["box"]),
                    tuple(d["spacing"]))


def _flow_from_config(d: dict, regions) -> FlowConfig:
    return FlowConfig(
        step_size=d.get("step_size", 1.0),
        max_steps=d.get("max_steps", 120),
        gradient_tolerance=d.get("gradient_tolerance", 2e-3),
        tau_schedule=tuple(d.get("tau_schedule", (0.1, 0.05, 0.02, 0.0))),
        projection=d.get("projection", "parameter-manifold"),
        regions=regions,
        quad_spec=_grid_from_config(d.get("grid"), 1),
        correction_spec=_grid_from_config(d.get("correction_grid"), 1))


def _fmt(v: float) -> str:
    return repr(float(v))


def cmd_verify(args, cfg: dict) -> int:
    c0 = cfg.get("verify", {}).get("c0_override")
    reports = run_battery(threads=args.threads or None, seed=args.seed,
                          c0_override=c0)
    if args.tolerance_scale != 1.0:
        reports = [make_report(r.check_name, r.computed, r.expected,
                               r.tolerance * args.tolerance_scale, r.details)
                   for r in reports]
    out = args.out / "audit_report.csv"
    write_report_csv(reports, out)
    print(summary_text(reports))
    print(f"report written to {out}")
    return 0 if all(r.passed for r in reports) else 2


def _solve_pieces(args, cfg: dict):
    sc = cfg.get("solve")
    if not sc:
        raise ValueError("solve needs a [solve] table with rspec, "
                         "regions and k")
    n = args.n
    rspec = _rspec_from_config(sc["rspec"], n)
    regions = tuple(tuple(tuple(float(v) for v in ax) for ax in reg)
                    for reg in sc["regions"])
    k = int(sc["k"])
    if len(regions) != k:
        raise ValueError(f"k = {k} but {len(regions)} regions configured")
    thetas = tuple(sc.get("thetas", [0.5] * k))
    start = ansatz(regions, rspec, constants(n), lam=sc.get("lam", 2.5),
                   thetas=thetas,
                   cutoff_radii=tuple(sc.get("cutoff_radii", (2.0, 4.0))))
    flow = _flow_from_config(sc.get("flow", {}), regions)
    eps = float(sc.get("eps", 0.35))
    return rspec, regions, k, start, flow, eps


def _write_trace(path: Path, stages, k: int, n: int, rspec, flow: FlowConfig):
    """One continuous CSV across stages.

    The energy column is the covariant estimate of the traced state (the
    physical level; the flow's own box objective is offset by the
    truncated bubble exterior).  Full-grid traces lack the evolving
    correction, so there the raw objective is written instead.
    """
    d_per = 2 * n + 3
    cols = ["step", "tau", "energy", "grad_norm"]
    for i in range(1, k + 1):
        cols += [f"alpha_{i}", f"x_{i}", f"y_{i}", f"t_{i}", f"lambda_{i}"]
    lines = [",".join(cols)]
    rows = []
    step_no = 0
    for st in stages:
        exp = subcritical_exponent(st.tau, n)
        for row in st.result.trace:
            theta = np.asarray(row[4:], dtype=float)
            bumps = _unpack(theta, n)
            if flow.projection == "parameter-manifold":
                energy = covariant_energy(MultiBump(bumps), rspec, exp,
                                          spec=flow.quad_spec)
            else:
                energy = row[2]
            cells = [str(step_no), _fmt(st.tau), _fmt(energy), _fmt(row[3])]
            for m, p in enumerate(bumps):
                cells += [_fmt(p.alpha), _fmt(p.center[0]),
                          _fmt(p.center[1]), _fmt(p.center[2]),
                          _fmt(p.scale)]
            lines.append(",".join(cells))
            rows.append((step_no, st.tau, energy, row[3], theta))
            step_no += 1
    path.write_text("\n".join(lines) + "\n")
    return rows


def _write_plot_data(outdir: Path, rows, k: int, n: int):
    d_per = 2 * n + 3
    energy_lines = ["# step energy"]
    for step_no, _, energy, _, _ in rows:
        energy_lines.append(f"{step_no} {_fmt(energy)}")
    (outdir / "energy_vs_step.txt").write_text(
        "\n".join(energy_lines) + "\n")
    for i in range(k):
        lines = ["# x y"]
        for _, _, _, _, theta in rows:
            lines.append(f"{_fmt(theta[i * d_per + 1])} "
                         f"{_fmt(theta[i * d_per + 2])}")
        (outdir / f"center_path_bump{i + 1}.txt").write_text(
            "\n".join(lines) + "\n")


def _write_witness(path: Path, stages, rspec, regions, k: int, eps: float,
                   n: int, quad_spec):
    last = stages[-1]
    final = last.result.final
    exp = subcritical_exponent(last.tau, n)
    energy = covariant_energy(final, rspec, exp, spec=quad_spec)
    ok, rep = v_neighborhood_test(final, k, eps, regions, rspec,
                                  quad_spec=quad_spec)
    lines = [f"status {last.result.status}",
             f"tau {_fmt(last.tau)}",
             f"energy {_fmt(energy)}",
             f"grad_norm {_fmt(last.result.grad_norm)}",
             f"v_neighborhood {'pass' if ok else 'fail'}",
             f"residual_norm {_fmt(rep.residual_norm)}",
             f"orthogonality {' '.join(_fmt(o) for o in rep.orthogonality)}",
             f"peak_height {_fmt(last.peak_height)}"]
    for i, p in enumerate(rep.bumps, start=1):
        lines.append(f"bump{i} alpha {_fmt(p.alpha)} center "
                     f"{_fmt(p.center[0])} {_fmt(p.center[1])} "
                     f"{_fmt(p.center[2])} lambda {_fmt(p.scale)}")
    path.write_text("\n".join(lines) + "\n")
    return ok, energy


def cmd_solve(args, cfg: dict) -> int:
    rspec, regions, k, start, flow, eps = _solve_pieces(args, cfg)
    n = args.n
    stages = subcritical_continuation(start, rspec, flow)
    rows = _write_trace(args.out / "trace.csv", stages, k, n, rspec, flow)
    _write_plot_data(args.out, rows, k, n)
    ok, energy = _write_witness(args.out / "witness.txt", stages, rspec,
                                regions, k, eps, n, flow.quad_spec)
    last = stages[-1]
    for st in stages:
        print(f"[STAGE] tau={st.tau:g} status={st.result.status} "
              f"steps={len(st.result.trace)} "
              f"grad_norm={st.result.grad_norm:.3e} "
              f"peak={st.peak_height:.3f}")
    print(f"final energy {energy:.6f}, witness "
          f"{'accepted' if ok else 'rejected'}, files in {args.out}")
    converged = last.tau == 0.0 and last.result.status == "converged"
    if not converged:
        note = {"escape": "a bump escaped its search region",
                "step-collapse": "the line search collapsed",
                "max-steps": "the step budget ran out"}.get(
                    last.result.status, last.result.status)
        print(f"non-convergence: {note} (tau={last.tau:g}); "
              "trace retained for inspection")
        return 3
    return 0


def _sweep_rows_kappa(sw: dict, n: int):
    """kappa(beta) table with a monotonicity annotation.

    The annotation records whether the sampled table is monotone in
    beta; it is informational, not a check.  The true constant is not
    monotone on (Q-2, Q): it decreases from the low end, bottoms out
    near beta = 3.2 (n = 1), and climbs toward the divergence-balanced
    limit at beta = Q.
    """
    betas = [float(b) for b in sw.get("betas", [])]
    if not betas:
        raise ValueError("kappa sweep needs a nonempty betas list")
    cst = constants(n)
    rows = [(f"beta={b:g}", kappa_constant(b, cst), "kappa") for b in betas]
    diffs = np.diff([v for _, v, _ in rows])
    monotone = bool(np.all(diffs > 0) or np.all(diffs < 0))
    rows.append(("beta-grid", float(monotone), "kappa-monotone"))
    return rows


def _sweep_rows_flatness(sw: dict, n: int):
    axes = sw.get("xihat_axes")
    if not axes or len(axes) != 2 * n + 1:
        raise ValueError("flatness sweep needs xihat_axes: one "
                         "[start, stop, count] triple per coordinate")
    grids = []
    for start, stop, count in axes:
        if int(count) < 1:
            raise ValueError("empty sweep range")
        grids.append(np.linspace(float(start), float(stop), int(count)))
    cst = constants(n)
    profile = flatness_curvature(
        np.zeros(2 * n + 1), sw["beta"], sw["coeff_a"], sw["coeff_b"],
        sw["coeff_c"], base_value=0.0).field
    rows = []
    best = (math.inf, None)
    for xi in np.stack(np.meshgrid(*grids, indexing="ij"),
                       axis=-1).reshape(-1, 2 * n + 1):
        vec = flatness_vector(profile, float(sw["beta"]), xi, cst,
                              r_max=20.0, nodes_per_panel=8, n_polar=24,
                              n_azimuth=32)
        norm = float(np.linalg.norm(vec))
        label = ";".join(f"{v:g}" for v in xi)
        rows.append((f"xihat={label}", norm, "flatness-vector-norm"))
        if norm < best[0]:
            best = (norm, label)
    rows.append((f"xihat={best[1]}", best[0], "flatness-vector-norm-min"))
    return rows


def _sweep_rows_continuation(args, cfg: dict):
    rspec, regions, k, start, flow, eps = _solve_pieces(args, cfg)
    stages = subcritical_continuation(start, rspec, flow)
    rows = []
    for st in stages:
        exp = subcritical_exponent(st.tau, args.n)
        energy = covariant_energy(st.result.final, rspec, exp,
                                  spec=flow.quad_spec)
        tag = f"tau={st.tau:g}"
        rows.append((tag, energy, "energy"))
        rows.append((tag, st.result.grad_norm, "grad_norm"))
        rows.append((tag, st.peak_height, "peak_height"))
        for i, p in enumerate(st.result.final.bumps, start=1):
            rows.append((tag, p.scale, f"lambda_{i}"))
    converged = stages[-1].tau == 0.0 \
        and stages[-1].result.status == "converged"
    return rows, converged


def cmd_sweep(args, cfg: dict) -> int:
    sw = cfg.get("sweep")
    if not sw:
        raise ValueError("sweep needs a [sweep] table with a mode")
    mode = sw.get("mode")
    converged = True
    if mode == "kappa":
        rows = _sweep_rows_kappa(sw, args.n)
    elif mode == "flatness":
        rows = _sweep_rows_flatness(sw, args.n)
    elif mode == "continuation":
        rows, converged = _sweep_rows_continuation(args, cfg)
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    out = args.out / "sweep.csv"
    lines = ["param,value,quantity"]
    for param, value, quantity in rows:
        lines.append(f"{param},{_fmt(value)},{quantity}")
        print(f"[SWEEP] {param} {quantity}={value:.8g}")
    out.write_text("\n".join(lines) + "\n")
    print(f"table written to {out}")
    if not converged:
        print("continuation did not converge at tau = 0; "
              "table retained for inspection")
        return 3
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="heisenbump",
        description="verify integral identities, run multi-bump solves, "
                    "and sweep constants")
    parser.add_argument("command", choices=("verify", "solve", "sweep"))
    parser.add_argument("--n", type=int, default=1)
    parser.add_argument("--config", type=Path, default=None)
    parser.add_argument("--out", type=Path, default=Path("."))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=0)
    parser.add_argument("--tolerance-scale", type=float, default=1.0,
                        dest="tolerance_scale")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1

    if args.n != 1:
        print("the batch commands run the n = 1 desk-scale suites only")
        return 1

    cfg = {}
    if args.config is not None:
        try:
            with open(args.config, "rb") as fh:
                cfg = tomllib.load(fh)
        except FileNotFoundError:
            print(f"config file not found: {args.config}")
            return 1
        except tomllib.TOMLDecodeError as exc:
            print(f"config file {args.config} is not valid TOML: {exc}")
            return 1

    args.out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "verify":
            return cmd_verify(args, cfg)
        if args.command == "solve":
            return cmd_solve(args, cfg)
        return cmd_sweep(args, cfg)
    except (KeyError, ValueError) as exc:
        key = f"missing config key {exc}" if isinstance(exc, KeyError) \
            else str(exc)
        print(f"configuration error: {key}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
