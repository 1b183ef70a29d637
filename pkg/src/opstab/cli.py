"""Command-line entry point.

Subcommands: train, evaluate, attack, jacobian, selftest, generate-data.
Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from . import autodiff as ad
from . import deeponet as dn
from . import evaluation as ev
from . import problems as pb
from . import sampling as sp
from . import solvers as sv
from . import training as tr
from .attacks import AttackConfig, attack_physics_loss, project
from .config import RunConfig, ValidationError, parse_config, write_config


def _load_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    return parse_config(path)


def _ensure_outdir(rc: RunConfig) -> str:
    os.makedirs(rc.output_dir, exist_ok=True)
    return rc.output_dir


def _load_model(path, rc: RunConfig):
    params, seed, step = dn.load_checkpoint(path)
    if params.arch != rc.arch:
        raise ValidationError(
            f"checkpoint {path} architecture {params.arch} does not match "
            f"the configured architecture {rc.arch}")
    return params


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_train(args) -> int:
    rc = _load_config(args.config)
    if args.mode:
        rc = type(rc)(**{**rc.__dict__, "mode": args.mode})
    out = _ensure_outdir(rc)
    write_config(os.path.join(out, "resolved_config.ini"), rc)
    cfg = rc.train_config()

    sink_state = {"last": time.time()}

    def sink(entry, params):
        if rc.checkpoint_every and entry.step % rc.checkpoint_every == 0:
            dn.save_checkpoint(
                os.path.join(out, f"checkpoint_{rc.mode}_step{entry.step}.npz"),
                params, rc.seed, entry.step)
        if args.verbose and (entry.step % 200 == 0
                             or time.time() - sink_state["last"] > 10):
            sink_state["last"] = time.time()
            print(f"step {entry.step} [{entry.phase}] total={entry.total:.3e}",
                  flush=True)

    runner = tr.train if rc.mode == "stable" else tr.train_baseline
    result = runner(cfg, progress_sink=sink)
    ckpt = os.path.join(out, f"checkpoint_{rc.mode}.npz")
    dn.save_checkpoint(ckpt, result.params, rc.seed, cfg.steps)
    tr.write_step_log(os.path.join(out, f"step_log_{rc.mode}.csv"), result.log)
    print(f"trained {rc.mode} model -> {ckpt}")
    return 0


def cmd_evaluate(args) -> int:
    rc = _load_config(args.config)
    out = _ensure_outdir(rc)
    models = {
        "baseline": _load_model(args.baseline, rc),
        "stable": _load_model(args.stable, rc),
    }
    opts = rc.eval_options
    datasets = ev.build_eval_datasets(
        rc.problem, models[opts.attack_model], opts.n_samples, rc.attack,
        seed=rc.seed + 1_000_000, eval_points=opts.eval_points)
    report = ev.stability_report(models, datasets,
                                 spectral_functions=opts.spectral_functions,
                                 power_tol=opts.power_tol,
                                 power_max_iter=opts.power_max_iter)
    ev.write_summary_csv(os.path.join(out, "summary.csv"), report)
    ev.write_errors_csv(os.path.join(out, "errors.csv"), report)
    ev.write_plot_data(out, rc.problem, report, datasets.y_grid,
                       sample_ids=tuple(range(opts.plot_samples)))
    for row in report.summary_rows:
        print(f"{row['experiment']:>16} {row['model']:>9} {row['dataset']:>10} "
              f"rel_l2={row['mean_rel_l2']:.4f} "
              f"spec_norm={row['mean_spectral_norm']:.4f}")
    print(f"wrote summary.csv, errors.csv, plot data -> {out}")
    return 0


def cmd_attack(args) -> int:
    rc = _load_config(args.config)
    out = _ensure_outdir(rc)
    params = _load_model(args.checkpoint, rc)
    n = args.n_samples or min(rc.eval_options.n_samples, 20)
    y_grid = pb.eval_grid(rc.problem, rc.eval_options.eval_points)
    trace_path = os.path.join(out, "attack_traces.csv")
    inputs_path = os.path.join(out, "attacked_inputs.csv")
    with open(trace_path, "w", newline="") as tf, \
            open(inputs_path, "w", newline="") as inf:
        tw = csv.writer(tf)
        tw.writerow(["sample_id", "iteration", "loss"])
        iw = csv.writer(inf)
        iw.writerow(["sample_id", "sensor_index", "x", "f", "f_tilde"])
        for i in range(n):
            sample = pb.sample_input(rc.problem, rc.seed + 1_000_000 + i)
            u_true = ev.reference_solution(rc.problem, sample, y_grid)
            from .attacks import attack_solution_error
            f_tilde, trace = attack_solution_error(params, sample.values,
                                                   u_true, y_grid, rc.attack)
            for it, loss in enumerate(trace.loss_per_iter):
                tw.writerow([i, it, repr(float(loss))])
            xs = sample.sensor_xs
            xcol = xs if xs.ndim == 1 else xs[:, 0]
            for j in range(len(sample.values)):
                iw.writerow([i, j, xcol[j], repr(sample.values[j]),
                             repr(f_tilde[j])])
    print(f"wrote {trace_path} and {inputs_path}")
    return 0


def cmd_jacobian(args) -> int:
    rc = _load_config(args.config)
    out = _ensure_outdir(rc)
    params = _load_model(args.checkpoint, rc)
    opts = rc.eval_options
    y_grid = pb.eval_grid(rc.problem, opts.eval_points)
    path = os.path.join(out, "jacobian_norms.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "spectral_norm", "iterations_used",
                         "residual"])
        norms = []
        for i in range(opts.spectral_functions):
            sample = pb.sample_input(rc.problem, rc.seed + 2_000_000 + i)
            est = ev.jacobian_spectral_norm(params, sample.values, y_grid,
                                            tol=opts.power_tol,
                                            max_iter=opts.power_max_iter)
            norms.append(est.spectral_norm)
            writer.writerow([i, repr(est.spectral_norm), est.iterations_used,
                             repr(est.residual)])
    print(f"mean spectral norm over {len(norms)} inputs: {np.mean(norms):.6g}")
    print(f"wrote {path}")
    return 0


def cmd_generate_data(args) -> int:
    rc = _load_config(args.config)
    out = _ensure_outdir(rc)
    params = _load_model(args.checkpoint, rc)
    opts = rc.eval_options
    datasets = ev.build_eval_datasets(rc.problem, params, opts.n_samples,
                                      rc.attack, seed=rc.seed + 1_000_000,
                                      eval_points=opts.eval_points)
    m = rc.problem.sensor_count
    for name, pairs in (("base", datasets.base),
                        ("robustness", datasets.robustness)):
        with open(os.path.join(out, f"inputs_{name}.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"f{j}" for j in range(m)]
                            + ["kind", "seed", "length_scale"])
            for pair in pairs:
                meta = pair.sample.meta
                writer.writerow([repr(v) for v in pair.sample.values]
                                + [meta.get("kind", ""), meta.get("seed", ""),
                                   meta.get("length_scale", "")])
        with open(os.path.join(out, f"solutions_{name}.csv"), "w",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"u{j}" for j in range(len(datasets.y_grid))])
            for pair in pairs:
                writer.writerow([repr(v) for v in pair.u_true])
    grid = datasets.y_grid
    with open(os.path.join(out, "eval_grid.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        if grid.ndim == 1:
            writer.writerow(["x"])
            writer.writerows([[x] for x in grid])
        else:
            writer.writerow(["x", "t"])
            writer.writerows(grid.tolist())
    print(f"wrote datasets for {opts.n_samples} samples -> {out}")
    return 0


# --------------------------------------------------------------------------
# selftest: fast oracle suite
# --------------------------------------------------------------------------

def _selftest_checks():
    rng = np.random.default_rng(0)

    def gradient_check():
        arch = dn.ArchSpec((10, 12, 12), (1, 12, 12))
        params = dn.glorot_init(arch, 0)
        f = rng.standard_normal(10)
        coords = np.array([0.3, 0.7])
        g = dn.forward_grad_f(params, f, coords)
        h = 1e-5
        worst = 0.0
        for j in range(10):
            fp, fm = f.copy(), f.copy()
            fp[j] += h
            fm[j] -= h
            fd = (dn.forward(params, fp, coords).sum()
                  - dn.forward(params, fm, coords).sum()) / (2 * h)
            worst = max(worst, abs(fd - g[j]) / max(abs(fd), 1e-12))
        return worst < 1e-5

    def second_derivative_check():
        net = lambda p, f, y: ad.mul(ad.mul(y, y), y)
        return abs(ad.second_coordinate_derivative(net, None, None, [2.0], 0)
                   - 12.0) < 1e-12

    def poisson_solver_check():
        sol = sv.solve_poisson_1d_fd(lambda x: np.pi ** 2 * np.sin(np.pi * x),
                                     1001)
        exact = np.sin(np.pi * np.linspace(0, 1, 1001))
        return np.abs(sol.values - exact).max() < 1e-5

    def helmholtz_solver_check():
        sol = sv.solve_helmholtz_neumann_fd(
            lambda x: (2 + np.pi ** 2) * np.cos(np.pi * x), 1001)
        exact = np.cos(np.pi * np.linspace(0, 1, 1001))
        return np.abs(sol.values - exact).max() < 1e-4

    def heat_solver_check():
        sol = sv.solve_heat_fd("heat_ic", lambda x: np.sin(np.pi * x),
                               0.01, 201, 201)
        x, t = np.meshgrid(np.linspace(0, 1, 201), np.linspace(0, 1, 201))
        exact = np.exp(-0.01 * np.pi ** 2 * t) * np.sin(np.pi * x)
        return np.abs(sol.values - exact).max() < 1e-4

    def rk45_check():
        grid = np.linspace(0, 1, 50)
        sol = sv.solve_ode_rk45(lambda x: np.cos(np.pi * x), grid)
        return np.abs(sol.values - np.sin(np.pi * grid) / np.pi).max() < 1e-6

    def projection_check():
        cfg_inf = AttackConfig(epsilon=0.1, norm="linf", n_iter=0)
        cfg_l2 = AttackConfig(epsilon=1.0, norm="l2", n_iter=0)
        a = rng.standard_normal(20)
        b = a + rng.standard_normal(20)
        p1 = project(b, a, cfg_inf)
        ok = np.array_equal(project(p1, a, cfg_inf), p1)
        ok &= np.max(np.abs(p1 - a)) <= 0.1 + 1e-12
        p2 = project(b, a, cfg_l2)
        ok &= np.linalg.norm(p2 - a) <= 1.0 + 1e-12
        return bool(ok)

    def jvp_vjp_check():
        arch = dn.ArchSpec((8, 10, 10), (1, 10, 10))
        params = dn.glorot_init(arch, 1)
        f = rng.standard_normal(8)
        grid = np.linspace(0, 1, 7)
        v = rng.standard_normal(8)
        w = rng.standard_normal(7)
        lhs = w @ ev.model_jvp(params, f, grid, v)
        rhs = ev.model_vjp(params, f, grid, w) @ v
        return abs(lhs - rhs) < 1e-10

    def power_iteration_check():
        arch = dn.ArchSpec((7, 9, 9), (1, 9, 9))
        params = dn.glorot_init(arch, 2)
        f = rng.standard_normal(7)
        grid = np.linspace(0, 1, 5)
        dense = np.linalg.svd(ev.jacobian_dense(params, f, grid),
                              compute_uv=False)[0]
        est = ev.jacobian_spectral_norm(params, f, grid, tol=1e-10,
                                        max_iter=2000)
        return abs(dense - est.spectral_norm) < 1e-6

    def hammersley_check():
        expected = np.array([[0, 0], [0.25, 0.5], [0.5, 0.25], [0.75, 0.75]])
        return np.array_equal(sp.hammersley(4, 2), expected)

    return [
        ("gradient_vs_finite_difference", gradient_check),
        ("second_coordinate_derivative", second_derivative_check),
        ("poisson1d_solver_vs_analytic", poisson_solver_check),
        ("helmholtz_solver_vs_analytic", helmholtz_solver_check),
        ("heat_solver_vs_analytic", heat_solver_check),
        ("rk45_vs_analytic", rk45_check),
        ("projection_properties", projection_check),
        ("jvp_vjp_consistency", jvp_vjp_check),
        ("power_iteration_vs_svd", power_iteration_check),
        ("hammersley_reference_set", hammersley_check),
    ]


def cmd_selftest(args) -> int:
    failures = 0
    for name, check in _selftest_checks():
        start = time.time()
        try:
            ok = check()
        except Exception as exc:  # noqa: BLE001 - report, don't crash
            ok = False
            print(f"{name}\tERROR\t{exc}")
            failures += 1
            continue
        status = "PASS" if ok else "FAIL"
        if not ok:
            failures += 1
        print(f"{name}\t{status}\t{time.time() - start:.2f}s")
    print(f"selftest: {'ok' if failures == 0 else f'{failures} failure(s)'}")
    return 0 if failures == 0 else 2


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opstab",
        description="Train, attack, and evaluate stability-hardened "
                    "physics-informed operator networks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one model from a config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--mode", choices=["baseline", "stable"],
                         help="override [run] mode")
    p_train.add_argument("--verbose", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("evaluate",
                            help="build datasets and the error table")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--baseline", required=True,
                        help="baseline checkpoint path")
    p_eval.add_argument("--stable", required=True,
                        help="adversarially trained checkpoint path")
    p_eval.set_defaults(func=cmd_evaluate)

    p_attack = sub.add_parser("attack",
                              help="standalone evaluation attack run")
    p_attack.add_argument("--config", required=True)
    p_attack.add_argument("--checkpoint", required=True)
    p_attack.add_argument("--n-samples", type=int, default=None)
    p_attack.set_defaults(func=cmd_attack)

    p_jac = sub.add_parser("jacobian",
                           help="Jacobian spectral norms of a checkpoint")
    p_jac.add_argument("--config", required=True)
    p_jac.add_argument("--checkpoint", required=True)
    p_jac.set_defaults(func=cmd_jacobian)

    p_self = sub.add_parser("selftest", help="fast oracle suite")
    p_self.set_defaults(func=cmd_selftest)

    p_gen = sub.add_parser("generate-data",
                           help="emit the clean and attacked datasets as CSV")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--checkpoint", required=True)
    p_gen.set_defaults(func=cmd_generate_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failure -> exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
