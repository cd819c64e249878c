"""
Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(positivity loss, divergence, solver breakdown), 4 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .basis import BasisError, build_basis, derivative_matrix, triple_tensor
from .config import ConfigError, RunConfig, load_config, validate_config
from .domain import DomainError, carleman_probe
from .forward import ForwardError, PositivityError, SolverError, add_noise
from .io import read_dataset, write_csv, write_dataset, write_json
from .pipeline import (
    StageError,
    build_problem,
    cwf_from_config,
    grid_from_config,
    resolve_parameters,
    run_pipeline,
    run_stability_study,
    synthesize,
    truth_from_config,
)
from .solver import DivergenceError, ObjectiveSpec, convexity_probe, gradient_check
from .system import ClassViolation

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_NUMERIC", "EXIT_INVARIANT"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4
GRADIENT_TOL = 1e-6

log = logging.getLogger("dnconvex")


class InvariantViolation(RuntimeError):
    pass


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else validate_config("{}")
    if args.seed is not None:
        cfg.noise = replace(cfg.noise, seed=args.seed)
    if args.out:
        cfg.output = replace(cfg.output, directory=args.out)
    if args.dump_intermediates:
        cfg.output = replace(cfg.output, dump_intermediates=True)
    if args.bc_mode:
        cfg.system = replace(cfg.system, bc_mode=args.bc_mode)
    return cfg


def _out(cfg) -> Path:
    p = Path(cfg.output.directory)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _emit(summary: dict):
    print(json.dumps(summary, indent=2, sort_keys=True, default=float))


def _strip(report: dict) -> dict:
    return {k: v for k, v in report.items() if not k.startswith("_")}


# ---------------------------------------------------------------------------
# subcommands


def cmd_basis_report(args):
    cfg = _config(args)
    b = build_basis(cfg.basis.N)
    dm = derivative_matrix(b)
    A = dm.entries
    N = b.N
    rep = {
        "N": N,
        "gram_residual": b.gram_residual,
        "det_M": dm.det,
        "max_abs_diag_minus_one": float(np.abs(np.diag(A) - 1).max()),
        "max_abs_lower": float(np.abs(np.tril(A, -1)).max(initial=0.0)),
        "max_abs_M_Minv_minus_I": float(np.abs(A @ dm.inverse - np.eye(N)).max()),
        "max_abs_Minv": float(np.abs(dm.inverse).max()),
    }
    out = _out(cfg)
    write_csv(out / "M.csv", A)
    write_csv(out / "M_inv.csv", dm.inverse)
    write_csv(out / "B.csv", triple_tensor(b).values.reshape(N, N * N))
    write_csv(out / "psi_coefficients.csv", np.array([np.pad(e.coeffs, (0, N - e.coeffs.size)) for e in b.elements]))
    write_json(out / "basis_report.json", rep)
    _emit(rep)
    if rep["max_abs_lower"] > 1e-8 or rep["max_abs_diag_minus_one"] > 1e-8 or abs(rep["det_M"] - 1) > 1e-6:
        raise InvariantViolation("derivative matrix is not unit upper triangular")


def cmd_synth(args):
    cfg = _config(args)
    grid = grid_from_config(cfg)
    a0, stack, data = synthesize(cfg, grid)
    if cfg.noise.level > 0:
        data = add_noise(data, cfg.noise.level, cfg.noise.seed)
    out = write_dataset(_out(cfg), data, grid, a0.truth_spec,
                        extra={"source": {"eps_width": cfg.source.eps_width,
                                          "amplitude": cfg.source.amplitude}})
    if cfg.output.dump_intermediates:
        write_csv(out / "intermediates" / "a0.csv", a0.omega_values)
    _emit({"dataset": str(out), "K": data.K, "gamma_points": int(data.g0.shape[1]),
           "g0_min": float(data.g0.min()), "noise_level": data.noise_level, "seed": data.seed})


def cmd_invert(args):
    cfg = _config(args)
    if not args.data:
        raise ConfigError([("--data", "invert needs a dataset directory (see `synth`)")])
    data, grid, header = read_dataset(args.data)
    truth = None
    ts = header.get("truth_spec")
    if ts is not None:
        # the dataset carries its truth: rebuild it for error reporting only
        tcfg = replace(cfg, grid=cfg.grid, truth=replace(cfg.truth, background=ts["background"],
                                                         inclusions=ts["inclusions"]))
        from .forward import simulate

        a0 = truth_from_config(tcfg, grid)
        src = header.get("source", {})
        stack = simulate(a0, grid, src.get("eps_width", cfg.source.eps_width), data.K,
                         src.get("amplitude", cfg.source.amplitude))
        truth = (a0, stack)
    rep = run_pipeline(cfg, data=data, grid=grid, truth=truth)
    _emit(_summary(rep))


def _summary(rep):
    keys = ("basis", "parameters", "optimizer", "truth", "sigma", "noise_level")
    return {k: rep[k] for k in keys if k in rep}


def cmd_full_pipeline(args):
    cfg = _config(args)
    rep = run_pipeline(cfg)
    _emit(_summary(rep))


def _noiseless_problem(cfg):
    grid = grid_from_config(cfg)
    _, _, data = synthesize(cfg, grid)
    return build_problem(cfg, data, grid)


def cmd_probe_convexity(args):
    cfg = _config(args)
    prob = _noiseless_problem(cfg)
    params = resolve_parameters(cfg, prob.masks.m_value, max(cfg.noise.level, 1e-2))
    seed = cfg.noise.seed if args.seed is not None else 0
    o = cfg.optimizer
    spec = ObjectiveSpec(lam=params["lam"], gamma=params["gamma"], d=cfg.cwf.d, c=cfg.cwf.c,
                         s_order=o.s_order, R=args.radius or o.R)
    base = spec.__class__(**{**spec.__dict__, "lam": 0.0, "weighted": False})
    weighted = convexity_probe(spec, prob.system, prob.extension, args.pairs, seed)
    plain = convexity_probe(base, prob.system, prob.extension, args.pairs, seed)
    rep = {"weighted": weighted.as_dict(), "unweighted": plain.as_dict(),
           "weighted_at_least_as_convex": weighted.fraction_nonneg >= plain.fraction_nonneg}
    out = _out(cfg)
    write_json(out / "convexity.json", rep)
    write_csv(out / "convexity_margins.csv", np.column_stack([weighted.margins, plain.margins]),
              header="weighted,unweighted")
    _emit(rep)


def cmd_probe_carleman(args):
    cfg = _config(args)
    grid = grid_from_config(cfg)
    from .domain import build_masks

    spec = cwf_from_config(cfg)
    masks = build_masks(grid, spec)
    seed = cfg.noise.seed if args.seed is not None else 0
    rep = carleman_probe(masks, spec, trials=args.trials, lam_list=tuple(args.lams), seed=seed)
    write_json(_out(cfg) / "carleman.json", rep)
    _emit(rep)


def cmd_gradient_check(args):
    cfg = _config(args)
    prob = _noiseless_problem(cfg)
    params = resolve_parameters(cfg, prob.masks.m_value, max(cfg.noise.level, 1e-2))
    spec = ObjectiveSpec(lam=params["lam"], gamma=params["gamma"], d=cfg.cwf.d, c=cfg.cwf.c,
                         s_order=cfg.optimizer.s_order, R=cfg.optimizer.R)
    seed = cfg.noise.seed if args.seed is not None else 0
    rows = gradient_check(spec, prob.system, prob.extension, pairs=args.pairs, seed=seed)
    worst = max(r["rel_error"] for r in rows)
    rep = {"pairs": rows, "max_rel_error": worst, "tolerance": GRADIENT_TOL, "passed": worst <= GRADIENT_TOL}
    write_json(_out(cfg) / "gradient_check.json", rep)
    _emit(rep)
    if worst > GRADIENT_TOL:
        raise InvariantViolation(f"gradient check failed: relative error {worst:.3g}")


def cmd_study_stability(args):
    cfg = _config(args)
    out = run_stability_study(cfg, args.levels)
    _emit(out)


COMMANDS = {
    "basis-report": (cmd_basis_report, "derivative matrix and basis diagnostics"),
    "synth": (cmd_synth, "synthesize a DN dataset (JSON header + g0.csv, g1.csv)"),
    "invert": (cmd_invert, "reconstruct from a dataset directory"),
    "full-pipeline": (cmd_full_pipeline, "synthesize and reconstruct in one run"),
    "probe-convexity": (cmd_probe_convexity, "Bregman margins of J at random pairs"),
    "probe-carleman": (cmd_probe_carleman, "Monte-Carlo check of the weighted estimate"),
    "gradient-check": (cmd_gradient_check, "directional derivative against central differences"),
    "study-stability": (cmd_study_stability, "error against noise level with a power-law fit"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dnconvex", description=__doc__.strip().splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="base seed (noise and probes)")
        p.add_argument("--dump-intermediates", action="store_true")
        p.add_argument("--bc-mode", choices=("direct", "derivative"),
                       help="boundary coefficients from g~ itself or from its x0-derivative")
        if name == "invert":
            p.add_argument("--data", help="dataset directory written by `synth`")
        if name == "probe-convexity":
            p.add_argument("--pairs", type=int, default=100)
            p.add_argument("--radius", type=float, help="ball radius for the probe")
        if name == "probe-carleman":
            p.add_argument("--trials", type=int, default=200)
            p.add_argument("--lams", type=float, nargs="+", default=[1.0, 2.0, 3.0])
        if name == "gradient-check":
            p.add_argument("--pairs", type=int, default=5)
        if name == "study-stability":
            p.add_argument("--levels", type=float, nargs="+", default=[1e-3, 1e-2, 1e-1])
    return ap


NUMERIC = (PositivityError, DivergenceError, SolverError, FloatingPointError, np.linalg.LinAlgError)
INVARIANT = (InvariantViolation, ClassViolation, BasisError)
CONFIG = (ConfigError, DomainError, ForwardError, FileNotFoundError)


def _code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, NUMERIC):
        return EXIT_NUMERIC
    if isinstance(exc, INVARIANT):
        return EXIT_INVARIANT
    if isinstance(exc, CONFIG):
        return EXIT_CONFIG
    return EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        fn(args)
    except Exception as e:  # map every failure to a documented exit code
        code = _code_for(e)
        if isinstance(e, ConfigError):
            for path, msg in e.errors:
                print(f"config error: {path}: {msg}", file=sys.stderr)
        else:
            print(f"error: {e}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
