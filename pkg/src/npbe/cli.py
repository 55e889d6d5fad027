"""``npbe`` command line: ``npbe run <config>`` or ``npbe <command> --key value``."""

from __future__ import annotations

import csv
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import bifurcation, constants, radial
from .coefficients import CoefficientSet
from .config import COMMANDS, RunConfig, _raw_from_text, parse_args, parse_config, resolve_preset
from .errors import ConfigError, HypothesisViolation, NPBEError
from .linear_pbe import check_hypotheses, grid_lambda1, harmonic_lift, probe_discrete_CH, solve_linear_pbe
from .mesh import GridFunction, discrete_norm
from .picard import NPBEProblem, PicardStatus, iterate

__all__ = ["main", "execute"]

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _base(cfg: RunConfig) -> Path | None:
    return cfg.base_dir


def _fields(cfg: RunConfig):
    grid = cfg.grid()
    get = lambda key: resolve_preset(cfg[key], grid, _base(cfg))
    eps, k2, f, g = get("eps"), get("kappa2"), get("f"), get("g")
    coeffs = CoefficientSet.from_scalar(grid, eps.values, k2.values)
    return grid, coeffs, f, g


def _interior_l2(f: GridFunction) -> float:
    grid = f.grid
    v = np.zeros(grid.size, dtype=complex)
    v[grid.interior] = f.flat[grid.interior]
    return discrete_norm(GridFunction(grid, v), "L2")


def _cmd_constants(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    grid, coeffs, f, g = _fields(cfg)
    lam = grid_lambda1(grid)
    verdict = check_hypotheses(coeffs, lam.value)
    probe = math.nan
    if cfg["probe_trials"] > 0 and verdict.h2_ok and verdict.h3_ok:
        probe = probe_discrete_CH(coeffs, trials=cfg["probe_trials"], seed=cfg["seed"])
    w = harmonic_lift(g, grid)
    report = constants.build_report(
        grid, coeffs, _interior_l2(f), discrete_norm(w, "H2"), M=cfg["M"], p=cfg["p"],
        N_omega=cfg["N_omega"], grad_zeta_inf=cfg["grad_zeta"], C_H_probe=probe, lambda1=lam,
    )
    report.write_text(out / "constants.txt")
    report.write_csv(out / "constants.csv")
    summary = {k: getattr(report, k) for k in (
        "lambda1", "lambda1_lower", "payne_weinberger_ok", "C_S_lower", "C_S_upper", "p",
        "C_D_bound", "C_H_bound", "C_H_probe", "M0", "M", "schauder_ok", "banach_ok", "margin")}
    return summary, EXIT_OK


def _cmd_solve_linear(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    grid, coeffs, f, g = _fields(cfg)
    u, info = solve_linear_pbe(coeffs, f, g)
    u.to_csv(out / "solution.csv")
    return {
        "method": info.method,
        "residual": info.residual,
        "u_h2_norm": info.h2_norm,
        "u_linf": discrete_norm(u, "Linf"),
        "apriori_bound": info.apriori_bound,
        "apriori_ok": info.apriori_ok,
    }, EXIT_OK


def _cmd_solve_npbe(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    grid, coeffs, f, g = _fields(cfg)
    problem = NPBEProblem.create(coeffs, f, g, N_omega=cfg["N_omega"], grad_zeta_inf=cfg["grad_zeta"])
    M = cfg["M"]
    if M is None:
        if not cfg["require_schauder"]:
            raise ConfigError("an explicit M is required when require_schauder = false", key="M")
        M = problem.select_radius()
        if M is None:
            raise HypothesisViolation("no radius M < M0 satisfies the Schauder condition for this data")
    u, trace = iterate(problem, M, tol=cfg["tol"], max_iter=cfg["max_iter"],
                       require_schauder=cfg["require_schauder"])
    trace.to_csv(out / "picard_trace.csv")
    u.to_csv(out / "solution.csv")
    ratios = [r for r in trace.ratios if math.isfinite(r)]
    summary = {
        "status": trace.status.value,
        "reason": trace.reason,
        "iterations": trace.iterations,
        "M": M,
        "M0": problem.M0(),
        "gamma_theory": trace.gamma_theory,
        "max_observed_ratio": max(ratios) if ratios else math.nan,
        "u_star_h2_norm": discrete_norm(u, "H2"),
        "u_star_linf": discrete_norm(u, "Linf"),
        "residual_strong": trace.final_residual,
    }
    return summary, EXIT_OK if trace.status is PicardStatus.CONVERGED else EXIT_NUMERIC


def _radial_problem(cfg: RunConfig) -> radial.RadialProblem:
    return radial.RadialProblem(
        kappa_tilde=cfg["kappa_tilde"], lam=cfg["lambda"], c=cfg["c"], dimension=cfg["dimension"],
        A=cfg["A"], epsilon_reg=cfg["eps_reg"], r_max=cfg["r_max"], linear=cfg["linear"],
    )


def _cmd_radial(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    p = _radial_problem(cfg)
    tol = cfg["tol"]
    traj = radial.integrate_radial(p, tol, mode=cfg["mode"])
    zr = radial.find_zero_radii(p, traj, cfg["n_zeros"], tol=tol)
    traj.to_csv(out / "trajectory.csv")
    _write_rows(out / "zeros.csv", ["n", "R"], [(i + 1, r) for i, r in enumerate(zr.radii)])
    lin = radial.integrate_radial(p.with_(linear=True, c=p.c), tol, mode=cfg["mode"])
    y_lin = lin(traj.r)[0]
    _write_rows(out / "comparison.csv", ["r", "y", "y_linear"], zip(traj.r, traj.y, y_lin))
    n = cfg["portrait_n"]
    _write_rows(out / "phase_portrait.csv", ["y", "w", "dy", "dw", "H"],
                zip(*radial.phase_portrait(p, n=n)))
    summary = {
        "A": p.A,
        "y_target": p.y_target,
        "samples": len(traj),
        "zero_radii": ", ".join(repr(r) for r in zr.radii),
        "zeros_complete": zr.complete,
        "hamiltonian_identity_residual": radial.hamiltonian_decay_check(traj),
        "energy_violations": radial.energy_violations(traj),
    }
    if p.A == 0 and traj.sol is not None:
        try:
            r, dist = radial.return_to_start(traj)
            summary.update(period=r, return_distance=dist)
        except NPBEError:
            summary.update(period=math.nan, return_distance=math.nan)
    return summary, EXIT_OK


def _cmd_certify(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    p = _radial_problem(cfg)
    cert = radial.nonuniqueness_certificate(p, cfg["tol"])
    (out / "certificate.txt").write_text(cert.report(), encoding="utf-8")
    t = cert.nontrivial
    r = np.append(t.r[t.r < cert.R], cert.R)
    y = t(r)[0]
    _write_rows(out / "solutions.csv", ["r", "y_trivial", "y_nontrivial"],
                zip(r, np.full_like(r, cert.trivial_value), y))
    ok = cert.witness_ok and max(cert.residual_trivial, cert.residual_nontrivial) <= 1e-6
    return {
        "R": cert.R,
        "zero_index": cert.index,
        "residual_trivial": cert.residual_trivial,
        "residual_nontrivial": cert.residual_nontrivial,
        "max_deviation": cert.max_deviation,
        "mu_over_theta": cert.mu_over_theta,
        "lambda1_R": cert.lambda1_R,
        "hypothesis3_violated": cert.witness_ok,
    }, EXIT_OK if ok else EXIT_NUMERIC


def _cmd_bifurcate(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    grid = cfg.grid()
    branch = bifurcation.continue_branch(grid, cfg["s_values"], tol=cfg["tol"])
    branch.to_csv(out / "branch.csv")
    summary = {"lambda1": branch.lambda1, "points": len(branch.points)}
    if len(branch.points) > 4:
        fit = branch.fit()
        summary.update(eta_prime0=fit.eta_prime0, eta_second0=fit.eta_second0, eta2_fit=fit.eta2)
    summary.update(
        eta2_oracle=bifurcation.weakly_nonlinear_eta2(grid),
        evenness=branch.evenness(),
        oddness=branch.oddness(),
    )
    if grid.size <= 4001:
        summary["transversality_residual"] = bifurcation.transversality_residual(grid)
    if cfg["eta"] is not None:
        sols = bifurcation.solutions_for_eta(branch, cfg["eta"], cfg["c_cap"], tol=cfg["tol"])
        x = grid.axes[0]
        _write_rows(out / "solutions.csv", ["index", "x", "u_plus", "u_minus", "u_zero"],
                    ((i, x[i], *(float(s.u.real[i]) for s in sols)) for i in range(grid.size)))
        summary.update(solutions=len(sols), solution_s=sols[0].s,
                       solution_residual=max(s.newton_residual for s in sols))
    return summary, EXIT_OK


def _cmd_tangency(cfg: RunConfig, out: Path) -> tuple[dict, int]:
    grid, coeffs, f, g = _fields(cfg)
    problem = NPBEProblem.create(coeffs, f, g, N_omega=cfg["N_omega"], grad_zeta_inf=cfg["grad_zeta"])
    C_S, C_H, C_D = problem.C_S, problem.C_H, problem.C_D
    k2, meas = coeffs.kappa_sq_inf, problem.measure
    fn, wn = problem.f_norm, problem.w_h2_norm
    M0 = problem.M0()
    if not math.isfinite(M0):
        raise HypothesisViolation("kappa^2 = 0: the self-map bound is affine and has no tangency point")
    F = lambda M: constants.schauder_lhs(M, C_S, C_H, C_D, k2, meas, fn, wn)
    Ms = np.linspace(0.0, 2.0 * M0, cfg["samples"])
    _write_rows(out / "tangency.csv", ["M", "F", "identity", "F_prime"],
                ((M, F(M), M, constants.schauder_lhs_derivative(M, C_S, C_H, k2, meas)) for M in Ms))
    h = 1e-3 * M0
    fd = (F(M0 - 2 * h) - 8 * F(M0 - h) + 8 * F(M0 + h) - F(M0 + 2 * h)) / (12 * h)
    return {
        "M0": M0,
        "F_at_M0": F(M0),
        "F_prime_at_M0": constants.schauder_lhs_derivative(M0, C_S, C_H, k2, meas),
        "F_prime_at_M0_fd": fd,
        "C_S_upper": C_S,
        "C_H_bound": C_H,
        "C_D_bound": C_D,
    }, EXIT_OK


_HANDLERS = {
    "constants": _cmd_constants,
    "solve-linear": _cmd_solve_linear,
    "solve-npbe": _cmd_solve_npbe,
    "radial": _cmd_radial,
    "certify-nonunique": _cmd_certify,
    "bifurcate": _cmd_bifurcate,
    "tangency": _cmd_tangency,
}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def execute(cfg: RunConfig, stream=None) -> int:
    """Run one configured experiment, writing outputs under ``cfg.output``."""
    stream = sys.stderr if stream is None else stream
    out = cfg.output
    t0 = time.perf_counter()
    try:
        out.mkdir(parents=True, exist_ok=True)
        cfg.write_resolved(out)
    except OSError as exc:
        print(f"npbe: cannot write to {out}: {exc}", file=stream)
        return EXIT_CONFIG
    error = None
    try:
        summary, code = _HANDLERS[cfg.command](cfg, out)
    except ConfigError as exc:
        summary, code, error = {}, EXIT_CONFIG, exc
    except (OSError, NPBEError, ArithmeticError, ValueError) as exc:
        summary, code, error = {}, EXIT_NUMERIC, exc
    except Exception as exc:  # reported, never a traceback
        summary, code, error = {}, EXIT_NUMERIC, exc
    lines = [f"command = {cfg.command}", f"exit_code = {code}"]
    if error is not None:
        lines.append(f"error = {type(error).__name__}: {error}")
        print(f"npbe {cfg.command}: {type(error).__name__}: {error}", file=stream)
    lines += [f"{k} = {_fmt(v)}" for k, v in summary.items()]
    lines.append(f"wall_time_s = {time.perf_counter() - t0:.3f}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return code


USAGE = f"""usage: npbe run <config> [--key value ...]
       npbe <command> [--key value ...]

commands: {', '.join(COMMANDS)}
"""


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help", "help"):
        print(USAGE, end="")
        return EXIT_OK if argv else EXIT_CONFIG
    head, rest = argv[0], argv[1:]
    try:
        if head == "run":
            if not rest:
                raise ConfigError("run needs a config path")
            path = Path(rest[0])
            try:
                text = path.read_text(encoding="utf-8")
            except (OSError, UnicodeDecodeError) as exc:
                raise ConfigError(f"cannot read {path}: {exc}") from None
            cfg = parse_config(text, base_dir=path.parent)
            if rest[1:]:
                cfg = parse_args(None, rest[1:], base=_raw_from_text(text), base_dir=path.parent)
        elif head in COMMANDS:
            cfg = parse_args(head, rest)
        else:
            raise ConfigError(f"unknown command {head!r}; valid commands: {', '.join(COMMANDS)}")
    except ConfigError as exc:
        print(f"npbe: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
