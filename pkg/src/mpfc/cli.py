"""Command-line driver: run | pfc | steady | decompose | rates | check."""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import traceback
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .diagnostics import COLUMNS, Ledger, fit_ledger
from .equilibrium import relax_to_steady, run_decomposition, solve_steady
from .integrators import MeanLaw, State, run
from .io import write_snapshot, write_steady

LOCK = ".mpfc.lock"


class CliError(RuntimeError):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@contextmanager
def locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliError(f"output directory {out} is locked by another run ({lock} exists)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out
    finally:
        lock.unlink(missing_ok=True)


def _load_config(args, pfc: bool = False) -> RunConfig:
    if not args.config:
        raise CliError("--config is required")
    text = Path(args.config).read_text()
    overrides = {}
    if getattr(args, "t_end", None) is not None:
        overrides["run.t_end"] = args.t_end
    if getattr(args, "dt", None) is not None:
        overrides["scheme.dt"] = args.dt
    if getattr(args, "seed", None) is not None:
        overrides["run.seed"] = args.seed
    return parse_config(text, pfc=pfc, overrides=overrides)


def _out_dir(args, cfg: RunConfig | None = None) -> Path:
    out = args.out or (cfg.out if cfg else "")
    if not out:
        raise CliError("an output directory is required (--out or [run] out)")
    return Path(out)


def _initial_state(cfg: RunConfig) -> State:
    phi0, phi1 = cfg.initial_fields()
    if cfg.scheme.scheme == "pfc_split1":
        phi1 = np.zeros_like(phi0)
    return State(cfg.grid, phi0, phi1, 0.0)


def _write_report(out: Path, report: dict) -> None:
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))


def _base_report(cfg: RunConfig, command: str) -> dict:
    return {
        "command": command, "version": __version__, "config": cfg.text, "seed": cfg.seed,
        "grid": {"dim": cfg.grid.dim, "N": cfg.grid.n, "padding_factor": str(cfg.grid.padding_factor)},
        "beta": cfg.params.beta, "epsilon": cfg.params.epsilon, "split_k": cfg.params.split_k,
        "scheme": cfg.scheme.scheme, "dt": cfg.scheme.dt, "t_end": cfg.t_end, "sample_every": cfg.sample_every,
    }


def cmd_run(args, pfc: bool = False) -> dict:
    cfg = _load_config(args, pfc=pfc)
    out = _out_dir(args, cfg)
    with locked(out):
        st = _initial_state(cfg)
        traj = run(st, cfg.params, cfg.scheme, cfg.t_end, cfg.sample_every, cfg.snapshot_every)
        ledger_path = out / "ledger.csv"
        traj.ledger.to_csv(ledger_path)
        snaps = []
        if traj.snapshots:
            (out / "snapshots").mkdir(exist_ok=True)
            for i, s in enumerate(traj.snapshots):
                name = f"snapshots/phi_{i:06d}.mpfc"
                write_snapshot(out / name, s.phi, s.t)
                write_snapshot(out / f"snapshots/phit_{i:06d}.mpfc", s.phi_t, s.t)
                snaps.append(name)
        law = traj.law
        last = traj.ledger.rows[-1]
        report = _base_report(cfg, "pfc" if pfc else "run")
        report.update({
            "pfc": pfc, "M": law.M, "a0": law.a0, "t0": law.t0, "law_beta": law.beta,
            "steps": traj.steps, "rows": len(traj.ledger), "ledger_sha256": _sha256(ledger_path),
            "snapshots": snaps, "final": {c: v for c, v in zip(COLUMNS, _row_values(last))},
        })
        _write_report(out, report)
    return {"status": "ok", "command": "pfc" if pfc else "run", "out": str(out), "steps": traj.steps,
            "rows": len(traj.ledger), "final_t": last.t, "final_pseudoE": last.pseudo_energy,
            "max_mean_law_deviation": _mean_law_deviation(traj.ledger, law, pfc)}


def _row_values(row):
    return [getattr(row, f) for f in row.__dataclass_fields__]


def _mean_law_deviation(ledger: Ledger, law: MeanLaw, pfc: bool) -> float:
    mphi, mphit = ledger.column("mean_phi"), ledger.column("mean_phit")
    if pfc:
        return float(np.max(np.abs(mphi - law.M)))
    return float(np.max(np.abs(law.beta * mphit + mphi - law.M)))


def cmd_steady(args) -> dict:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    with locked(out):
        phi0, _ = cfg.initial_fields()
        M = float(np.mean(phi0)) if args.mean is None else args.mean
        guess = phi0 - np.mean(phi0) + M
        results = {}
        if args.method in ("newton", "both"):
            results["newton"] = solve_steady(guess, M, cfg.params, cfg.grid, tol=args.tol, max_iter=args.max_iter)
        if args.method in ("relax", "both"):
            results["relax"] = relax_to_steady(guess, M, cfg.params, cfg.grid, dt=args.relax_dt,
                                               max_steps=args.max_steps)
        summary = {"status": "ok", "command": "steady", "out": str(out)}
        for name, s in results.items():
            write_steady(out / f"steady_{name}", s)
            summary[name] = {"M": s.M, "lagrange_const": s.lagrange_const, "residual": s.residual,
                             "energy": s.energy, "iterations": s.iterations, "converged": s.converged,
                             "flags": s.flags}
        if len(results) == 2:
            summary["energy_gap"] = abs(results["newton"].energy - results["relax"].energy)
        report = _base_report(cfg, "steady")
        report.update({k: v for k, v in summary.items() if k not in ("status", "command", "out")})
        _write_report(out, report)
        if any(not s.converged for s in results.values()):
            summary["status"] = "not_converged"
    return summary


def cmd_decompose(args) -> dict:
    cfg = _load_config(args)
    out = _out_dir(args, cfg)
    with locked(out):
        st = _initial_state(cfg)
        D = run_decomposition(st, cfg.params, cfg.t_end, cfg.scheme, sample_every=cfg.sample_every)
        with open(out / "decomposition.csv", "w") as fh:
            fh.write("t,d_x0,c_x1,defect_h2,mean_d,mean_dt\n")
            for row in zip(D.t, D.d_x0, D.c_x1, D.defect_h2, D.mean_d, D.mean_dt):
                fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")
        summary = {"kappa": D.kappa, "fit_residual": D.fit_residual, "c_x1_max": D.c_x1_max,
                   "max_defect_h2": D.max_defect, "max_abs_mean_d": float(np.max(np.abs(D.mean_d))),
                   "split_k": D.split_k}
        report = _base_report(cfg, "decompose")
        report.update(summary)
        _write_report(out, report)
    return {"status": "ok", "command": "decompose", "out": str(out), **summary}


def cmd_rates(args) -> dict:
    run_dir = Path(args.out)
    ledger = Ledger.from_csv(run_dir / "ledger.csv")
    window = tuple(float(v) for v in args.window.split(",")) if args.window else None
    fit = fit_ledger(ledger, args.column, args.model, window)
    result = {"status": "ok", "command": "rates", "column": args.column, "model": fit.model,
              "amplitude": fit.amplitude, "rate": fit.rate, "window": [fit.t_a, fit.t_b],
              "residual": fit.residual, "samples": fit.samples}
    report_path = run_dir / "report.json"
    if report_path.exists():
        beta = json.loads(report_path.read_text()).get("beta")
        if beta and args.column == "mean_phit":
            result["expected_rate"] = 1.0 / beta
            result["rate_error"] = abs(fit.rate - 1.0 / beta)
    (run_dir / f"rates_{args.column}_{args.model}.json").write_text(json.dumps(result, indent=2))
    return result


def check_run_dir(run_dir, identity_tol: float = 1e-3) -> dict:
    """Re-verify a finished run directory; returns a dict of named checks."""
    run_dir = Path(run_dir)
    checks = {}

    def put(name, ok, value=None, detail=""):
        checks[name] = {"ok": bool(ok), "value": value, "detail": detail}

    report = json.loads((run_dir / "report.json").read_text())
    ledger_path = run_dir / "ledger.csv"
    digest = _sha256(ledger_path)
    put("ledger_digest", digest == report.get("ledger_sha256"), digest,
        "ledger.csv matches the digest recorded at write time")
    try:
        ledger = Ledger.from_csv(ledger_path)
    except ValueError as exc:
        put("ledger_parse", False, None, str(exc))
        return {"ok": False, "checks": checks}
    put("ledger_parse", True, len(ledger))
    put("row_count", len(ledger) == report.get("rows"), len(ledger))
    cols = {c: ledger.column(c) for c in COLUMNS}
    finite = all(np.all(np.isfinite(v)) for v in cols.values())
    put("finite", finite)
    if not finite or len(ledger) == 0:
        return {"ok": False, "checks": checks}

    t, dt = cols["t"], report["dt"]
    steps = t / dt
    on_grid = np.all(np.abs(steps - np.round(steps)) <= 1e-9 * np.maximum(1.0, steps))
    put("times", bool(np.all(np.diff(t) > 0) and on_grid and abs(t[0]) <= 1e-15), float(t[-1]),
        "strictly increasing multiples of dt starting at 0")

    pfc = report.get("pfc", False)
    beta, M, a0 = report["law_beta"], report["M"], report["a0"]
    if pfc:
        dev = float(np.max(np.abs(cols["mean_phi"] - M)))
        put("mean_law", dev <= 1e-13 and np.all(cols["mean_phit"] == 0), dev, "<phi> fixed, <phi_t> zero")
        kin = float(np.max(np.abs(cols["pseudoE"] - cols["E"])))
        z = np.sqrt(cols["hm1_phit_bar"] ** 2 + cols["stat_residual"] ** 2)
    else:
        dev = float(np.max(np.abs(beta * cols["mean_phit"] + cols["mean_phi"] - M)))
        dev_t = float(np.max(np.abs(cols["mean_phit"] - a0 * np.exp(-(t - report["t0"]) / beta))))
        put("mean_law", dev <= 1e-13 and dev_t <= 1e-13 * max(1.0, abs(a0)), max(dev, dev_t),
            "beta <phi_t> + <phi> = M and <phi_t> = a0 exp(-t/beta)")
        kin = float(np.max(np.abs(cols["pseudoE"] - cols["E"] - 0.5 * beta * cols["hm1_phit_bar"] ** 2)
                           / np.maximum(1.0, np.abs(cols["pseudoE"]))))
        z = np.sqrt(cols["hm1_phit_bar"] ** 2 + cols["stat_residual"] ** 2 / beta) + np.exp(-(t - report["t0"]) / beta)
    put("kinetic_term", kin <= 1e-12, kin, "pseudoE - E equals the kinetic term")
    zerr = float(np.max(np.abs(cols["z"] - z) / np.maximum(1.0, np.abs(z))))
    put("z_relation", zerr <= 1e-12, zerr)
    nonneg = bool(np.all(cols["hm1_phit_bar"] >= 0) and np.all(cols["h2_phi"] >= 0) and np.all(cols["stat_residual"] >= 0))
    put("norms_nonnegative", nonneg)
    scale = max(1.0, abs(cols["pseudoE"][0]))
    if report["scheme"] == "imex2" and report.get("sample_every", 1) > 1:
        # the trapezoid over a thinned ledger measures quadrature error, not the scheme
        put("identity_residual", True, float(np.max(np.abs(cols["cum_identity_residual"]))),
            f"sampled every {report['sample_every']} steps: reported, not checked (needs sample_every = 1)")
    elif report["scheme"] == "imex2":
        ident = float(np.max(np.abs(cols["cum_identity_residual"])))
        put("identity_residual", ident <= identity_tol * scale, ident,
            f"|cumulative energy identity residual| <= {identity_tol:g} x max(1, |pseudoE(0)|)")
    elif a0 == 0 or pfc:
        # first-order convex splitting: the contract is discrete monotonicity, not the identity
        rise = float(np.max(np.diff(cols["pseudoE"]), initial=0.0))
        put("energy_stability", rise <= 1e-12 * scale, rise, "pseudoE never increases by more than 1e-12")
    else:
        put("identity_residual", True, float(np.max(np.abs(cols["cum_identity_residual"]))),
            "first-order scheme with <phi_1> != 0: reported, not checked")
    if report.get("final"):
        last = dict(zip(COLUMNS, (float(v) for v in cols_row(cols, -1))))
        put("final_row", all(last[c] == report["final"][c] for c in COLUMNS))
    return {"ok": all(c["ok"] for c in checks.values()), "checks": checks}


def cols_row(cols, i):
    return [cols[c][i] for c in COLUMNS]


def cmd_check(args) -> dict:
    run_dir = Path(args.out)
    if not (run_dir / "ledger.csv").exists() or not (run_dir / "report.json").exists():
        raise CliError(f"{run_dir} is not a finished run directory (ledger.csv and report.json required)")
    result = check_run_dir(run_dir, args.identity_tol)
    failed = [k for k, v in result["checks"].items() if not v["ok"]]
    result.update({"status": "ok" if result["ok"] else "failed", "command": "check", "failed": failed})
    return result


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mpfc", description="MPFC / PFC pseudo-spectral simulation and checks")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", metavar="PATH")
            sp.add_argument("--seed", type=int, metavar="U64")
            sp.add_argument("--t-end", type=float, dest="t_end", metavar="REAL")
            sp.add_argument("--dt", type=float, metavar="REAL")
        sp.add_argument("--out", metavar="DIR", required=not config)
        return sp

    common(sub.add_parser("run", help="integrate the MPFC equation"))
    common(sub.add_parser("pfc", help="integrate the first-order PFC equation"))
    sp = common(sub.add_parser("steady", help="solve for an equilibrium with the mean of phi0"))
    sp.add_argument("--method", choices=("newton", "relax", "both"), default="newton")
    sp.add_argument("--mean", type=float, default=None, help="mean constraint M (default: mean of phi0)")
    sp.add_argument("--tol", type=float, default=1e-11)
    sp.add_argument("--max-iter", type=int, default=30, dest="max_iter")
    sp.add_argument("--relax-dt", type=float, default=0.05, dest="relax_dt")
    sp.add_argument("--max-steps", type=int, default=200000, dest="max_steps")
    common(sub.add_parser("decompose", help="decaying / compact decomposition run"))
    sp = common(sub.add_parser("rates", help="fit a decay rate to a ledger column"), config=False)
    sp.add_argument("--column", default="mean_phit", choices=COLUMNS)
    sp.add_argument("--model", default="exponential", choices=("exponential", "algebraic"))
    sp.add_argument("--window", default=None, metavar="TA,TB")
    sp = common(sub.add_parser("check", help="re-verify a finished run directory"), config=False)
    sp.add_argument("--identity-tol", type=float, default=1e-3, dest="identity_tol")
    return p


COMMANDS = {
    "run": cmd_run, "pfc": lambda a: cmd_run(a, pfc=True), "steady": cmd_steady, "decompose": cmd_decompose,
    "rates": cmd_rates, "check": cmd_check,
}


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(f"unserializable {type(o).__name__}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a one-line cause plus a detail file
        cause = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        if isinstance(exc, ConfigError):
            detail = "\n".join(exc.errors)
        else:
            detail = traceback.format_exc()
        out = getattr(args, "out", None)
        if out:
            try:
                Path(out).mkdir(parents=True, exist_ok=True)
                Path(out, "error.txt").write_text(detail + "\n")
            except OSError:
                pass
        print(f"mpfc {args.command}: error: {type(exc).__name__}: {cause}", file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, CliError)) else 1
    print(json.dumps(result, sort_keys=True, default=_json_default))
    return 0 if result.get("status") == "ok" else 1


if __name__ == "__main__":
    sys.exit(main())
