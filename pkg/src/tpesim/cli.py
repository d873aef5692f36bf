"""Command-line interface.

Commands: ``grid`` (analytic outcome grids, one CSV per quantity),
``sweep`` (stochastic (alpha, eta) sweep), ``validate`` (invariant
suites), ``compare`` (stochastic vs analytic binned comparison).

Configuration comes from an INI file (sections [params], [run],
[sweep], [compare]) with command-line flags taking precedence.  Every
run emits a JSON manifest listing its configuration, seed and output
files; rerunning with the same configuration and seed reproduces the
data files byte for byte.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 runtime abort.
"""

from __future__ import annotations

import argparse
import configparser
import datetime
import hashlib
import json
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import __version__, checks, protocol
from .dynamics import (
    ConvergenceError,
    IntegratorError,
    ProtocolParams,
    RegimeError,
    TrajectoryAbort,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class ConfigError(ValueError):
    pass


def _parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


_SCHEMA = {
    "params": {
        "alpha": float, "beta": float, "g": float, "kappa_c": float,
        "kappa_a": float, "kappa_b": float, "eta": float,
        "n_a": int, "n_b": int, "n_c": int, "dt": float, "t_final": float,
        "seed": int,
    },
    "run": {
        "sector": str, "quadrature": str, "window": float, "step": float,
        "trajectories": int, "cutoff_fraction": float, "threads": int,
        "pre_jpm_loss": bool, "tail_tol": float,
    },
    "sweep": {
        "alphas": _parse_float_list, "etas": _parse_float_list,
        "adapt_truncation": bool,
    },
    "compare": {
        "bin_step": float, "min_count": int, "window": float,
    },
}


def load_config(path: str | None) -> dict:
    """Read and type-check the INI config; unknown keys are errors."""
    out: dict = {s: {} for s in _SCHEMA}
    if path is None:
        return out
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file {path!r} not found or unreadable")
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in cp.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key '{key}' in section [{section}]")
            typ = _SCHEMA[section][key]
            try:
                if typ is bool:
                    out[section][key] = cp.getboolean(section, key)
                else:
                    out[section][key] = typ(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for '{key}' in [{section}]: {raw!r}") from exc
    return out


def build_run_config(cfg: dict, args) -> protocol.RunConfig:
    pkw = dict(cfg["params"])
    for flag in ("alpha", "beta", "eta", "seed"):
        v = getattr(args, flag, None)
        if v is not None:
            pkw[flag] = v
    pkw.setdefault("alpha", 0.75)
    pkw.setdefault("beta", 0.75)
    try:
        params = ProtocolParams(**pkw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameters: {exc}") from exc
    rkw = dict(cfg["run"])
    rc = protocol.RunConfig(params=params)
    rename = {"window": "grid_window", "step": "grid_step"}
    for key, val in rkw.items():
        setattr(rc, rename.get(key, key), val)
    for flag, attr in (
        ("sector", "sector"), ("quadrature", "quadrature"),
        ("trajectories", "trajectories"), ("threads", "threads"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            setattr(rc, attr, v)
    try:
        rc.validate()
        params.validate(strict=False)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return rc


def _out_dir(args) -> str:
    out = args.out or os.environ.get("TPE_OUT_DIR") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: str, header: list[str], rows) -> dict:
    digest = hashlib.sha256()
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        line = ",".join(header) + "\n"
        f.write(line)
        digest.update(line.encode())
        for row in rows:
            line = ",".join(_fmt(v) for v in row) + "\n"
            f.write(line)
            digest.update(line.encode())
            n += 1
    return {"name": os.path.basename(path), "sha256": digest.hexdigest(), "rows": n}


class Manifest:
    def __init__(self, command: str, config: protocol.RunConfig | None, seed):
        self.data = {
            "command": command,
            "version": __version__,
            "seed": seed,
            "config": _config_echo(config) if config is not None else {},
            "started": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "outputs": [],
            "invariants": {},
        }

    def add(self, entry: dict) -> None:
        self.data["outputs"].append(entry)

    def write(self, out_dir: str, name: str = "manifest.json") -> str:
        self.data["finished"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.data, f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def _config_echo(rc: protocol.RunConfig) -> dict:
    d = asdict(rc)
    return d


def cmd_grid(args) -> int:
    cfg = load_config(args.config)
    rc = build_run_config(cfg, args)
    out_dir = _out_dir(args)
    manifest = Manifest("grid", rc, rc.params.seed)
    grid = protocol.run_analytic(rc)
    quantities = {
        "P": grid.density,
        "F": grid.overlap,
        "C": grid.concurrence,
        "gradF": grid.grad_overlap,
    }
    for name, arr in quantities.items():
        rows = (
            (grid.xi_a[i], grid.xi_b[j], arr[i, j])
            for i in range(len(grid.xi_a))
            for j in range(len(grid.xi_b))
        )
        path = os.path.join(out_dir, f"grid_{rc.sector}_{rc.quadrature}_{name}.csv")
        manifest.add(write_csv(path, ["xi_a", "xi_b", "value"], rows))
    cell = grid.step**2
    manifest.data["invariants"] = {
        "density_integral": float(grid.density.sum() * cell),
        "max_concurrence": float(grid.concurrence.max()),
        "max_overlap": float(grid.overlap.max()),
    }
    manifest.write(out_dir)
    print(f"grid written to {out_dir} ({len(quantities)} files)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    rc = build_run_config(cfg, args)
    rc.path = "stochastic"
    rc.validate()
    out_dir = _out_dir(args)
    manifest = Manifest("sweep", rc, rc.params.seed)
    skw = cfg["sweep"]
    alphas = skw.get("alphas")
    etas = skw.get("etas")
    if args.alpha is not None:
        alphas = [args.alpha]
    if args.eta is not None:
        etas = [args.eta]
    result = protocol.run_sweep(
        rc, alphas=alphas, etas=etas,
        adapt_truncation=skw.get("adapt_truncation", True),
    )
    header = [
        "alpha", "eta", "trajectories", "ambiguous", "aborted",
        "success_fraction", "max_fidelity_phase", "max_fidelity_phi_plus",
        "mean_fidelity_phase", "mean_concurrence", "cutoff", "lobe_center", "valid",
    ]
    rows = [
        [
            s.alpha, s.eta, s.trajectories, s.ambiguous, s.aborted,
            s.success_fraction, s.max_fidelity_phase, s.max_fidelity_fixed,
            s.mean_fidelity_phase, s.mean_concurrence, s.cutoff, s.lobe_center,
            s.valid,
        ]
        for s in result.points
    ]
    manifest.add(write_csv(os.path.join(out_dir, "sweep.csv"), header, rows))
    manifest.data["invariants"] = {
        "all_points_valid": bool(all(s.valid for s in result.points)),
    }
    manifest.write(out_dir)
    print(f"sweep written to {out_dir} ({len(rows)} points)")
    return EXIT_OK


def cmd_validate(args) -> int:
    level = args.level
    results = checks.run_checks(level=level)
    width = max(len(r.name) for r in results)
    all_ok = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        all_ok &= r.passed
        print(f"{r.name:<{width}}  {status}  [{r.seconds:6.2f}s]  {r.detail}")
    print(f"{'overall':<{width}}  {'PASS' if all_ok else 'FAIL'}")
    return EXIT_OK if all_ok else EXIT_VALIDATION


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    rc = build_run_config(cfg, args)
    ckw = cfg["compare"]
    out_dir = _out_dir(args)
    manifest = Manifest("compare", rc, rc.params.seed)
    report = protocol.compare_paths(
        alpha=rc.params.alpha,
        beta=rc.params.beta,
        sector=rc.sector,
        quadrature=rc.quadrature,
        params=rc.params,
        trajectories=rc.trajectories,
        bin_step=ckw.get("bin_step", 0.5),
        window=ckw.get("window", 4.0),
        min_count=ckw.get("min_count", 10),
        seed=rc.params.seed,
    )
    n = len(report.axis)
    rows = []
    for i in range(n):
        for j in range(n):
            rows.append([
                report.axis[i], report.axis[j], report.counts[i, j],
                report.mean_abs_df[i, j], report.c_analytic[i, j],
                report.mean_c_stoch[i, j], bool(report.artifact_mask[i, j]),
            ])
    manifest.add(write_csv(
        os.path.join(out_dir, "compare.csv"),
        ["xi_a", "xi_b", "count", "mean_abs_df", "c_analytic", "mean_c_stoch", "artifact"],
        rows,
    ))
    manifest.data["invariants"] = {
        "median_df_clean": report.median_df_clean,
        "used_bins": report.used_bins,
        "samples": report.samples,
    }
    manifest.write(out_dir)
    print(
        f"compare written to {out_dir}: median |dF| outside artifacts "
        f"{report.median_df_clean:.4f} over {report.used_bins} bins"
    )
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tpesim",
        description="Two-qubit remote-entanglement protocol simulator",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="INI configuration file")
        p.add_argument("--seed", type=int, help="master RNG seed")
        p.add_argument("--alpha", type=float, help="mode-a coherent amplitude")
        p.add_argument("--beta", type=float, help="mode-b coherent amplitude")
        p.add_argument("--eta", type=float, help="efficiency parameter")
        p.add_argument("--sector", choices=["even", "odd"], help="parity sector")
        p.add_argument("--quadrature", choices=["X", "Y"], help="step-III quadrature")
        p.add_argument("--trajectories", type=int, metavar="M")
        p.add_argument("--threads", type=int, metavar="K", help="worker-process cap")
        p.add_argument("--out", metavar="DIR", help="output directory (default $TPE_OUT_DIR or .)")

    common(sub.add_parser("grid", help="analytic outcome grid (CSV per quantity)"))
    common(sub.add_parser("sweep", help="stochastic (alpha, eta) sweep"))
    common(sub.add_parser("compare", help="stochastic vs analytic comparison"))
    pv = sub.add_parser("validate", help="run the invariant suites")
    pv.add_argument("level", nargs="?", choices=["quick", "full"], default="quick")
    pv.add_argument("--out", metavar="DIR", help="unused; accepted for symmetry")
    return ap


_COMMANDS = {
    "grid": cmd_grid,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrajectoryAbort, IntegratorError, ConvergenceError, RegimeError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, FloatingPointError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
