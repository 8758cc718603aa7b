"""Command-line driver: experiment config, pipelines, verification, export.

Subcommands: generate | forward | invert | verify | report | export.
Exit codes: 0 success, 1 invalid config or missing artifact, 2 solvability
condition failure, 3 numerical failure.  Identical config + seed produce
bit-identical sinogram CSVs and reports (timestamps excluded from hashing).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import os
import sys

import numpy as np

from .fields import (
    Grid3,
    SymField2,
    divergence,
    inc_potential,
    random_admissible_potential,
    random_bump_covector,
    random_smooth_sym,
    solenoidal_project,
)
from .forward import add_noise, pwave_data, rytov_family
from .geometry import build_line_families, build_sphere_family
from .inversion import (
    NonUniqueError,
    ReconReport,
    pwave_pipeline,
    swave_pipeline,
    verify_poincare,
)
from .io import (
    read_field,
    read_params,
    read_report,
    read_sinogram,
    write_field,
    write_params,
    write_report,
    write_sinogram,
)
from .material import (
    ConditionError,
    MaterialParams,
    check_pwave_conditions,
    contraction_identity_residual,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_CONDITION = 2
EXIT_NUMERICAL = 3


class ConfigError(Exception):
    """Invalid experiment configuration."""


_DEFAULTS = {
    "grid": {"n": 24, "halfwidth": 1.2, "ball_radius": 1.0},
    "material": {"lam": 1.0, "mu": 1.0, "rho": 1.0, "nu": [0.1, 0.4, -0.2, 0.5]},
    "families": {"angles": 48, "offsets": None, "sphere_directions": 60},
    "pipeline": "pwave",
    "seed": 0,
    "scale": 1e-3,
    "noise": 0.0,
    "truth_r0": None,
    "tolerances": {"cg_tol": 1e-3, "cg_maxiter": 300, "floor": 1e-6},
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be a table")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def load_config(path=None, seed=None):
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")
    cfg = _merge(_DEFAULTS, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    if cfg["pipeline"] not in ("pwave", "swave", "verify"):
        raise ConfigError(f"unknown pipeline {cfg['pipeline']!r}")
    if cfg["grid"]["n"] < 8:
        raise ConfigError("grid.n must be at least 8")
    if len(cfg["material"]["nu"]) != 4:
        raise ConfigError("material.nu must have four entries")
    for k, v in cfg["tolerances"].items():
        if v <= 0:
            raise ConfigError(f"tolerances.{k} must be positive")
    if cfg["noise"] < 0:
        raise ConfigError("noise must be nonnegative")
    if cfg["families"]["offsets"] is None:
        cfg["families"]["offsets"] = cfg["grid"]["n"]
    if cfg["truth_r0"] is None:
        n = cfg["grid"]["n"]
        cfg["truth_r0"] = 0.7 if n >= 40 else 0.5 if n >= 20 else 0.25
    return cfg


def config_hash(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def _grid_from(cfg):
    g = cfg["grid"]
    return Grid3.cube(g["n"], halfwidth=g["halfwidth"], ball_radius=g["ball_radius"])


def _params_from(cfg):
    m = cfg["material"]
    return MaterialParams(m["lam"], m["mu"], m["rho"], tuple(m["nu"]))


def _require(path, what):
    if not os.path.exists(path):
        raise ConfigError(f"missing {what}: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(cfg, out):
    os.makedirs(out, exist_ok=True)
    grid = _grid_from(cfg)
    rng = np.random.default_rng(cfg["seed"])
    R = inc_potential(random_admissible_potential(grid, rng, r0=cfg["truth_r0"]))
    write_field(os.path.join(out, "truth.stf"), R)
    write_params(os.path.join(out, "params.json"), _params_from(cfg))
    resolved = dict(cfg, config_hash=config_hash(cfg))
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"generate: wrote truth.stf ({R.norm():.6g} L2) to {out}")
    return EXIT_OK


def cmd_forward(cfg, out):
    grid = _grid_from(cfg)
    params = _params_from(cfg)
    R = read_field(_require(os.path.join(out, "truth.stf"), "truth field"))
    if not isinstance(R, SymField2):
        raise ConfigError("truth.stf does not hold a symmetric 2-tensor field")
    fam = cfg["families"]
    planes = build_line_families(grid, fam["angles"], fam["offsets"])
    if cfg["pipeline"] == "pwave":
        sinos = [pwave_data(R, params, p) for p in planes]
        names = [f"pwave_plane{k}.csv" for k in range(3)]
    else:
        sphere = build_sphere_family(grid, fam["sphere_directions"])
        sinos = [rytov_family(R, params, sphere, scale=cfg["scale"])]
        sinos += [rytov_family(R, params, p, scale=cfg["scale"]) for p in planes]
        names = ["swave_sphere.csv"] + [f"swave_plane{k}.csv" for k in range(3)]
    if cfg["noise"] > 0:
        nrng = np.random.default_rng(cfg["seed"] + 1)
        sinos = [add_noise(s, cfg["noise"], nrng) for s in sinos]
    for name, s in zip(names, sinos):
        write_sinogram(os.path.join(out, name), s)
    with open(os.path.join(out, "sinograms.json"), "w") as fh:
        json.dump(
            {"config_hash": config_hash(cfg), "files": names, "pipeline": cfg["pipeline"]},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    print(f"forward: wrote {len(names)} sinograms to {out}")
    return EXIT_OK


def cmd_invert(cfg, out):
    grid = _grid_from(cfg)
    params = _params_from(cfg)
    man_path = _require(os.path.join(out, "sinograms.json"), "sinogram manifest")
    with open(man_path) as fh:
        man = json.load(fh)
    if man["config_hash"] != config_hash(cfg):
        raise ConfigError("sinograms were produced under a different config")
    sinos = [read_sinogram(os.path.join(out, n)) for n in man["files"]]
    tol = cfg["tolerances"]
    if cfg["pipeline"] == "pwave":
        cond = check_pwave_conditions(params, floor=tol["floor"])
        if not cond.all_pass:
            bad = [k for k, ok in cond.passed.items() if not ok]
            print(f"condition failure: {', '.join(bad)} below floor {cond.floor}")
            return EXIT_CONDITION
        R, report = pwave_pipeline(sinos, params, grid)
    else:
        R, report = swave_pipeline(
            sinos,
            params,
            grid,
            cfg["scale"],
            maxiter=int(tol["cg_maxiter"]),
            tol=tol["cg_tol"],
        )
    report.config["config_hash"] = config_hash(cfg)
    report.config["seed"] = cfg["seed"]
    truth_path = os.path.join(out, "truth.stf")
    if os.path.exists(truth_path):
        truth = read_field(truth_path)
        report.errors["relative_l2"] = float(
            np.linalg.norm(R.values - truth.values) / np.linalg.norm(truth.values)
        )
    if not np.all(np.isfinite(R.values)):
        print("numerical failure: reconstruction is not finite")
        return EXIT_NUMERICAL
    write_field(os.path.join(out, "reconstruction.stf"), R)
    write_report(os.path.join(out, "report.json"), report)
    err = report.errors.get("relative_l2")
    msg = f" rel_error={err:.4f}" if err is not None else ""
    print(f"invert: wrote reconstruction.stf and report.json{msg}")
    return EXIT_OK


def cmd_verify(cfg, out):
    """Invariant suite: solvability conditions, energy-ratio bound,
    contraction identity, and the potential-part kernel of the phase data."""
    grid = _grid_from(cfg)
    params = _params_from(cfg)
    rng = np.random.default_rng(cfg["seed"])
    report = ReconReport(config={"pipeline": "verify", "config_hash": config_hash(cfg)})

    cond = check_pwave_conditions(params, floor=cfg["tolerances"]["floor"])
    report.conditions.update(cond.values)
    failed_conditions = [k for k, ok in cond.passed.items() if not ok]

    ratios = [
        verify_poincare(random_bump_covector(grid, rng, radius=0.8)) for _ in range(10)
    ]
    report.stages["poincare_max_ratio"] = float(max(ratios))

    res = 0.0
    for _ in range(20):
        Rv = rng.normal(size=(3, 3))
        Rv = 0.5 * (Rv + Rv.T)
        t = rng.normal(size=3)
        t *= float(params.v_p) / np.linalg.norm(t)
        res = max(
            res,
            abs(contraction_identity_residual(Rv, params.nu_values(), t, v_p=float(params.v_p))),
        )
    report.errors["contraction_residual"] = res

    u = random_smooth_sym(grid, rng)
    s = solenoidal_project(u)
    report.errors["divergence_of_projection"] = float(
        divergence(s).norm() / max(s.norm(), 1e-300)
    )

    ok = (
        not failed_conditions
        and report.stages["poincare_max_ratio"] <= 1.0
        and res < 1e-10
        and report.errors["divergence_of_projection"] < 1e-8
    )
    if out:
        os.makedirs(out, exist_ok=True)
        write_report(os.path.join(out, "verify.json"), report)
    for k, v in {**report.conditions, **report.stages, **report.errors}.items():
        print(f"verify: {k} = {v:.6g}")
    if failed_conditions:
        print(f"condition failure: {', '.join(failed_conditions)}")
        return EXIT_CONDITION
    if not ok:
        print("numerical failure: an invariant check is out of tolerance")
        return EXIT_NUMERICAL
    print("verify: all checks pass")
    return EXIT_OK


def cmd_report(cfg, out, inputs):
    if not inputs:
        raise ConfigError("report needs at least one report.json input")
    reports = [read_report(_require(p, "report")) for p in inputs]
    hashes = {r.config.get("config_hash") for r in reports}
    if len(hashes) > 1:
        print(f"refusing to merge reports with mismatched config hashes: {sorted(hashes)}")
        return EXIT_CONFIG
    os.makedirs(out, exist_ok=True)
    keys = sorted({k for r in reports for k in r.errors})
    path = os.path.join(out, "metrics.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "pipeline"] + keys)
        for src, r in zip(inputs, reports):
            w.writerow(
                [src, r.config.get("pipeline", "")]
                + [repr(r.errors[k]) if k in r.errors else "" for k in keys]
            )
    merged = ReconReport(config={"config_hash": hashes.pop(), "merged_from": list(inputs)})
    for r in reports:
        for k, v in r.errors.items():
            merged.errors.setdefault(k, v)
    write_report(os.path.join(out, "merged.json"), merged)
    print(f"report: wrote {path} and merged.json from {len(reports)} reports")
    return EXIT_OK


def cmd_export(cfg, out, what, inputs):
    os.makedirs(out, exist_ok=True)
    if what == "noise":
        if not inputs:
            raise ConfigError("export noise needs report.json inputs")
        rows = []
        for p in inputs:
            r = read_report(_require(p, "report"))
            rows.append((r.config.get("noise", 0.0), r.errors.get("relative_l2", "")))
        rows.sort()
        path = os.path.join(out, "error_vs_noise.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["noise", "relative_l2"])
            w.writerows(rows)
    elif what == "born":
        grid = _grid_from(cfg)
        params = _params_from(cfg)
        rng = np.random.default_rng(cfg["seed"])
        from .fields import random_bump_sym
        from .forward import mixed_transform

        R = random_bump_sym(grid, rng, radius=0.6)
        fam = build_line_families(grid, 6, grid.dims[0])[0]
        scales = [1e-2, 1e-3, 1e-4]
        path = os.path.join(out, "born_slope.csv")
        rows = []
        prev = None
        eye = np.eye(2)
        for s in scales:
            lin = mixed_transform(R, params, fam, scale=s).values
            prop = rytov_family(R, params, fam, scale=s).values
            # the propagator is U = E - i s L + O(s^2): the complex remainder
            # shrinks quadratically with the stress scale
            rem = np.linalg.norm(prop - eye + 1j * lin)
            slope = "" if prev is None else np.log(prev / rem) / np.log(10.0)
            rows.append((s, rem, slope))
            prev = rem
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scale", "born_remainder", "slope"])
            w.writerows(rows)
    elif what == "conditions":
        base = _params_from(cfg)
        path = os.path.join(out, "condition_landscape.csv")
        grid_vals = np.linspace(-1.0, 1.0, 21)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["nu12", "nu34", "weight_sum", "leading_weight", "trace_uniqueness"])
            for n12 in grid_vals:
                for n34 in grid_vals:
                    p = MaterialParams(base.lam, base.mu, base.rho, (n12, 0.0, n34, 0.0))
                    c = check_pwave_conditions(p)
                    w.writerow(
                        [n12, n34]
                        + [c.values[k] for k in ("weight_sum", "leading_weight", "trace_uniqueness")]
                    )
    else:
        raise ConfigError(f"unknown export table {what!r}")
    print(f"export: wrote {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def main(argv=None):
    ap = argparse.ArgumentParser(prog="stresstomo", description=__doc__)
    ap.add_argument("command", choices=["generate", "forward", "invert", "verify", "report", "export"])
    ap.add_argument("inputs", nargs="*", help="input artifacts (report/export)")
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--out", default="out", help="artifact directory")
    ap.add_argument("--threads", type=int, default=0, help="worker threads (0 = library default)")
    ap.add_argument("--table", default="noise", choices=["noise", "born", "conditions"],
                    help="which table `export` emits")
    ap.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    args = ap.parse_args(argv)

    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    try:
        cfg = load_config(args.config, seed=args.seed)
        if args.dry_run:
            print(json.dumps(dict(cfg, config_hash=config_hash(cfg)), indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "generate":
            return cmd_generate(cfg, args.out)
        if args.command == "forward":
            return cmd_forward(cfg, args.out)
        if args.command == "invert":
            return cmd_invert(cfg, args.out)
        if args.command == "verify":
            return cmd_verify(cfg, args.out)
        if args.command == "report":
            return cmd_report(cfg, args.out, args.inputs)
        if args.command == "export":
            return cmd_export(cfg, args.out, args.table, args.inputs)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConditionError, NonUniqueError, ValueError) as e:
        print(f"condition failure: {e}", file=sys.stderr)
        return EXIT_CONDITION
    except (RuntimeError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
