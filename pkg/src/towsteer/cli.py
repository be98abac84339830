"""Command-line orchestration.

Subcommands:

* ``optimize``  run a preset from a TOML config, write history/fields/SVG/JSON
* ``check``     evaluate curl/divergence feasibility of an exported field CSV
* ``gradcheck`` compare analytic and finite-difference gradients on a small mesh
* ``render``    re-render SVG panels from an exported field CSV

Exit codes: 0 success / feasible / gradients consistent, 1 configuration or
input error (also: infeasible field, failed gradcheck), 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Dict, Optional

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:          # Python < 3.11
    import tomli as _toml

from . import mesh, orientation, postprocess
from .fem import FemProblem, SingularSystemError
from .manufacturing import (Bounds, ProcessParams, assemble_constraints,
                            bounds_from_process, constraint_gradients,
                            curl_div_fd, diff_operators, representability_check)
from .material import MATERIALS
from .optimizer import (NonFiniteGradientError, Schedules, al_penalty,
                        ALState, run)


class ConfigError(ValueError):
    """Configuration problem; message names the offending key path."""


_PRESETS = {
    "lbracket": mesh.lbracket_preset,
    "beam": mesh.beam_preset,
    "cantilever": mesh.cantilever_preset,
    "tension-x": mesh.tension_strip_preset,
}

_SCHED_KEYS = ("max_iters", "inner_iters", "move_limit", "mu0", "mu_max",
               "mu_growth", "weight0", "weight_max", "weight_growth",
               "ks_p0", "ks_growth", "ks_p_max", "early_stop", "early_tol")
_PROCESS_KEYS = ("a_g", "a_o", "l_cut", "l_add")


@dataclass(frozen=True)
class RunConfig:
    preset: str
    nx: Optional[int] = None
    ny: Optional[int] = None
    material: Optional[str] = None
    theta0_deg: Optional[float] = None
    load_n: Optional[float] = None
    mode: str = "al"
    kappa_bar: Optional[float] = None
    psi_bar: Optional[float] = None
    process: Optional[ProcessParams] = None
    r_f: float = 0.0
    sched: Schedules = field(default_factory=Schedules)
    seed: Optional[int] = None
    perturb_scale: float = 0.0
    out_dir: str = "out"


def _section(doc: dict, name: str, known) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a table")
    for key in sec:
        if key not in known:
            raise ConfigError(f"{name}.{key}: unknown key")
    return sec


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            doc = _toml.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None

    for name in doc:
        if name not in ("problem", "constraints", "optimizer", "output"):
            raise ConfigError(f"{name}: unknown section")
    prob = _section(doc, "problem", ("preset", "nx", "ny", "material",
                                     "theta0_deg", "load_n"))
    cons = _section(doc, "constraints", ("kappa_bar", "psi_bar") + _PROCESS_KEYS)
    opt = _section(doc, "optimizer", ("mode", "r_f", "seed", "perturb_scale")
                   + _SCHED_KEYS)
    outp = _section(doc, "output", ("dir",))

    if "preset" not in prob:
        raise ConfigError("problem.preset: required key missing")
    preset = prob["preset"]
    if preset not in _PRESETS:
        raise ConfigError(f"problem.preset: unknown preset {preset!r} "
                          f"(choose from {sorted(_PRESETS)})")
    material = prob.get("material")
    if material is not None and material not in MATERIALS:
        raise ConfigError(f"problem.material: unknown material {material!r} "
                          f"(choose from {sorted(MATERIALS)})")

    has_process = [k for k in _PROCESS_KEYS if k in cons]
    if has_process and "psi_bar" in cons:
        raise ConfigError("constraints.psi_bar: conflicts with process "
                          "parameters (a_g/a_o/l_cut/l_add); give one or the other")
    process = None
    psi_bar = cons.get("psi_bar")
    if has_process:
        missing = [k for k in _PROCESS_KEYS if k not in cons]
        if missing:
            raise ConfigError(f"constraints.{missing[0]}: required with the "
                              f"other process parameters")
        try:
            process = ProcessParams(a_g=float(cons["a_g"]), a_o=float(cons["a_o"]),
                                    l_cut=float(cons["l_cut"]), l_add=float(cons["l_add"]))
        except ValueError as exc:
            raise ConfigError(f"constraints: {exc}") from None
        psi_bar = bounds_from_process(process).psi_bar

    mode = opt.get("mode", "al")
    if mode not in ("al", "ks", "unconstrained"):
        raise ConfigError(f"optimizer.mode: unknown mode {mode!r}")
    if mode != "unconstrained":
        if cons.get("kappa_bar") is None:
            raise ConfigError("constraints.kappa_bar: required key missing")
        if psi_bar is None:
            raise ConfigError("constraints.psi_bar: required key missing "
                              "(directly or via process parameters)")

    sched_over = {}
    for key in _SCHED_KEYS:
        if key in opt:
            val = opt[key]
            if key == "early_stop":
                if not isinstance(val, bool):
                    raise ConfigError("optimizer.early_stop: expected a boolean")
            elif key in ("max_iters", "inner_iters"):
                val = int(val)
                if val <= 0:
                    raise ConfigError(f"optimizer.{key}: must be positive")
            else:
                val = float(val)
                if val <= 0:
                    raise ConfigError(f"optimizer.{key}: must be positive")
            sched_over[key] = val
    sched = replace(Schedules(), **sched_over)

    r_f = float(opt.get("r_f", 0.0))
    if r_f < 0:
        raise ConfigError("optimizer.r_f: must be nonnegative")

    return RunConfig(
        preset=preset,
        nx=int(prob["nx"]) if "nx" in prob else None,
        ny=int(prob["ny"]) if "ny" in prob else None,
        material=material,
        theta0_deg=float(prob["theta0_deg"]) if "theta0_deg" in prob else None,
        load_n=float(prob["load_n"]) if "load_n" in prob else None,
        mode=mode,
        kappa_bar=float(cons["kappa_bar"]) if "kappa_bar" in cons else None,
        psi_bar=float(psi_bar) if psi_bar is not None else None,
        process=process,
        r_f=r_f,
        sched=sched,
        seed=int(opt["seed"]) if "seed" in opt else None,
        perturb_scale=float(opt.get("perturb_scale", 0.0)),
        out_dir=str(outp.get("dir", "out")),
    )


def _build_problem(cfg: RunConfig):
    preset = _PRESETS[cfg.preset]()
    over = {}
    if cfg.nx is not None:
        over["nx"] = cfg.nx
    if cfg.ny is not None:
        over["ny"] = cfg.ny
    if cfg.material is not None:
        over["material_id"] = cfg.material
    if cfg.theta0_deg is not None:
        over["theta0_deg"] = cfg.theta0_deg
    if cfg.load_n is not None:
        over["load_n"] = cfg.load_n
    if over:
        preset = replace(preset, **over)
    grid, load = mesh.build_preset(preset)
    return preset, grid, load


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(float(v))
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def resolved_config_toml(cfg: RunConfig, preset: "mesh.ProblemPreset") -> str:
    """Full config with every default filled in, for provenance."""
    sections: Dict[str, Dict] = {
        "problem": {
            "preset": cfg.preset, "nx": preset.nx, "ny": preset.ny,
            "material": preset.material_id, "theta0_deg": preset.theta0_deg,
            "load_n": preset.load_n,
        },
        "constraints": {},
        "optimizer": {"mode": cfg.mode, "r_f": cfg.r_f},
        "output": {"dir": cfg.out_dir},
    }
    if cfg.kappa_bar is not None:
        sections["constraints"]["kappa_bar"] = cfg.kappa_bar
    if cfg.process is not None:
        for key in _PROCESS_KEYS:
            sections["constraints"][key] = getattr(cfg.process, key)
        sections["constraints"]["derived_psi_bar"] = cfg.psi_bar
    elif cfg.psi_bar is not None:
        sections["constraints"]["psi_bar"] = cfg.psi_bar
    for key in _SCHED_KEYS:
        sections["optimizer"][key] = getattr(cfg.sched, key)
    if cfg.seed is not None:
        sections["optimizer"]["seed"] = cfg.seed
        sections["optimizer"]["perturb_scale"] = cfg.perturb_scale
    lines = []
    for name, sec in sections.items():
        lines.append(f"[{name}]")
        for key, val in sec.items():
            lines.append(f"{key} = {_toml_value(val)}")
        lines.append("")
    return "\n".join(lines)


def _write_outputs(cfg: RunConfig, preset, grid, result):
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "resolved_config.toml"), "w") as fh:
        fh.write(resolved_config_toml(cfg, preset))
    postprocess.write_history_csv(result.history, os.path.join(out, "history.csv"))
    for cp in result.checkpoints:
        postprocess.write_design_csv(
            grid, cp.state, os.path.join(out, f"checkpoint_{cp.iteration:04d}.csv"))
    if result.design is None:
        return
    postprocess.write_design_csv(grid, result.design,
                                 os.path.join(out, "design_final.csv"))
    postprocess.export_csv(grid, {"kappa": result.kappa, "psi": result.psi},
                           os.path.join(out, "manufacturing_final.csv"))
    postprocess.export_vtk(grid, {"m": result.design.m, "n": result.design.n,
                                  "theta_deg": result.design.theta_deg,
                                  "kappa": result.kappa, "psi": result.psi},
                           os.path.join(out, "fields.vtk"))
    sep = 2.0 * max(grid.hx, grid.hy)
    lines = postprocess.trace_streamlines(grid, result.design.m, result.design.n, sep)
    svg = postprocess.render(grid, [
        postprocess.OrientationGlyphs(m=result.design.m, n=result.design.n),
        postprocess.StreamlinePaths(lines=lines),
    ], title="orientation field with streamlines")
    with open(os.path.join(out, "orientation.svg"), "w") as fh:
        fh.write(svg)
    for name, vals, bound in (("kappa", result.kappa, cfg.kappa_bar),
                              ("psi", result.psi, cfg.psi_bar)):
        vmax = bound if bound is not None else float(np.abs(vals).max())
        svg = postprocess.render(grid, [
            postprocess.Heatmap(values=np.abs(vals), label=f"|{name}|",
                                vmin=0.0, vmax=vmax),
        ], title=f"abs {name} map")
        with open(os.path.join(out, f"{name}.svg"), "w") as fh:
            fh.write(svg)
    summary = {
        "mode": result.mode,
        "iterations": result.iterations,
        "initial_compliance_J": result.initial_compliance,
        "final_compliance_J": result.compliance,
        "max_kappa_ratio": result.history[-1].max_kappa_ratio if result.history else None,
        "max_psi_ratio": result.history[-1].max_psi_ratio if result.history else None,
        "error": result.error,
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_optimize(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    preset, grid, load = _build_problem(cfg)
    if args.dry_run:
        sys.stdout.write(resolved_config_toml(cfg, preset))
        return 0
    bounds = (Bounds(cfg.kappa_bar, cfg.psi_bar)
              if cfg.kappa_bar is not None and cfg.psi_bar is not None else None)

    def progress(row):
        if row.iteration % cfg.sched.inner_iters == 0:
            print(f"iter {row.iteration:4d}  compliance {row.compliance:12.4f} J"
                  f"  max|k|/kbar {row.max_kappa_ratio:7.4f}"
                  f"  max|psi|/psibar {row.max_psi_ratio:7.4f}")

    result = run(grid, load, preset.material, mode=cfg.mode, bounds=bounds,
                 r_f=cfg.r_f, theta0_deg=preset.theta0_deg, sched=cfg.sched,
                 perturb_seed=cfg.seed, perturb_scale=cfg.perturb_scale,
                 progress=progress)
    _write_outputs(cfg, preset, grid, result)
    if result.error:
        print(f"run failed: {result.error}", file=sys.stderr)
        print(f"partial outputs retained in {cfg.out_dir}", file=sys.stderr)
        return 2
    print(f"final compliance {result.compliance:.4f} J "
          f"after {result.iterations} iterations; outputs in {cfg.out_dir}")
    return 0


def cmd_check(args) -> int:
    try:
        grid, cols = postprocess.read_field_csv(args.field)
    except OSError as exc:
        raise ConfigError(f"cannot read field CSV {args.field}: {exc}") from None
    if "m" not in cols or "n" not in cols:
        raise ConfigError(f"{args.field}: field CSV must have columns m and n")
    bounds = Bounds(args.kappa_bar, args.psi_bar)
    rep = representability_check(grid, bounds)
    if not rep.passed:
        print(f"warning: bounds exceed the mesh ceiling {rep.mesh_bound:.6g} "
              f"(1/hx + 1/hy); such constraints can never activate")
    kappa, psi = curl_div_fd(grid, cols["m"], cols["n"])
    cent = grid.centroids()

    def report(name, vals, bound):
        over = np.where(np.abs(vals) > bound)[0]
        print(f"max |{name}| = {np.abs(vals).max():.6g} (bound {bound:.6g}), "
              f"{over.size} element(s) over")
        for k in over[:10]:
            print(f"  element {int(grid.active_ids[k])} at "
                  f"({cent[k, 0]:.4g}, {cent[k, 1]:.4g}): "
                  f"{name} = {vals[k]:.6g}")
        if over.size > 10:
            print(f"  ... and {over.size - 10} more")
        return over.size

    n_bad = report("kappa", kappa, bounds.kappa_bar)
    n_bad += report("psi", psi, bounds.psi_bar)
    print("feasible" if n_bad == 0 else "infeasible")
    return 0 if n_bad == 0 else 1


def _rel_err(analytic: np.ndarray, fd: np.ndarray):
    floor = 1e-6 * max(float(np.abs(fd).max()), 1e-30)
    rel = np.abs(analytic - fd) / np.maximum(np.abs(fd), floor)
    k = int(np.argmax(rel))
    return float(rel[k]), k


def cmd_gradcheck(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        preset, grid, load = _build_problem(cfg)
        if grid.nx > 12 or grid.ny > 12:
            raise ConfigError("problem.nx/ny: gradcheck requires a mesh of "
                              "at most 12x12 (finite differences over every "
                              "design variable)")
        law = preset.material
        r_f = cfg.r_f
        seed = cfg.seed if cfg.seed is not None else 0
    else:
        preset = mesh.lbracket_preset(nx=8, ny=8, load_n=1e4)
        grid, load = mesh.build_preset(preset)
        law = preset.material
        r_f = 2.5 * grid.hx
        seed = args.seed
    bounds = Bounds(args.kappa_bar, args.psi_bar)

    rng = np.random.default_rng(seed)
    nd = grid.n_active
    x = rng.uniform(-0.9, 0.9, 2 * nd)
    lam = rng.uniform(0.0, 2.0, 4 * nd)
    state = ALState(lam=lam, mu=10.0, weight=0.01)

    problem = FemProblem(grid, load, law)
    wf = orientation.filter_matrix(grid, r_f)
    ops = diff_operators(grid)
    jac = constraint_gradients(grid, bounds, ops)

    def values(xv):
        st = orientation.evaluate(wf, xv[:nd], xv[nd:])
        sol = problem.solve(st.m, st.n)
        g = assemble_constraints(*curl_div_fd(grid, st.m, st.n, ops), bounds)
        pen, _ = al_penalty(g, state)
        return sol.compliance, sol.compliance + pen

    st = orientation.evaluate(wf, x[:nd], x[nd:])
    sol = problem.solve(st.m, st.n)
    dc_m, dc_n = problem.compliance_gradient(sol, st.m, st.n)
    gc = np.concatenate(orientation.backpropagate(wf, st, dc_m, dc_n))
    g = assemble_constraints(*curl_div_fd(grid, st.m, st.n, ops), bounds)
    _, wvec = al_penalty(g, state)
    gmn = jac.T @ wvec
    gl = gc + np.concatenate(
        orientation.backpropagate(wf, st, gmn[:nd], gmn[nd:]))

    if os.environ.get("TOWSTEER_GRADCHECK_CORRUPT"):
        gc = gc.copy()
        gc[nd // 2] = 1.5 * gc[nd // 2] + 1.0   # fault-injection hook for tests

    # step balances truncation against the ~1e-13 relative noise floor of
    # the sparse solve; smaller steps degrade the FD reference itself
    h = 1e-4
    fd_c = np.empty_like(x)
    fd_l = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cp, lp = values(xp)
        cm, lm = values(xm)
        fd_c[i] = (cp - cm) / (2 * h)
        fd_l[i] = (lp - lm) / (2 * h)

    err_c, kc = _rel_err(gc, fd_c)
    err_l, kl = _rel_err(gl, fd_l)

    def locate(k):
        comp = "s" if k < nd else "t"
        return f"{comp} of element {int(grid.active_ids[k % nd])}"

    print(f"compliance gradient: max relative error {err_c:.3e} at {locate(kc)}")
    print(f"AL gradient:         max relative error {err_l:.3e} at {locate(kl)}")
    ok = err_c < 1e-4 and err_l < 1e-4
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_render(args) -> int:
    try:
        grid, cols = postprocess.read_field_csv(args.field)
    except OSError as exc:
        raise ConfigError(f"cannot read field CSV {args.field}: {exc}") from None
    if "m" not in cols or "n" not in cols:
        raise ConfigError(f"{args.field}: field CSV must have columns m and n")
    m, n = cols["m"], cols["n"]
    os.makedirs(args.out, exist_ok=True)
    sep = args.separation if args.separation else 2.0 * max(grid.hx, grid.hy)
    lines = postprocess.trace_streamlines(grid, m, n, sep)
    svg = postprocess.render(grid, [
        postprocess.OrientationGlyphs(m=m, n=n),
        postprocess.StreamlinePaths(lines=lines),
    ], title="orientation field with streamlines")
    with open(os.path.join(args.out, "orientation.svg"), "w") as fh:
        fh.write(svg)
    kappa, psi = curl_div_fd(grid, m, n)
    for name, vals in (("kappa", kappa), ("psi", psi)):
        svg = postprocess.render(grid, [
            postprocess.Heatmap(values=np.abs(vals), label=f"|{name}|",
                                vmin=0.0, vmax=float(np.abs(vals).max())),
        ], title=f"abs {name} map")
        with open(os.path.join(args.out, f"{name}.svg"), "w") as fh:
            fh.write(svg)
    print(f"wrote orientation.svg, kappa.svg, psi.svg to {args.out}")
    return 0


def _apply_threads(n: Optional[str]):
    if n is None:
        n = os.environ.get("TOWSTEER_THREADS")
    if not n:
        return
    try:
        count = max(1, int(n))
    except ValueError:
        raise ConfigError(f"--threads/TOWSTEER_THREADS: not an integer: {n!r}") from None
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(count)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="towsteer",
        description="Fiber orientation optimization with curvature and "
                    "gap/overlap manufacturing constraints.")
    parser.add_argument("--threads", help="thread count for element-parallel "
                                          "loops (default: TOWSTEER_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="run an optimization from a config")
    p_opt.add_argument("config", help="TOML config path")
    p_opt.add_argument("--out", help="output directory (overrides config)")
    p_opt.add_argument("--dry-run", action="store_true",
                       help="validate and print the resolved config, run nothing")
    p_opt.set_defaults(func=cmd_optimize)

    p_chk = sub.add_parser("check", help="feasibility report for a field CSV")
    p_chk.add_argument("field", help="field CSV with m,n columns")
    p_chk.add_argument("--kappa-bar", type=float, required=True)
    p_chk.add_argument("--psi-bar", type=float, required=True)
    p_chk.set_defaults(func=cmd_check)

    p_grd = sub.add_parser("gradcheck",
                           help="finite-difference verification of gradients")
    p_grd.add_argument("--config", help="optional config (mesh must be <= 12x12)")
    p_grd.add_argument("--seed", type=int, default=0)
    p_grd.add_argument("--kappa-bar", type=float, default=1.0)
    p_grd.add_argument("--psi-bar", type=float, default=1.0)
    p_grd.set_defaults(func=cmd_gradcheck)

    p_rnd = sub.add_parser("render", help="render SVG panels from a field CSV")
    p_rnd.add_argument("field", help="field CSV with m,n columns")
    p_rnd.add_argument("--out", default="render_out")
    p_rnd.add_argument("--separation", type=float, default=None,
                       help="streamline separation in meters")
    p_rnd.set_defaults(func=cmd_render)

    args = parser.parse_args(argv)
    try:
        _apply_threads(args.threads)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SingularSystemError, NonFiniteGradientError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
