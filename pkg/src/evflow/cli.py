"""Batch pipeline: ``evflow {preprocess,synth,flow,trajectories,render,verify}``.

Every stage reads and writes files, so any stage can be rerun on its own.
Exit codes: 0 success, 2 validation error, 3 solver did not converge
(artifacts are still written and the report is flagged).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import assembly, geometry, kinematics, model, preprocess, render, solver, synth, variational
from .config import SCHEMA_VERSION, PipelineConfig

log = logging.getLogger("evflow")

EXIT_OK, EXIT_VALIDATION, EXIT_NOT_CONVERGED = 0, 2, 3


class StageError(Exception):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage
        self.cause = exc


def grid_for(shape) -> model.Grid3:
    n0, n1, n2 = (int(x) for x in shape)
    return model.Grid3.unit_cube(n0, n1, n2)


def _input(cfg: PipelineConfig, key: str) -> Path:
    if key not in cfg.inputs:
        raise model.ValidationError(f"config is missing inputs.{key}")
    return Path(cfg.inputs[key])


def _stage(name):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except StageError:
                raise
            except (model.EvflowError, ValueError, OSError) as exc:
                raise StageError(name, exc) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


# ---------------------------------------------------------------- stages


@_stage("synth")
def run_synth(cfg: PipelineConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    grid = grid_for(cfg.grid)
    res = synth.generate(cfg.synth, grid)
    paths = {}
    for name, arr in (("z", res.z), ("f", res.f), ("w_true", res.w_true), ("u_true", res.u_true)):
        paths[name] = out / f"{name}.evsf"
        model.save_field(paths[name], arr)
    return paths


@_stage("preprocess")
def run_preprocess(cfg: PipelineConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    volume = model.load_field(_input(cfg, "volume"))
    res = preprocess.preprocess_volume(volume, cfg.preprocess)
    model.save_field(out / "z.evsf", res.z)
    model.save_field(out / "f.evsf", res.f)
    with open(out / "centers.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame", "x", "y", "z", "intensity"])
        for t, centers in enumerate(res.centers):
            for c in centers:
                wr.writerow([t, repr(c.x), repr(c.y), repr(c.z), repr(c.intensity)])
    n_clamped = int(res.clamped.sum())
    if n_clamped:
        log.warning("%d surface samples outside the volume were clamped", n_clamped)
    return {"z": out / "z.evsf", "f": out / "f.evsf", "centers": out / "centers.csv", "clamped": n_clamped}


def solve_flow(z, f, cfg: PipelineConfig):
    """Geometry, coefficients, assembly and GMRES for a (z, f) pair.

    Returns ``(grid, atlas, df, coeffs, w, reports)``.
    """
    grid = grid_for(z.shape)
    atlas = geometry.build_atlas(z, grid)
    df = variational.data_derivatives(f, grid)
    coeffs = variational.el_coefficients(atlas, df, cfg.reg)
    w = np.zeros(grid.shape + (2,))
    reports = []
    if cfg.mode == "spatiotemporal":
        x, rep = solver.gmres(assembly.assemble(coeffs), cfg.solver)
        w = x.reshape(w.shape)
        reports.append(rep)
    else:
        for t in range(grid.n0):
            x, rep = solver.gmres(assembly.assemble(coeffs, "framewise", t), cfg.solver)
            w[t] = x.reshape(w.shape[1:])
            reports.append(rep)
    return grid, atlas, df, coeffs, w, reports


def render_frames(u: np.ndarray, out: Path, rcfg) -> list[Path]:
    planar = [render.scaled_projection(u[t]) for t in range(u.shape[0])]
    shared = render.auto_max_magnitude(planar) if rcfg.max_magnitude == "auto" else rcfg.max_magnitude
    paths = []
    for t, p in enumerate(planar):
        mx = render.auto_max_magnitude([p]) if rcfg.per_frame and rcfg.max_magnitude == "auto" else shared
        path = out / f"flow_{t:04d}.ppm"
        render.write_ppm(render.colorize(p, mx), path)
        paths.append(path)
    return paths


@_stage("flow")
def run_flow(cfg: PipelineConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    z = model.load_field(_input(cfg, "z"))
    f = model.load_field(_input(cfg, "f"))
    if z.shape != f.shape or z.ndim != 3:
        raise model.DimMismatch(f"z {z.shape} and f {f.shape} must be matching 3D fields")
    start = time.perf_counter()
    grid, atlas, df, coeffs, w, reports = solve_flow(z, f, cfg)
    wall = time.perf_counter() - start
    u = kinematics.reconstruct_u(w, atlas)
    m = kinematics.total_velocity(u, atlas)
    for name, arr in (("w", w), ("u", u), ("m", m)):
        model.save_field(out / f"{name}.evsf", arr)
    frames = render_frames(u, out, cfg.render)

    e0 = variational.energy_terms(np.zeros_like(w), atlas, df, cfg.reg)
    e1 = variational.energy_terms(w, atlas, df, cfg.reg)
    converged = all(r.converged for r in reports)
    rel = max(r.rel_residual for r in reports)
    report = {
        "schema_version": SCHEMA_VERSION,
        "grid": list(grid.shape),
        "mode": cfg.mode,
        "lambda0": cfg.lambda0,
        "lambda1": cfg.lambda1,
        "solver": {"rel_tol": cfg.solver.rel_tol, "max_iters": cfg.solver.max_iters,
                   "restart": cfg.solver.restart, "preconditioner": cfg.solver.preconditioner},
        "iterations": sum(r.iterations for r in reports),
        "rel_residual": rel,
        "converged": converged,
        "breakdown": any(r.breakdown for r in reports),
        "energy_before": {"data": e0[0], "reg": e0[1], "total": e0[0] + e0[1]},
        "energy_after": {"data": e1[0], "reg": e1[1], "total": e1[0] + e1[1]},
        "wall_time": wall,
        "table_row": {"lambda0": cfg.lambda0, "lambda1": cfg.lambda1, "runtime_s": wall, "rel_residual": rel},
    }
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"report": report, "frames": frames, "converged": converged}


@_stage("trajectories")
def run_trajectories(cfg: PipelineConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    m = model.load_field(_input(cfg, "m"))
    f = model.load_field(_input(cfg, "f"))
    z = model.load_field(cfg.inputs["z"]) if "z" in cfg.inputs else None
    grid = grid_for(f.shape)
    tc = cfg.trajectory
    seeds = kinematics.detect_seeds(f, tc.seed_frame, tc.threshold, grid)
    start = tc.start if tc.start is not None else tc.seed_frame
    trajs = kinematics.integrate_trajectories(m, seeds, grid, tc.step, z=z, start=start, stop=tc.stop)
    path = out / "trajectories.csv"
    kinematics.write_trajectories_csv(trajs, path, grid)
    return {"trajectories": path, "count": len(trajs)}


@_stage("render")
def run_render(cfg: PipelineConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    u = model.load_field(_input(cfg, "u"))
    if u.ndim != 4 or u.shape[-1] != 3:
        raise model.DimMismatch(f"u must have shape (n0, n1, n2, 3), got {u.shape}")
    return {"frames": render_frames(u, out, cfg.render)}


def run_verify(cfg: PipelineConfig) -> bool:
    """Quick invariant checks on the synthetic fixture described by the config."""
    grid = grid_for(cfg.grid)
    res = synth.generate(cfg.synth, grid)
    atlas, df = res.atlas, variational.data_derivatives(res.f, grid)
    coeffs = variational.el_coefficients(atlas, df, cfg.reg)
    ok = True

    def check(name, passed, detail=""):
        nonlocal ok
        ok &= bool(passed)
        print(f"{'PASS' if passed else 'FAIL'} {name} {detail}".rstrip())

    eye = np.einsum("...ij,...jk->...ik", atlas.g, atlas.ginv)
    check("metric inverse", np.abs(eye - np.eye(2)).max() < 1e-12)
    orth = np.einsum("...ji,...jk,...kl->...il", atlas.alpha, atlas.g, atlas.alpha)
    check("frame orthonormal", np.abs(orth - np.eye(2)).max() < 1e-12)
    check("q = -d", np.array_equal(coeffs.q, -coeffs.d))
    rng = np.random.default_rng(0)
    wr = rng.standard_normal(grid.shape + (2,))
    atlas2 = geometry.build_atlas(res.z, grid, first=2)
    u = kinematics.reconstruct_u(wr, atlas)
    r1 = variational.energy_terms(wr, atlas, df, cfg.reg)[1]
    r2 = variational.energy_terms(geometry.frame_coordinates(u, atlas2), atlas2, df, cfg.reg)[1]
    check("frame invariance", abs(r1 - r2) <= 1e-8 * abs(r1), f"rel={abs(r1 - r2) / abs(r1):.2e}")
    sysm = assembly.assemble(coeffs)
    tang = np.abs(np.einsum("...a,...a->...", u, atlas.normal)).max()
    check("tangency", tang <= 1e-10 * (1 + np.abs(u).max()))
    check("no empty rows", np.all(np.diff(sysm.row_offsets) > 0))
    return ok


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evflow", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON config file")
        sp.add_argument("--lambda0", type=float)
        sp.add_argument("--lambda1", type=float)
        sp.add_argument("--mode", choices=["spatiotemporal", "framewise"])
        sp.add_argument("--tol", type=float, dest="rel_tol")
        sp.add_argument("--max-iters", type=int, dest="max_iters")
        sp.add_argument("--restart", type=int)
        sp.add_argument("--step", type=float)
        sp.add_argument("--out", type=str)
        return sp

    pre = common(sub.add_parser("preprocess", help="volume -> (z, f, centres)"))
    pre.add_argument("volume", nargs="?", help="4D EVSF volume")
    common(sub.add_parser("synth", help="write a synthetic (z, f, w_true, u_true) fixture"))
    fl = common(sub.add_parser("flow", help="solve for the flow of a (z, f) pair"))
    fl.add_argument("--z", dest="z_path")
    fl.add_argument("--f", dest="f_path")
    tr = common(sub.add_parser("trajectories", help="integrate trajectories of m"))
    tr.add_argument("--m", dest="m_path")
    tr.add_argument("--f", dest="f_path")
    tr.add_argument("--z", dest="z_path")
    rd = common(sub.add_parser("render", help="color-coded PPM frames of u"))
    rd.add_argument("--u", dest="u_path")
    common(sub.add_parser("verify", help="run invariant checks on the synthetic fixture"))
    return p


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    inputs = dict(cfg.inputs)
    for key, attr in (("volume", "volume"), ("z", "z_path"), ("f", "f_path"), ("m", "m_path"), ("u", "u_path")):
        val = getattr(args, attr, None)
        if val is not None:
            inputs[key] = val
    return cfg.with_overrides(
        inputs=inputs, lambda0=args.lambda0, lambda1=args.lambda1, mode=args.mode, rel_tol=args.rel_tol,
        max_iters=args.max_iters, restart=args.restart, step=args.step, out=args.out,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "synth":
            result = run_synth(cfg)
        elif args.command == "preprocess":
            result = run_preprocess(cfg)
        elif args.command == "flow":
            result = run_flow(cfg)
            rep = result["report"]
            print(f"iterations={rep['iterations']} rel_residual={rep['rel_residual']:.6g} converged={rep['converged']}")
            if not result["converged"]:
                print("solver did not reach the requested tolerance", file=sys.stderr)
                return EXIT_NOT_CONVERGED
            return EXIT_OK
        elif args.command == "trajectories":
            result = run_trajectories(cfg)
        elif args.command == "render":
            result = run_render(cfg)
        else:
            return EXIT_OK if run_verify(cfg) else 1
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if isinstance(exc.cause, (ValueError, model.EvflowError)) else 1
    except (model.ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    log.info("%s done: %s", args.command, result)
    return EXIT_OK
