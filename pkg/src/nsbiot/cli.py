"""Command line entry point: ``nsbiot run|validate|convergence``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioConfig, build_config, load_config
from .mesh import MeshError, load_mesh, mesh_size
from .postprocess import export_vtk, interface_rows, write_interface_csv
from .system import SolverError, TimeStepper, run, set_initial_state

log = logging.getLogger("nsbiot")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _mesh_info(mesh):
    return {"triangles": int(mesh.n_triangles), "vertices": int(mesh.n_vertices), "h": mesh_size(mesh)}


def build_scenario(cfg: ScenarioConfig):
    """Scenario object for the time-dependent scenarios."""
    from .scenarios import custom_scenario, filter_scenario

    if cfg.scenario == "example3_filter":
        return filter_scenario(cfg.material, h=cfg.mesh_h or 0.0125, p_ref=cfg.p_ref, dp=cfg.dp,
                               **_param_overrides(cfg))
    if cfg.scenario == "custom":
        mp = load_mesh(cfg.poro_file)
        mf = load_mesh(cfg.fluid_file) if cfg.fluid_file is not None else None
        return custom_scenario(mp, mf, cfg.params, cfg.p_ref, cfg.dp)
    raise ValueError(f"scenario {cfg.scenario!r} is not time-dependent")


def _param_overrides(cfg: ScenarioConfig):
    p = cfg.params
    return dict(mu=p.mu, rho=p.rho, lambda_p=p.lambda_p, mu_p=p.mu_p, s0=p.s0, K=p.K, alpha_p=p.alpha_p,
                alpha_bjs=p.alpha_bjs, kappa1=p.kappa1, kappa2=p.kappa2, rho_p=p.rho_p, beta=p.beta)


def _run_convergence(cfg: ScenarioConfig, stage: Path) -> dict:
    from .verify import convergence_study

    levels = cfg.levels or [0, 1, 2, 3]

    def report(res):
        log.info("level %d: h_f=%.4f h_p=%.4f newton=%.2f (%.1fs)", res.level, res.h_f, res.h_p,
                 res.avg_newton, res.seconds)

    rep = convergence_study(levels, cfg.params, cfg.dt, cfg.T, cfg.newton, cfg.threads, on_level=report)
    (stage / "convergence.csv").write_text(rep.to_csv())
    return {
        "levels": [{"level": r.level, "h_f": r.h_f, "h_p": r.h_p, "h_tp": r.h_tp, "ndof": r.ndof,
                    "newton": r.newton_counts, "avg_newton": r.avg_newton, "seconds": r.seconds}
                   for r in rep.levels],
    }


def _run_transient(cfg: ScenarioConfig, stage: Path, sc=None) -> dict:
    sc = sc or build_scenario(cfg)
    disc = sc.disc
    stepper = TimeStepper(disc, sc.params, sc.data, cfg.dt, cfg.newton, cfg.threads, cfg.interface_method)
    state0 = set_initial_state(disc, "zero")
    shift = sc.shift()
    n = cfg.n_steps
    width = max(4, len(str(n)))
    iface = stage / "interface.csv"
    want_iface = cfg.interface_csv and disc.has_fluid

    def on_step(m, state, info):
        if cfg.vtk and (m % cfg.every == 0 or m == n):
            export_vtk(disc, state, stage / f"state_{m:0{width}d}.vtk", sc.params.rho, shift)
        if want_iface and (m % cfg.every == 0 or m == n):
            write_interface_csv(iface, interface_rows(disc, state, sc.params.rho, m, shift), append=True)
        log.info("step %d/%d t=%g newton=%d", m, n, state.t, info.iters)

    _, counts = run(stepper, state0, n, on_step)
    meshes = {"poro": _mesh_info(disc.mesh_p)}
    if disc.has_fluid:
        meshes["fluid"] = _mesh_info(disc.mesh_f)
    return {"meshes": meshes, "ndof": int(disc.ndof), "steps": n, "newton": counts,
            "avg_newton": float(np.mean(counts)) if counts else 0.0}


def execute(cfg: ScenarioConfig, out_dir: Path, scenario=None) -> dict:
    """Run a scenario; artifacts appear in ``out_dir`` only if the run succeeds."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    t0 = time.perf_counter()
    try:
        if cfg.scenario == "example1_mms":
            info = _run_convergence(cfg, stage)
        else:
            info = _run_transient(cfg, stage, scenario)
        (stage / "config.resolved").write_text(cfg.canonical_text())
        manifest = {
            "tool": "nsbiot",
            "version": __version__,
            "scenario": cfg.scenario,
            "config_digest": cfg.digest(),
            "threads": cfg.threads,
            "seconds": time.perf_counter() - t0,
            **info,
            "outputs": {p.name: _sha256(p) for p in sorted(stage.iterdir())},
        }
        (stage / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        out_dir.mkdir(parents=True, exist_ok=True)
        for p in sorted(stage.iterdir()):
            shutil.move(str(p), out_dir / p.name)
        return manifest
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def validate(cfg: ScenarioConfig) -> list:
    """Dry-run checks beyond parsing: meshes build and satisfy their invariants."""
    report = [f"scenario {cfg.scenario}", f"params ok (kappa1={cfg.params.kappa1:g}, kappa2={cfg.params.kappa2:g})",
              f"time: {cfg.n_steps} steps of dt={cfg.dt:g}"]
    if cfg.scenario == "example1_mms":
        from .verify import example1_meshes

        for lv in cfg.levels:
            mf, mp = example1_meshes(lv)
            mf.validate()
            mp.validate()
            report.append(f"level {lv}: h_f={mesh_size(mf):.4f} h_p={mesh_size(mp):.4f}")
    else:
        sc = build_scenario(cfg)
        report.append(f"meshes ok: {sc.disc.mesh_p.n_triangles} poro triangles"
                      + (f", {sc.disc.mesh_f.n_triangles} fluid triangles" if sc.disc.has_fluid else ""))
    return report


def _parser():
    ap = argparse.ArgumentParser(prog="nsbiot", description="Navier-Stokes / Biot mixed finite element solver")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run a scenario from a config file"),
                           ("validate", "check a config without solving"),
                           ("convergence", "manufactured-solution convergence study")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", type=Path, required=(name != "convergence"))
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=int, help="assembly threads (overrides threads)")
        p.add_argument("--levels", help="comma-separated refinement levels (overrides levels)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.threads is not None:
        overrides["threads"] = str(args.threads)
    if args.levels is not None:
        overrides["levels"] = args.levels
    try:
        if args.config is None:
            cfg = build_config({"scenario": ("example1_mms", None)}, overrides=overrides)
        else:
            cfg = load_config(args.config, overrides)
        if args.command == "convergence" and cfg.scenario != "example1_mms":
            raise ConfigError("the convergence command needs scenario = example1_mms", "scenario")
        if args.command == "validate":
            for line in validate(cfg):
                print(line)
            print("valid")
            return EXIT_OK
        scenario = None
        if cfg.scenario != "example1_mms":
            # fail on bad meshes before anything is written
            scenario = build_scenario(cfg)
    except (ConfigError, MeshError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out or cfg.out_dir
    try:
        manifest = execute(cfg, out, scenario)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {len(manifest['outputs']) + 1} files to {out}")
    if cfg.scenario == "example1_mms":
        print((Path(out) / "convergence.csv").read_text(), end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
