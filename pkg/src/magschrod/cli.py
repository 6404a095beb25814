"""Command-line entry point: ``magschrod {forward,dnmap,cgo,reconstruct,validate}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 missing
upstream artifact.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from . import cgo as C
from . import dnmap as DN
from . import forward as F
from . import recon as R
from . import validate as V
from .config import get_threads, set_threads
from .fields import (Grid3, ScalarField, Scenario, VectorField, apply_magnetic, make_potential, reflect_extend,
                     smooth_step, spectral_gradient)
from .io import write_csv, write_field, write_json

log = logging.getLogger("magschrod")

EXIT_CONFIG, EXIT_NUMERIC, EXIT_UPSTREAM = 2, 3, 4


class ConfigError(Exception):
    pass


class UpstreamMissing(Exception):
    pass


# ---------------------------------------------------------------- config

def load_schema() -> dict:
    return json.loads(resources.files("magschrod").joinpath("config_schema.json").read_text())


def load_config(path, seed=None) -> dict:
    """Read and validate a config; a run manifest is accepted and its embedded config used."""
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}")
    if isinstance(cfg, dict) and "command" in cfg and "config" in cfg:
        cfg = cfg["config"]
    if seed is not None and isinstance(cfg, dict):
        cfg["seed"] = int(seed)
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config invalid at {e.json_path}: {e.message}")
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _amp(v):
    if isinstance(v, dict):
        return complex(v["re"], v["im"])
    return v


def _grid(cfg: dict, half: bool) -> Grid3:
    gc = cfg["scenario"]["grid"]
    n3 = gc.get("n3", gc["n"] - 1 if half else gc["n"])
    g = Grid3.cube(gc["n"], gc["half_width"], n3=n3)
    if half:
        if n3 % 2 == 0:
            raise ConfigError("config invalid at $.scenario.grid.n3: half-space commands need an odd n3")
        return g.lower_half()
    return g


def _sum_primitives(prims, grid: Grid3, vector: bool, ball):
    shape = (3,) + grid.dims if vector else grid.dims
    out = np.zeros(shape, complex)
    for p in prims or []:
        p = dict(p)
        kind = p.pop("kind")
        if "amplitude" in p:
            p["amplitude"] = _amp(p["amplitude"])
        try:
            f = make_potential(kind, grid, ball, **p)
        except (ValueError, TypeError, KeyError) as e:
            raise ConfigError(f"config invalid at primitive {kind!r}: {e}")
        if kind == "gradient_field":
            if not vector:
                raise ConfigError("config invalid: gradient_field is a vector primitive")
            f = f[0]
        vals = f.values
        if vector and vals.ndim == 3:
            raise ConfigError(f"config invalid: {kind!r} needs a 3-vector amplitude for A")
        if not vector and vals.ndim == 4:
            raise ConfigError(f"config invalid: {kind!r} needs a scalar amplitude for q")
        out = out + vals
    return out


def _gauge(prim: dict, grid: Grid3, ball) -> np.ndarray:
    """Spectral gradient of the gauge psi, the exact discrete gauge of the spectral operator.

    On a half grid psi is reflected evenly first, so the result matches the mirror-grid
    extension used downstream.
    """
    if prim["kind"] != "gradient_field":
        raise ConfigError("config invalid at $.scenario.second.gauge: kind must be gradient_field")
    p = {k: v for k, v in prim.items() if k != "kind"}
    try:
        _, psi = make_potential("gradient_field", grid, ball, **p)
    except (ValueError, TypeError, KeyError) as e:
        raise ConfigError(f"config invalid at $.scenario.second.gauge: {e}")
    if grid.is_lower_half:
        ext = reflect_extend(psi, ["even"])
        D = spectral_gradient(ext.values, ext.grid).real[..., :grid.dims[2]]
    else:
        D = spectral_gradient(psi.values, grid).real
    # drop the spectral ringing outside supp psi so the pair stays supported in B
    inside = grid.radius(psi.support_center) <= psi.support_radius
    dropped = np.linalg.norm(D[:, ~inside]) / max(np.linalg.norm(D), 1e-300)
    log.debug("gauge ringing outside its support: %.2e", dropped)
    return D * inside[None]


def build_scenario(cfg: dict, grid: Grid3, part: str = "first") -> Scenario:
    s = cfg["scenario"]
    ball = (tuple(s["support_ball"]["center"]), float(s["support_ball"]["radius"]))
    src = s if part == "first" else s.get("second", {})
    A = _sum_primitives(src.get("A"), grid, True, ball).real
    if part == "second" and "gauge" in src:
        A = A + _gauge(src["gauge"], grid, ball)
    q = _sum_primitives(src.get("q"), grid, False, ball)
    sc = Scenario(float(s["k"]), VectorField(grid, A), ScalarField(grid, q), ball,
                  tuple(s["gamma1_patch"]), tuple(s["gamma2_patch"]))
    try:
        sc.validate()
    except ValueError as e:
        raise ConfigError(f"config invalid at $.scenario: {e}")
    return sc


def _solver(cfg):
    s = cfg.get("solver", {})
    return float(s.get("tol", 1e-6)), int(s.get("max_iter", 500))


# ---------------------------------------------------------------- commands

def cmd_forward(cfg: dict, out: Path) -> list:
    """Free-space solve on the full grid; a ``manufactured`` solution sets ``f = (L - k^2) u*``."""
    g = _grid(cfg, half=False)
    sc = build_scenario(cfg, g)
    s = cfg["scenario"]
    tol, maxiter = _solver(cfg)
    truth = None
    if "manufactured" in s:
        truth = _sum_primitives([s["manufactured"]], g, False, None)
        f = apply_magnetic(sc.A.values.real, sc.q.values, truth, g) - sc.k ** 2 * truth
    elif s.get("source"):
        f = _sum_primitives(s["source"], g, False, None)
    else:
        raise ConfigError("config invalid at $.scenario: forward needs 'source' or 'manufactured'")
    u, rep = F.solve_freespace(F.LSOperator.build(sc), ScalarField(g, f), tol, maxiter)
    if not rep.converged:
        raise F.SolverError(f"GMRES did not converge (residual {rep.relative_residual:.2e})")
    write_field(out / "u.msf", u)
    rep.to_csv(out / "solve_report.csv")
    metrics = {"iterations": rep.iterations, "relative_residual": rep.relative_residual,
               "converged": rep.converged}
    if truth is not None:
        metrics["manufactured_rel_error"] = float(np.linalg.norm(u.values - truth) / np.linalg.norm(truth))
    write_json(out / "forward_metrics.json", metrics)
    return ["u.msf", "solve_report.csv", "forward_metrics.json"]


def _trace_fn(tc: dict):
    c = np.asarray(tc["center"], float)
    sig, rad, wid = tc["sigma"], tc.get("radius", 1.0), tc.get("width", 0.25)

    def fn(x1, x2):
        rr = np.hypot(x1 - c[0], x2 - c[1])
        return np.exp(-rr ** 2 / (2 * sig ** 2)) * smooth_step((rad - rr) / wid)
    return fn


def cmd_dnmap(cfg: dict, out: Path) -> list:
    g = _grid(cfg, half=True)
    sc = build_scenario(cfg, g)
    s = cfg["scenario"]
    if "trace" not in s:
        raise ConfigError("config invalid at $.scenario: dnmap needs 'trace'")
    if s.get("gauge_fix", False):
        A, _ = DN.gauge_fix(VectorField(g, sc.A.values.real))
        sc = Scenario(sc.k, A, sc.q, sc.support_ball, sc.gamma1_patch, sc.gamma2_patch)
    tr = DN.BoundaryTrace.from_function(g, _trace_fn(s["trace"]), sc.gamma1_patch)
    tol, _ = _solver(cfg)
    rec = DN.dn_apply(sc, tr, tol=tol)
    x1, x2 = tr.plane_grid.mesh()
    write_csv(out / "trace.csv", ["x1", "x2", "re", "im"],
              zip(x1.ravel(), x2.ravel(), tr.values.real.ravel(), tr.values.imag.ravel()))
    rec.to_csv(out / "dn.csv")
    DN.write_batch_manifest(out / "dn_manifest.json", [("trace.csv", "dn.csv", DN.scenario_hash(sc))])
    return ["trace.csv", "dn.csv", "dn_manifest.json"]


DEFAULT_XI = [[1.0, 0.5, 0.0]]


def cmd_cgo(cfg: dict, out: Path) -> list:
    """CGO factors on the mirror grid for each ``xi`` and ``h`` of the cgo block."""
    g = _grid(cfg, half=True)
    sc = F.extend_scenario(build_scenario(cfg, g))
    cc = cfg.get("cgo", {})
    ladder = [float(h) for h in cc.get("h_ladder", R.DEFAULT_LADDER)]
    sign = int(cc.get("gamma_sign", 1))
    entries, files = [], []
    hmin = C.min_admissible_h(sc.A.grid)
    for i, xi in enumerate(cc.get("xi", DEFAULT_XI)):
        g1, g2 = C.special_gammas(np.asarray(xi, float), sign)
        for j, h in enumerate(ladder):
            if h < hmin:
                raise ValueError(f"h = {h} is below the minimum admissible h {hmin:.4g}")
            spec = C.make_zeta_pair(h, xi, g1, g2)
            sol = C.make_cgo(sc, spec, 1)
            if cc.get("remainder", False):
                C.solve_remainder(sol, sc)
            stem = f"cgo_x{i}_h{j}"
            man = C.write_cgo(sol, out, stem)
            entries.append(man)
            files += [stem + ".json"] + sorted(man["files"].values())
    write_json(out / "cgo_manifest.json", {"h_ladder": ladder, "xi": cc.get("xi", DEFAULT_XI),
                                           "gamma_sign": sign, "entries": entries})
    return ["cgo_manifest.json"] + files


def cmd_reconstruct(cfg: dict, out: Path, mode=None, cgo_manifest=None, base: Path = Path(".")) -> list:
    rc = cfg.get("recon", {})
    mode = mode or rc.get("mode", "measurement")
    ladder = rc.get("h_ladder", list(R.DEFAULT_LADDER))
    if mode != "oracle":
        if cgo_manifest is not None:
            p = Path(cgo_manifest)
        elif rc.get("cgo_manifest") is not None:
            p = Path(rc["cgo_manifest"])
            p = p if p.is_absolute() else base / p
        else:
            raise UpstreamMissing("measurement-mode reconstruction needs a cgo manifest (or --mode oracle)")
        if not p.exists():
            raise UpstreamMissing(f"cgo manifest {p} not found")
        ladder = json.loads(p.read_text())["h_ladder"]
        if len(ladder) < 2:
            raise ConfigError("cgo manifest ladder needs at least two rungs")
    g = _grid(cfg, half=True)
    pair = R.ScenarioPair(build_scenario(cfg, g, "first"), build_scenario(cfg, g, "second"))
    res = R.reconstruct(pair, mode, ladder, rc.get("extrapolation_order"))
    res.write(out)
    if res.q_field is None:
        log.warning("q not recovered: %s", res.metrics["q_status"])
        return ["curl.msf", "recon_metrics.json"]
    return ["curl.msf", "q.msf", "recon_metrics.json"]


def default_battery(cfg: dict, seed: int) -> list:
    vc = cfg.get("validate", {})
    reports = [V.green_convergence_probe(tuple(vc.get("green_ns", (32, 64))), seed=seed)]
    n = int(vc.get("carleman_n", 48))
    g = Grid3.cube(n, 1.0)
    hs = vc.get("carleman_h_ladder", [0.2, 0.14, 0.1, 0.07])
    c0 = float(vc.get("carleman_c0", 0.05))
    eps = float(vc.get("convexify_eps", 0.5))
    al = (0.0, 0.0, 1.0)
    Z = VectorField(g, np.zeros((3,) + g.dims))
    q0 = ScalarField(g, np.zeros(g.dims, complex))
    cone = np.clip(1 - g.radius() / 0.6, 0, None)
    Acone = VectorField(g, np.stack([0.8 * cone, -0.5 * cone, 0.3 * cone]))
    for weight, e in (("linear", 0.0), ("convexified", eps)):
        bat = V.carleman_battery(g, al, seed=seed, weight=weight, eps=e)
        base = V.carleman_probe(Z, q0, al, bat, hs, weight, e, c0=c0)
        reports.append(base)
        lip = V.carleman_probe(Acone, q0, al, bat, hs, weight, e, c0=max(c0, 0.5 * min(base.values)))
        lip.probe_name += "_lipschitz_A"
        reports.append(lip)
    m = int(vc.get("rellich_n", 48))
    gr = Grid3.cube(m, 1.0)
    radii = vc.get("rellich_radii", [0.55, 0.65, 0.75, 0.85, 0.95])
    ball = ((0.0, 0.0, 0.0), 0.5)
    r = gr.radius()
    reports.append(V.rellich_probe(ScalarField(gr, np.zeros(gr.dims, complex)), radii, ball))
    for k in (1.0, 2.0, 5.0):
        rep = V.rellich_probe(ScalarField(gr, np.exp(1j * k * r) / (4 * np.pi * r)), radii, ball)
        rep.passed = rep.passed and not rep.meta["null"]
        rep.probe_name = f"rellich_point_source_k{k:g}"
        reports.append(rep)
    sc = Scenario(2.0, VectorField(gr, np.zeros((3,) + gr.dims)),
                  make_potential("gaussian_bump", gr, None, amplitude=2.0, sigma=0.1, cutoff=0.45), ball,
                  (-0.9, 0.9, -0.9, 0.9), (-0.9, 0.9, -0.9, 0.9))
    f = make_potential("gaussian_bump", gr, None, amplitude=1.0, sigma=0.08, cutoff=0.4)
    op = F.LSOperator.build(sc)
    u1, _ = F.solve_freespace(op, f, tol=1e-10)
    u2, _ = F.solve_freespace(op, f, tol=1e-10)
    rep = V.rellich_probe(ScalarField(gr, u1.values - u2.values), radii, ball, scale=float(np.abs(u1.values).max()))
    rep.probe_name = "rellich_self_difference"
    reports.append(rep)
    return reports


def cmd_validate(cfg: dict, out: Path) -> list:
    reports = default_battery(cfg, int(cfg["seed"]) % (2 ** 32))
    V.write_reports(out / "probes.jsonl", reports)
    summary = {r.probe_name: r.passed for r in reports}
    write_json(out / "validate_summary.json", summary)
    failed = [k for k, v in summary.items() if not v]
    if failed:
        raise ValueError(f"probes failed: {', '.join(failed)}")
    return ["probes.jsonl", "validate_summary.json"]


COMMANDS = {"forward": cmd_forward, "dnmap": cmd_dnmap, "cgo": cmd_cgo,
            "reconstruct": cmd_reconstruct, "validate": cmd_validate}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config or a previous run manifest")
    common.add_argument("--out", help="output directory (default: output.dir or ./out)")
    common.add_argument("--threads", type=int, help="FFT workers (fallback: MST_THREADS, then 1)")
    common.add_argument("--seed", type=int, help="overrides the config seed (unsigned 64-bit)")
    p = argparse.ArgumentParser(prog="magschrod", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"magschrod {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("forward", "dnmap", "cgo", "validate"):
        sub.add_parser(name, parents=[common])
    r = sub.add_parser("reconstruct", parents=[common])
    r.add_argument("--mode", choices=["oracle", "measurement"])
    r.add_argument("--cgo-manifest", help="cgo_manifest.json from a previous cgo run")
    return p


def run_manifest(command: str, cfg: dict, outputs: list, wall: float) -> dict:
    return {"command": command, "config": cfg, "config_hash": config_hash(cfg), "seed": cfg["seed"],
            "versions": {"magschrod": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                         "python": platform.python_version()},
            "threads": get_threads(), "wall_time_s": wall, "outputs": sorted(outputs)}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        log.error("--seed must be an unsigned 64-bit integer")
        return EXIT_CONFIG
    if args.threads is not None:
        set_threads(args.threads)
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config, args.seed)
        out = Path(args.out or cfg.get("output", {}).get("dir", "out"))
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "reconstruct":
            outputs = cmd_reconstruct(cfg, out, args.mode, args.cgo_manifest, Path(args.config).resolve().parent)
        else:
            outputs = COMMANDS[args.command](cfg, out)
    except ConfigError as e:
        log.error("%s", e)
        return EXIT_CONFIG
    except UpstreamMissing as e:
        log.error("%s", e)
        return EXIT_UPSTREAM
    except (F.SolverError, ValueError, FloatingPointError, np.linalg.LinAlgError) as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC
    write_json(out / "run_manifest.json", run_manifest(args.command, cfg, outputs, time.perf_counter() - t0))
    log.info("%s finished; outputs in %s", args.command, out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
