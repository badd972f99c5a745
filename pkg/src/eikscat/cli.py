"""Command-line driver: ``eikscat {eikonal,flow,gft,verify,suite}``.

Every task reads a JSON config (or a built-in preset), writes CSV/JSON into
``--out`` and a ``manifest.json`` with the input hash, library versions and
timings. Exit codes: 0 pass, 1 numeric FAIL, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, EikscatError

FORMAT = "eikscat/1"
TASKS = ("eikonal", "flow", "gft", "verify", "suite")

PRESETS = {
    "radial_oracle": {
        "format": FORMAT,
        "task": "eikonal",
        "model": {"kind": "radial_power", "dim": 2, "amplitude": 0.1, "sigma": 0.6},
        "lambda": 1.0,
        "eps": 0.2,
        "N": 1024,
        "sample": {"n": 50, "r_min": 10.0, "r_max": 1000.0, "seed": 0},
        "oracle": True,
    },
    "generic_flow": {
        "format": FORMAT,
        "task": "flow",
        "model": {"kind": "anisotropic", "dim": 2, "sigma": 0.6, "rho": 0.7},
        "lambda": 0.5,
        "eps": 0.2,
        "directions": 16,
        "s_max": 1000.0,
        "samples": 60,
        "sphere_map": {"nodes": 256, "s_max": 1000.0},
    },
    "free_gft": {
        "format": FORMAT,
        "task": "gft",
        "model": {"kind": "zero", "dim": 2},
        "lambda": 0.5,
        "eps": 0.2,
        "grid": {"L": 60.0, "n": 512},
        "epsilons": [0.0],
        "recipes": ["radial", "cesaro", "eikonal"],
    },
    "zero_verify": {
        "format": FORMAT,
        "task": "verify",
        "model": {"kind": "zero", "dim": 2},
        "lambda": 1.0,
        "eps": 0.2,
    },
}


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

_NUMERIC = {"lambda": (0.0, None), "eps": (0.0, 1.0), "N": (8, 1 << 16), "s_max": (1.0, 1e6),
            "directions": (1, 1 << 16), "samples": (2, 1 << 16)}


def _positive_number(errors, cfg, key, lo, hi):
    if key not in cfg:
        return
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        errors.append((key, "must be a finite number"))
    elif v <= lo or (hi is not None and v > hi):
        errors.append((key, f"must lie in ({lo}, {hi if hi is not None else 'inf'}]"))


def validate_config(cfg, task: str | None = None) -> dict:
    """Check structure and ranges; raise :class:`ConfigInvalid` listing every problem."""
    errors = []
    if not isinstance(cfg, dict):
        raise ConfigInvalid([("<root>", "config must be a JSON object")])
    cfg = copy.deepcopy(cfg)
    if task is not None:
        cfg.setdefault("task", task)
        if cfg["task"] != task:
            errors.append(("task", f"config is for {cfg['task']!r}, command is {task!r}"))
    if cfg.get("task") not in TASKS:
        errors.append(("task", f"must be one of {TASKS}"))
    fmt = cfg.setdefault("format", FORMAT)
    if fmt != FORMAT:
        errors.append(("format", f"unsupported format tag {fmt!r}"))
    if cfg.get("task") != "suite":
        model = cfg.get("model")
        if not isinstance(model, dict) or "kind" not in model:
            errors.append(("model", "must be an object with a 'kind'"))
        elif model["kind"] not in ("zero", "radial_power", "oscillatory", "anisotropic", "three_body",
                                   "tabulated"):
            errors.append(("model.kind", f"unknown kind {model['kind']!r}"))
    for key, (lo, hi) in _NUMERIC.items():
        _positive_number(errors, cfg, key, lo, hi)
    if "points" in cfg:
        pts = cfg["points"]
        try:
            arr = np.asarray(pts, dtype=float)
            if arr.ndim != 2 or arr.shape[0] == 0:
                errors.append(("points", "must be a non-empty list of coordinate lists"))
        except (TypeError, ValueError):
            errors.append(("points", "must contain numbers"))
    if "sample" in cfg:
        smp = cfg["sample"]
        if not isinstance(smp, dict):
            errors.append(("sample", "must be an object"))
        else:
            for k2 in ("r_min", "r_max"):
                _positive_number(errors, smp, k2, 0.0, None)
            if smp.get("r_min", 10.0) >= smp.get("r_max", 1000.0):
                errors.append(("sample", "r_min must be below r_max"))
    if cfg.get("task") == "gft":
        grid = cfg.get("grid", {})
        if not isinstance(grid, dict):
            errors.append(("grid", "must be an object"))
        else:
            _positive_number(errors, grid, "L", 0.0, None)
            if "n" in grid and (not isinstance(grid["n"], int) or grid["n"] < 16):
                errors.append(("grid.n", "must be an integer >= 16"))
        for e in cfg.get("epsilons", []):
            if not isinstance(e, (int, float)) or not 0.0 <= e <= 0.1:
                errors.append(("epsilons", "entries must lie in [0, 0.1]"))
        bad = set(cfg.get("recipes", [])) - {"radial", "cesaro", "eikonal"}
        if bad:
            errors.append(("recipes", f"unknown recipes {sorted(bad)}"))
        if "interval" in cfg:
            iv = cfg["interval"]
            if (not isinstance(iv, list) or len(iv) != 2 or not all(isinstance(a, (int, float)) for a in iv)
                    or not 0 < iv[0] < iv[1]):
                errors.append(("interval", "must be [lo, hi] with 0 < lo < hi"))
    if cfg.get("task") == "suite" and cfg.get("level", "quick") not in ("quick", "full"):
        errors.append(("level", "must be 'quick' or 'full'"))
    if errors:
        raise ConfigInvalid(errors)
    return cfg


def load_config(path=None, preset=None, task=None) -> tuple[dict, Path]:
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigInvalid([("preset", f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")])
        return validate_config(PRESETS[preset], task), Path.cwd()
    if path is None:
        if task == "suite":
            return validate_config({"task": "suite"}, task), Path.cwd()
        raise ConfigInvalid([("--config", "a config file or --preset is required")])
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigInvalid([("--config", f"no such file {str(path)!r}")]) from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid([("<json>", f"malformed JSON: {exc}")]) from None
    return validate_config(cfg, task), path.parent


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    """Deterministic CSV: shortest round-trip float repr, ``\\n`` line endings."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _sha_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_gnuplot(path: Path, csv_name: str, columns: tuple[int, int], title: str, logscale: bool = False) -> None:
    lines = ["set datafile separator ','", f"set title '{title}'", "set key autotitle columnhead"]
    if logscale:
        lines.append("set logscale xy")
    lines.append(f"plot '{csv_name}' using {columns[0]}:{columns[1]} with linespoints")
    path.write_text("\n".join(lines) + "\n")


def _versions() -> dict:
    import scipy
    import sympy

    from . import __version__

    return {"eikscat": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "sympy": sympy.__version__, "python": platform.python_version()}


def write_manifest(out: Path, task: str, cfg: dict, files: list[str], timings: dict, status: str) -> dict:
    man = {
        "format": FORMAT,
        "task": task,
        "status": status,
        "inputs_sha256": config_hash(cfg),
        "config": cfg,
        "versions": _versions(),
        "files": {f: _sha_file(out / f) for f in sorted(files)},
        "timings": timings,
    }
    (out / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------

def _model(cfg, base_dir):
    from .potential import model_from_spec

    return model_from_spec(cfg["model"], base_dir)


def _metric(cfg, base_dir, model=None):
    from .potential import make_conformal_metric

    model = _model(cfg, base_dir) if model is None else model
    return make_conformal_metric(model, float(cfg.get("lambda", 1.0)), float(cfg.get("eps", 0.2)))


def _sample_points(cfg, dim):
    if "points" in cfg:
        pts = np.asarray(cfg["points"], dtype=float)
        if pts.shape[1] != dim:
            raise ConfigInvalid([("points", f"points must have {dim} coordinates")])
        return pts
    smp = cfg.get("sample", {})
    n = int(smp.get("n", 50))
    rng = np.random.default_rng(int(smp.get("seed", 0)))
    r = np.exp(rng.uniform(math.log(smp.get("r_min", 10.0)), math.log(smp.get("r_max", 1000.0)), n))
    dirs = rng.normal(size=(n, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return r[:, None] * dirs


def _eikonal_chunk(args):
    cfg, base_dir, pts = args
    from .eikonal import EikonalField, RadialOracle

    metric = _metric(cfg, base_dir)
    field = EikonalField(metric, int(cfg.get("N", 1024)))
    oracle = RadialOracle(metric) if cfg.get("oracle") and metric.model.radial else None
    rows = []
    for x in pts:
        S, g = field.eval_S(x)
        gf = float(metric.factor(x[None, :])[0])
        res = abs(float(g @ g) / gf - 1.0) if S > 0 else 0.0
        row = [*x, S, field.k * S, *g, res]
        if oracle is not None:
            S0 = oracle.S(float(np.linalg.norm(x)))
            row += [S0, abs(S - S0) / S0 if S0 > 0 else 0.0]
        rows.append(row)
    return rows


def _map(func, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(func, jobs))
    return [func(j) for j in jobs]


def task_eikonal(cfg, base_dir, out: Path, workers: int, gnuplot: bool) -> tuple[list, str, dict]:
    from .eikonal import EikonalField, decay_profiles

    t0 = time.perf_counter()
    metric = _metric(cfg, base_dir)
    d = metric.dim
    pts = _sample_points(cfg, d)
    chunks = [c for c in np.array_split(pts, max(1, min(workers, len(pts)))) if len(c)]
    rows = [r for part in _map(_eikonal_chunk, [(cfg, str(base_dir), c) for c in chunks], workers) for r in part]
    header = ([f"x{i + 1}" for i in range(d)] + ["S_geo[length]", "S_phys[sqrt(2 lambda) S_geo]"]
              + [f"gradS_geo{i + 1}" for i in range(d)] + ["residual[|gradS G^-1 gradS - 1|]"])
    if cfg.get("oracle") and metric.model.radial:
        header += ["S_oracle[quadrature]", "rel_err[|S - S_oracle| / S_oracle]"]
    files = ["eikonal.csv"]
    write_csv(out / "eikonal.csv", header, rows)
    timings = {"points": time.perf_counter() - t0}
    status = "PASS"
    worst = max(r[2 * d + 2] for r in rows)
    if worst > float(cfg.get("tol_residual", 1e-5)):
        status = "FAIL"
    if "decay" in cfg:
        t1 = time.perf_counter()
        dec = cfg["decay"]
        field = EikonalField(metric, int(cfg.get("N", 1024)))
        profs = decay_profiles(field, dec.get("orders", [0, 1, 2, 3]), dec.get("shells", [400, 800, 1600, 3200]),
                               n_radial=int(dec.get("n_radial", 4)), n_dirs=int(dec.get("n_dirs", 16)))
        drows = [[k, *r] for k, p in profs.items() for r in p.rows()]
        write_csv(out / "decay.csv", ["order[|alpha|]", "shell[r]", "weight[r^(m_tilde+sigma)]", "sup"], drows)
        files.append("decay.csv")
        if not all(p.passed for p in profs.values()):
            status = "FAIL"
        timings["decay"] = time.perf_counter() - t1
    if gnuplot:
        write_gnuplot(out / "eikonal.gp", "eikonal.csv", (1, d + 1), "S_geo")
        files.append("eikonal.gp")
    return files, status, timings


def task_flow(cfg, base_dir, out: Path, workers: int, gnuplot: bool):
    from .eikonal import EikonalField
    from .flow import FlowTrajectory, build_sphere_map, integrate_flows
    from .sphere import sphere_points

    t0 = time.perf_counter()
    metric = _metric(cfg, base_dir)
    field = EikonalField(metric)
    d = metric.dim
    s_max = float(cfg.get("s_max", 1000.0))
    s_eval = np.geomspace(1.0, s_max, int(cfg.get("samples", 60)))
    omegas = sphere_points(d, int(cfg.get("directions", 16)))
    bundle = integrate_flows(field, omegas, s_max, s_eval=s_eval)
    rows = [[i, *r] for i, t in enumerate(bundle.trajectories) for r in t.rows()]
    write_csv(out / "trajectories.csv", ["direction"] + FlowTrajectory.header(d), rows)
    files = ["trajectories.csv"]
    timings = {"flow": time.perf_counter() - t0}
    status = "PASS"
    defect = max(t.max_defect for t in bundle.trajectories)
    if defect > float(cfg.get("tol_flow", 1e-6)):
        status = "FAIL"
    sm = cfg.get("sphere_map")
    summary = {"arc_length_defect": defect}
    if sm:
        t1 = time.perf_counter()
        smap = build_sphere_map(field, int(sm.get("nodes", 256)), float(sm.get("s_max", 1000.0)))
        write_csv(out / "sphere_map.csv", smap.header(), smap.rows())
        files.append("sphere_map.csv")
        summary.update({"sup_deviation": smap.max_deviation, "round_trip": smap.round_trip(),
                        "D_agreement": smap.D_agreement(), "tail_exponent": smap.tail_exponent()})
        timings["sphere_map"] = time.perf_counter() - t1
    (out / "flow.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    files.append("flow.json")
    if gnuplot:
        write_gnuplot(out / "trajectories.gp", "trajectories.csv", (3, 4), "Phi")
        files.append("trajectories.gp")
    return files, status, timings


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def task_gft(cfg, base_dir, out: Path, workers: int, gnuplot: bool):
    from .eikonal import EikonalField
    from .potential import make_conformal_metric
    from .scattering import (PolarPhase, ScatterGrid, build_hamiltonian, eikonal_level, gaussian_source,
                             gft_cesaro, gft_eikonal, gft_radial, parseval_defect, radiation_bound_ratio,
                             solve_resolvent)
    from .flow import integrate_flows
    from .sphere import circle_points

    t0 = time.perf_counter()
    model = _model(cfg, base_dir)
    if model.dim != 2:
        raise ConfigInvalid([("model.dim", "the gft task is two-dimensional")])
    eps0 = float(cfg.get("eps", 0.2))
    g = cfg.get("grid", {})
    grid = ScatterGrid(float(g.get("L", 60.0)), int(g.get("n", 512)), g.get("w"), g.get("s0"))
    recipes = cfg.get("recipes", ["radial", "cesaro", "eikonal"])
    lam = float(cfg.get("lambda", 0.5))
    V = None if model.is_zero else model
    field = EikonalField(make_conformal_metric(model, lam, eps0))
    phase = PolarPhase(field, math.sqrt(2.0) * grid.L)
    H = build_hamiltonian(V, grid, lam, stencil=cfg.get("stencil", "9pt"))
    v = gaussian_source(grid)
    files = []
    timings = {}
    summary = {"lambda": lam, "grid": {"L": grid.L, "n": grid.n, "w": grid.width}}
    prof_cols, prof_hdr = [], []
    sols = {}
    for eps in cfg.get("epsilons", [0.0]):
        sols[eps] = solve_resolvent(H, lam, float(eps), v)
    sol = sols[min(sols)]
    summary["residuals"] = {str(e): s.residual for e, s in sols.items()}
    rho = 0.8 * grid.L if grid.inner >= 0.8 * grid.L else grid.inner
    angles = None
    if "radial" in recipes:
        Fr = gft_radial(sol, phase, np.linspace(0.5, 1.0, 5) * rho)
        angles = Fr.angles
        prof_hdr += ["F_radial_re", "F_radial_im"]
        prof_cols += [Fr.values.real, Fr.values.imag]
        summary["radial_trace"] = Fr.trace.tolist()
    if "cesaro" in recipes:
        Fc = gft_cesaro(sol, phase, rho)
        angles = Fc.angles
        prof_hdr += ["F_cesaro_re", "F_cesaro_im"]
        prof_cols += [Fc.values.real, Fc.values.imag]
    if "eikonal" in recipes:
        sl = eikonal_level(phase, rho)
        b = integrate_flows(field, circle_points(256), sl, s_eval=np.array([0.8 * sl, sl]), monitor=False)
        Fe = gft_eikonal(sol, b, [0.8 * sl, sl])
        angles = Fe.angles if angles is None else angles
        vals = Fe(angles)
        prof_hdr += ["F_eik_re", "F_eik_im"]
        prof_cols += [vals.real, vals.imag]
        summary["eikonal_level"] = sl
    if prof_cols:
        write_csv(out / "profiles.csv", ["angle[rad]"] + prof_hdr, zip(angles, *prof_cols))
        files.append("profiles.csv")
    timings["profiles"] = time.perf_counter() - t0
    if "interval" in cfg:
        t1 = time.perf_counter()
        lo, hi = cfg["interval"]
        lams = np.linspace(lo, hi, int(cfg.get("lambda_nodes", 9)))
        res = parseval_defect(V, lambda l: EikonalField(make_conformal_metric(model, l, eps0)), lams, grid,
                              eikonal="eikonal" in recipes)
        (out / "parseval.json").write_text(json.dumps(_clean(res.to_dict()), indent=2, sort_keys=True) + "\n")
        files.append("parseval.json")
        timings["parseval"] = time.perf_counter() - t1
    status = "PASS"
    if "radiation" in cfg:
        t1 = time.perf_counter()
        rad = cfg["radiation"]
        beta = float(rad.get("beta", 0.9 * 2.0 * model.rho))
        grids = [ScatterGrid(float(L), grid.n) for L in rad.get("L", [30.0, 45.0, 60.0])]
        rows = radiation_bound_ratio(field, V, lam, beta, grids)
        write_csv(out / "radiation.csv",
                  ["L", "n", "ratio_A[B*/B]", "ratio_gammagamma[B*/B]", "ratio_gamma[weighted L2]", "ratio_p1[B*/B]"],
                  [[r["L"], r["n"], r["A"], r["gammagamma"], r["gamma"], r["p1"]] for r in rows])
        files.append("radiation.csv")
        spread = max(max(r[k] for r in rows) / min(r[k] for r in rows) for k in ("A", "gammagamma", "gamma"))
        summary["radiation_spread"] = spread
        if spread > 2.0:
            status = "FAIL"
        timings["radiation"] = time.perf_counter() - t1
    (out / "gft.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    files.append("gft.json")
    if gnuplot and prof_cols:
        write_gnuplot(out / "profiles.gp", "profiles.csv", (1, 2), "far-field profile")
        files.append("profiles.gp")
    return files, status, timings


def task_verify(cfg, base_dir, out: Path, workers: int, gnuplot: bool):
    """Decay hypotheses, ellipticity, eikonal residual and flow arc length on one model."""
    from .eikonal import EikonalField
    from .flow import integrate_flows
    from .potential import verify_decay_hypotheses
    from .sphere import sphere_points

    t0 = time.perf_counter()
    model = _model(cfg, base_dir)
    checks = []
    rep = verify_decay_hypotheses(model)
    checks.append({"check": "decay_hypotheses", "passed": bool(all(rep.row_passed)) if not model.is_zero else True})
    metric = _metric(cfg, base_dir, model)
    checks.append({"check": "ellipticity", "passed": metric.a > 0.5, "a": metric.a, "b": metric.b})
    field = EikonalField(metric)
    pts = _sample_points({"sample": {"n": int(cfg.get("n_points", 12)), "seed": 7}}, model.dim)
    worst = 0.0
    for x in pts:
        S, g = field.eval_S(x)
        worst = max(worst, abs(float(g @ g) / float(metric.factor(x[None, :])[0]) - 1.0))
    checks.append({"check": "eikonal_residual", "value": worst, "passed": worst <= 1e-5})
    b = integrate_flows(field, sphere_points(model.dim, 4), 200.0)
    defect = max(t.max_defect for t in b.trajectories)
    checks.append({"check": "flow_arc_length", "value": defect, "passed": defect <= 1e-6})
    rows = [[c["check"], "PASS" if c["passed"] else "FAIL", c.get("value", "")] for c in checks]
    write_csv(out / "verify.csv", ["check", "status", "value"], rows)
    (out / "verify.json").write_text(json.dumps(_clean(checks), indent=2, sort_keys=True) + "\n")
    status = "PASS" if all(c["passed"] for c in checks) else "FAIL"
    return ["verify.csv", "verify.json"], status, {"verify": time.perf_counter() - t0}


def task_suite(cfg, base_dir, out: Path, workers: int, gnuplot: bool, level: str = "quick", criteria=None):
    from .acceptance import run_suite

    t0 = time.perf_counter()
    results = run_suite(level, criteria or cfg.get("criteria"), workers)
    (out / "suite.json").write_text(json.dumps(_clean(results), indent=2, sort_keys=True) + "\n")
    lines = [f"criterion {r['number']} [{r['name']}]: {'PASS' if r['passed'] else 'FAIL'} ({r['elapsed']:.1f} s)"
             for r in results]
    (out / "suite.txt").write_text("\n".join(lines) + "\n")
    for ln in lines:
        print(ln)
    status = "PASS" if all(r["passed"] for r in results) else "FAIL"
    timings = {"suite": time.perf_counter() - t0, **{f"criterion_{r['number']}": r["elapsed"] for r in results}}
    return ["suite.json", "suite.txt"], status, timings


TASK_FUNCS = {"eikonal": task_eikonal, "flow": task_flow, "gft": task_gft, "verify": task_verify,
              "suite": task_suite}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eikscat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="task", required=True)
    for name in TASKS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--preset", help=f"built-in config ({', '.join(sorted(PRESETS))})")
        sp.add_argument("--out", default="eikscat_out", help="output directory")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--emit-gnuplot", action="store_true", help="write companion gnuplot scripts")
        if name == "suite":
            sp.add_argument("--level", choices=("quick", "full"), default="quick")
            sp.add_argument("--criteria", help="comma-separated criterion numbers")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else 2
    try:
        cfg, base_dir = load_config(args.config, args.preset, args.task)
        if args.workers < 1:
            raise ConfigInvalid([("--workers", "must be >= 1")])
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        kw = {}
        if args.task == "suite":
            kw["level"] = args.level if args.config is None else cfg.get("level", args.level)
            if args.criteria:
                try:
                    kw["criteria"] = [int(c) for c in args.criteria.split(",")]
                except ValueError:
                    raise ConfigInvalid([("--criteria", "must be comma-separated integers")]) from None
                if not set(kw["criteria"]) <= set(range(1, 10)):
                    raise ConfigInvalid([("--criteria", "criteria are numbered 1 to 9")])
            cfg = {**cfg, "level": kw["level"]}
        t0 = time.perf_counter()
        files, status, timings = TASK_FUNCS[args.task](cfg, base_dir, out, args.workers, args.emit_gnuplot, **kw)
        timings["total"] = time.perf_counter() - t0
        write_manifest(out, args.task, cfg, files, timings, status)
    except ConfigInvalid as exc:
        for fld, msg in exc.errors:
            print(f"config error: {fld}: {msg}", file=sys.stderr)
        return 2
    except EikscatError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"{args.task}: {status}")
    return 0 if status == "PASS" else 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
