"""Command-line driver: ``python3 -m knotpersist <command> ...``.

Exit codes: 0 success, 2 validation error, 3 infeasible or scan ceiling
reached (partial results are still written), 4 internal error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import is_embedded, length, thickness, total_curvature
from .knotid import DiagramError, determinant_of, project_diagram
from .normalize import NormalizationError, NormalizedConfig, normalize_scale
from .optimize import OptimizationError, TightenParams, dedup, run_restarts
from .persist import (PersistParams, TypeMismatch, betti_check, check_tree, merge_scales, merge_scan,
                      validate_path, vr_filtration)
from .seeds import SeedError, perturb, regular_ngon, torus_knot
from . import export, serialize

log = logging.getLogger("knotpersist")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_INTERNAL = 0, 2, 3, 4
MANIFEST = "manifest.json"


class ValidationFailure(Exception):
    pass


class Infeasible(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: list
    seed: int
    version: str = __version__
    outputs: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def add(self, path: Path) -> None:
        self.outputs[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()

    def write(self, out: Path) -> Path:
        path = out / MANIFEST
        path.write_text(json.dumps(self.__dict__, indent=1, sort_keys=True) + "\n")
        return path


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationFailure(f"config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ValidationFailure(f"config {path}: expected a JSON object")
    return cfg


def _tighten_params(cfg: dict, seed: int) -> tuple[TightenParams, int]:
    block = {k: v for k, v in cfg.items() if k not in ("restarts", "persist", "perturb_eps", "dedup_tol")}
    block["seed"] = seed
    try:
        return TightenParams.from_dict(block), int(cfg.get("restarts", 1))
    except (TypeError, ValueError) as exc:
        raise ValidationFailure(f"tighten config: {exc}") from None


def _persist_params(cfg: dict, seed: int) -> PersistParams:
    try:
        return PersistParams(**{**cfg.get("persist", {}), "seed": seed})
    except (TypeError, ValueError) as exc:
        raise ValidationFailure(f"persist config: {exc}") from None


def _read_knots(paths):
    out = []
    for p in paths:
        k = serialize.read_knot(p)
        knot = k.knot if isinstance(k, NormalizedConfig) else k
        emb = is_embedded(knot)
        if not emb:
            raise ValidationFailure(f"{p}: not embedded, segments {emb.witness} are "
                                    f"{emb.distance!r} apart")
        out.append(k)
    return out


# ---------------------------------------------------------------- commands

def cmd_gen(args, cfg, man: RunManifest, out: Path) -> int:
    if args.n is not None and args.n < 3:
        raise ValidationFailure("n must be >= 3")
    try:
        if args.kind == "ngon":
            knot, name = regular_ngon(args.n or 32), f"ngon{args.n or 32}"
        elif args.kind == "torus":
            knot = torus_knot(args.p, args.q, args.n or 64, mirror=args.mirror)
            name = f"torus{args.p}_{args.q}" + ("m" if args.mirror else "")
        else:
            if not args.input:
                raise ValidationFailure("perturb needs --input")
            src = _read_knots([args.input])[0]
            src = src.knot if isinstance(src, NormalizedConfig) else src
            knot = perturb(src, args.eps, np.random.default_rng(args.seed))
            name = f"{Path(args.input).stem}_p{args.seed}"
            man.inputs.append(args.input)
    except SeedError as exc:
        raise ValidationFailure(str(exc)) from None
    path = out / f"{args.name or name}.json"
    serialize.write_knot(path, knot, args.name or name)
    man.add(path)
    print(path)
    return EXIT_OK


def analyze_knot(knot) -> dict:
    rep = thickness(knot)
    d = {"n": knot.n, "length": length(knot), **rep.to_dict(),
         "ropelength": length(knot) / rep.thickness if rep.thickness > 0 else float("inf"),
         "total_curvature": total_curvature(knot)}
    try:
        D = project_diagram(knot)
        d["determinant"] = determinant_of(knot)
        d["gauss_code"] = str(D)
    except DiagramError as exc:
        d["determinant"] = None
        d["diagram_error"] = str(exc)
    return d


def cmd_analyze(args, cfg, man: RunManifest, out: Path) -> int:
    results = {}
    for p in args.files:
        k = _read_knots([p])[0]
        results[p] = analyze_knot(k.knot if isinstance(k, NormalizedConfig) else k)
        man.inputs.append(p)
    path = out / "analyze.json"
    path.write_text(json.dumps({"manifest": MANIFEST, "results": results}, indent=1) + "\n")
    man.add(path)
    print(json.dumps(results, indent=1))
    return EXIT_OK


def cmd_tighten(args, cfg, man: RunManifest, out: Path) -> int:
    params, restarts = _tighten_params(cfg, args.seed)
    if args.restarts is not None:
        restarts = args.restarts
    knots = [k.knot if isinstance(k, NormalizedConfig) else k for k in _read_knots(args.files)]
    man.inputs.extend(args.files)
    man.config.update({"tighten": params.to_dict(), "restarts": restarts})
    try:
        runs = run_restarts(knots, params, restarts, cfg.get("perturb_eps", 0.1), args.threads)
    except OptimizationError as exc:
        raise ValidationFailure(str(exc)) from None
    summary = []
    for r in runs:
        stem = f"run_{r.seed_index}_{r.restart}"
        res = r.result
        kpath = out / f"{stem}.json"
        serialize.write_knot(kpath, res.final, stem)
        tpath = out / f"{stem}_trace.csv"
        tpath.write_text(f"# manifest: {MANIFEST}\n" + res.trace_csv())
        man.add(kpath)
        man.add(tpath)
        summary.append({"input": args.files[r.seed_index], "restart": r.restart, "run_seed": r.run_seed,
                        "ropelength": res.final.ropelength, "iterations": res.iterations,
                        "converged": res.converged, "determinant": res.determinant,
                        "knot": kpath.name, "trace": tpath.name})
        log.info("%s: ropelength %.9g in %d iterations", stem, res.final.ropelength, res.iterations)
    classes = dedup([r.result.final for r in runs], cfg.get("dedup_tol", 1e-2))
    spath = out / "tighten.json"
    spath.write_text(json.dumps({"manifest": MANIFEST, "runs": summary,
                                 "distinct_classes": len(classes)}, indent=1) + "\n")
    man.add(spath)
    print(f"{len(runs)} runs, best ropelength {min(s['ropelength'] for s in summary)!r}, "
          f"{len(classes)} distinct classes")
    return EXIT_OK


def _grid(args, births, birth_tol: float) -> np.ndarray:
    if args.grid:
        lo, hi, steps = args.grid[0], args.grid[1], int(args.grid[2])
        if not (hi > lo and steps >= 1):
            raise ValidationFailure("grid needs lo < hi and at least one step")
        return np.linspace(lo, hi, steps + 1)
    b0 = min(births)
    grid = np.linspace(b0, 2.0 * max(births), 65)
    # the scale at which ideal components are read off must be scanned too
    return np.unique(np.append(grid, b0 * (1.0 + birth_tol)))


def _bounds(msm) -> list[dict]:
    lo, hi = msm.d_merge_bounds
    return [{"pair": [msm.labels[i], msm.labels[j]],
             "lower": float(lo[i, j]) if np.isfinite(lo[i, j]) else None,
             "upper": float(hi[i, j]) if np.isfinite(hi[i, j]) else None}
            for i in range(msm.size) for j in range(i + 1, msm.size)]


def cmd_persist(args, cfg, man: RunManifest, out: Path) -> int:
    pp = _persist_params(cfg, args.seed)
    man.config["persist"] = pp.__dict__.copy()
    samples = []
    for k in _read_knots(args.files):
        try:
            samples.append(k if isinstance(k, NormalizedConfig) else normalize_scale(k))
        except NormalizationError as exc:
            raise ValidationFailure(str(exc)) from None
    man.inputs.extend(args.files)
    samples = dedup(samples, cfg.get("dedup_tol", 1e-2))
    grid = _grid(args, [s.ropelength for s in samples], pp.birth_tol)
    man.config["lambda_grid"] = [float(g) for g in grid]
    try:
        tree = merge_scan(samples, grid, pp, workers=args.threads)
    except TypeMismatch as exc:
        raise ValidationFailure(str(exc)) from None
    (out / "nodes").mkdir(exist_ok=True)
    (out / "paths").mkdir(exist_ok=True)
    knot_refs, path_refs = [], []
    for i, s in enumerate(samples):
        p = out / "nodes" / f"node_{i}.json"
        serialize.write_knot(p, s, f"node_{i}")
        knot_refs.append(f"nodes/{p.name}")
    for k, e in enumerate(tree.edges):
        p = out / "paths" / f"path_{e.a}_{e.b}.jsonl"
        serialize.write_path(p, e.path)
        path_refs.append(f"paths/{p.name}")
    tpath = out / "tree.json"
    serialize.write_tree(tpath, tree, knot_refs, path_refs)
    msm = merge_scales(tree, pp.birth_tol)
    mpath = out / "merge_scales.csv"
    mpath.write_text(f"# manifest: {MANIFEST}\n" + serialize.matrix_to_csv(msm))
    filt = vr_filtration(msm)
    fpath = out / "filtration.txt"
    fpath.write_text(f"# manifest: {MANIFEST}\n" + "\n".join(serialize.filtration_lines(filt, 4)) + "\n")
    report = {"manifest": MANIFEST, "samples": len(samples), "first_birth": msm.birth,
              "nu_ideal": msm.nu_ideal, "ideal_components": [list(c) for c in msm.components],
              "thickness_slack": pp.thickness_slack, "ceiling": float(grid[-1]),
              "flagged_pairs": int(np.triu(msm.flagged, 1).sum()),
              "d_merge_bounds": _bounds(msm),
              "betti_check": betti_check(filt).ok}
    rpath = out / "persist.json"
    rpath.write_text(json.dumps(report, indent=1) + "\n")
    for p in [tpath, mpath, fpath, rpath]:
        man.add(p)
    print(f"first birth {msm.birth!r}, {msm.nu_ideal} ideal components, "
          f"{len(tree.merges)} merges, {report['flagged_pairs']} pairs beyond the ceiling")
    if report["flagged_pairs"]:
        raise Infeasible(f"scan ceiling {grid[-1]!r} reached before full connectivity")
    return EXIT_OK


def cmd_export(args, cfg, man: RunManifest, out: Path) -> int:
    tdir = Path(args.tree).parent
    tree = serialize.read_tree(args.tree)
    man.inputs.append(args.tree)
    mfile = tdir / "merge_scales.csv"
    birth_tol = _persist_params(cfg, args.seed).birth_tol
    msm = serialize.matrix_from_csv(mfile.read_text()) if mfile.exists() else merge_scales(tree, birth_tol)
    filt = vr_filtration(msm)
    spath = out / "barcode.svg"
    spath.write_text(f"<!-- manifest: {MANIFEST} -->\n" + export.render_svg(tree, msm) + "\n")
    lpath = out / "partitions.txt"
    lpath.write_text(f"# manifest: {MANIFEST}\n" + "\n".join(export.partition_listing(filt)) + "\n")
    man.add(spath)
    man.add(lpath)
    print("\n".join(export.partition_listing(filt)))
    return EXIT_OK


def cmd_validate(args, cfg, man: RunManifest, out: Path) -> int:
    problems = []
    for p in args.files:
        man.inputs.append(p)
        path = Path(p)
        try:
            if path.suffix == ".jsonl":
                chk = validate_path(serialize.read_path(path))
                problems += [f"{p}: {m}" for m in chk.problems]
            elif path.name == "tree.json" or "lambda_grid" in path.read_text()[:4096]:
                problems += [f"{p}: {m}" for m in _validate_tree(path)]
            else:
                k = serialize.read_knot(path)
                knot = k.knot if isinstance(k, NormalizedConfig) else k
                emb = is_embedded(knot)
                if not emb:
                    problems.append(f"{p}: not embedded, segments {emb.witness}")
        except serialize.FormatError as exc:
            problems.append(str(exc))
    for m in problems:
        print(m, file=sys.stderr)
    print(f"{len(args.files)} files checked, {len(problems)} problems")
    if problems:
        raise ValidationFailure(f"{len(problems)} problems")
    return EXIT_OK


def _validate_tree(path: Path) -> list[str]:
    tree = serialize.read_tree(path, load_paths=True)
    problems = list(check_tree(tree))
    for e in tree.edges:
        if e.path is None:
            problems.append(f"edge ({e.a}, {e.b}) has no path archive")
            continue
        chk = validate_path(e.path, e.scale)
        problems += [f"edge ({e.a}, {e.b}): {m}" for m in chk.problems]
    return problems


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="knotpersist", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON parameter file")
    ap.add_argument("--seed", type=int, help="unsigned 64-bit seed (default: config \"seed\" or 0)")
    ap.add_argument("--threads", type=int, default=1, help="worker processes")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a seed knot")
    g.add_argument("kind", choices=["ngon", "torus", "perturb"])
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=int, default=2)
    g.add_argument("--q", type=int, default=3)
    g.add_argument("--mirror", action="store_true")
    g.add_argument("--input", help="knot to perturb")
    g.add_argument("--eps", type=float, default=0.1)
    g.add_argument("--name")
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("analyze", help="thickness, ropelength and determinant of knot files")
    a.add_argument("files", nargs="+")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("tighten", help="tighten knot files")
    t.add_argument("files", nargs="+")
    t.add_argument("--restarts", type=int)
    t.set_defaults(func=cmd_tighten)

    p = sub.add_parser("persist", help="merge scan over tightened samples")
    p.add_argument("files", nargs="+")
    p.add_argument("--grid", type=float, nargs=3, metavar=("LO", "HI", "STEPS"))
    p.set_defaults(func=cmd_persist)

    e = sub.add_parser("export", help="SVG barcode, dendrogram and partition listing")
    e.add_argument("tree", help="tree.json written by persist")
    e.set_defaults(func=cmd_export)

    v = sub.add_parser("validate", help="re-check knot files, path archives and trees")
    v.add_argument("files", nargs="+")
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    start = time.perf_counter()
    out = Path(args.out)
    try:
        cfg = _load_config(args.config)
        if args.seed is None:
            args.seed = int(cfg.get("seed", 0))
        if not 0 <= args.seed < 2**64:
            raise ValidationFailure("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ValidationFailure("--threads must be >= 1")
        out.mkdir(parents=True, exist_ok=True)
        man = RunManifest(args.command, {"file": cfg, "threads": args.threads}, [], args.seed)
        code = EXIT_OK
        try:
            code = args.func(args, cfg, man, out)
        except Infeasible as exc:
            print(f"infeasible: {exc}", file=sys.stderr)
            code = EXIT_INFEASIBLE
        man.wall_time = time.perf_counter() - start
        man.write(out)
        return code
    except (ValidationFailure, serialize.FormatError, NormalizationError, DiagramError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - mapped to the internal-error exit code
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
