"""Readers and writers for knots, trees, matrices, filtrations and path archives.

Floats are written with Python's shortest round-trip repr, so every value
reads back bit-identical.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .geometry import PolygonalKnot, ThicknessReport
from .normalize import NormalizedConfig
from .persist import CertifiedPath, MergeEdge, MergeEvent, MergeFiltration, MergeScaleMatrix, MergeTree


class FormatError(ValueError):
    """Malformed input; the message names the offending field or line."""


def _float(x, where: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise FormatError(f"{where}: expected a number, got {x!r}")
    x = float(x)
    if not math.isfinite(x):
        raise FormatError(f"{where}: non-finite value {x!r}")
    return x


# ---------------------------------------------------------------- knots

def knot_to_dict(knot, name: str = "knot") -> dict:
    if isinstance(knot, NormalizedConfig):
        d = knot_to_dict(knot.knot, name)
        d["normalized"] = True
        d["length"] = knot.length
        d["ropelength"] = knot.ropelength
        d["thickness"] = knot.report.to_dict()
        return d
    return {"name": name, "vertices": knot.vertices.tolist()}


def knot_from_dict(d, where: str = "knot"):
    """PolygonalKnot, or NormalizedConfig when the "normalized" flag is set."""
    if not isinstance(d, dict):
        raise FormatError(f"{where}: expected a JSON object")
    if "vertices" not in d:
        raise FormatError(f"{where}: missing field 'vertices'")
    if "name" in d and not isinstance(d["name"], str):
        raise FormatError(f"{where}.name: expected a string")
    verts = d["vertices"]
    if not isinstance(verts, list) or len(verts) < 3:
        raise FormatError(f"{where}.vertices: expected a list of at least 3 points")
    rows = []
    for i, p in enumerate(verts):
        if not isinstance(p, list) or len(p) != 3:
            raise FormatError(f"{where}.vertices[{i}]: expected [x, y, z]")
        rows.append([_float(c, f"{where}.vertices[{i}][{k}]") for k, c in enumerate(p)])
    try:
        knot = PolygonalKnot(np.array(rows))
    except ValueError as exc:
        raise FormatError(f"{where}.vertices: {exc}") from None
    if not d.get("normalized"):
        return knot
    try:
        report = ThicknessReport.from_dict(d["thickness"])
        return NormalizedConfig(knot, _float(d["length"], f"{where}.length"), report)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{where}: bad normalized block ({exc})") from None
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None


def write_knot(path, knot, name: str = "knot") -> None:
    Path(path).write_text(json.dumps(knot_to_dict(knot, name)) + "\n")


def read_knot(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return knot_from_dict(data, str(path))


def knot_name(path) -> str:
    try:
        return json.loads(Path(path).read_text()).get("name", Path(path).stem)
    except (OSError, json.JSONDecodeError, AttributeError):
        return Path(path).stem


# ---------------------------------------------------------------- certified paths

def write_path(path, cp: CertifiedPath) -> None:
    header = {"certificate": {"min_thickness": cp.min_thickness, "max_step": cp.max_step,
                              "scale": cp.scale, "determinant": cp.determinant,
                              "route": cp.route, "thickness_slack": cp.thickness_slack,
                              "frames": len(cp.frames)}}
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for f in cp.frames:
            fh.write(json.dumps(f.vertices.tolist()) + "\n")


def read_path(path) -> CertifiedPath:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatError(f"{path}: empty archive")
    try:
        head = json.loads(lines[0])["certificate"]
        frames = tuple(PolygonalKnot(np.array(json.loads(l), dtype=float)) for l in lines[1:] if l.strip())
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if len(frames) != head.get("frames", len(frames)):
        raise FormatError(f"{path}: header announces {head['frames']} frames, found {len(frames)}")
    return CertifiedPath(frames, float(head["scale"]), float(head["min_thickness"]),
                         float(head["max_step"]), int(head["determinant"]),
                         head.get("route", ""), float(head.get("thickness_slack", 1e-3)))


# ---------------------------------------------------------------- merge trees

def tree_to_dict(tree: MergeTree, knot_refs=None, path_refs=None) -> dict:
    knot_refs = knot_refs or [None] * tree.size
    path_refs = path_refs or [None] * len(tree.edges)
    return {
        "lambda_grid": list(tree.lambda_grid),
        "thickness_slack": tree.thickness_slack,
        "nodes": [{"id": i, "birth": b, "knot_ref": knot_refs[i]} for i, b in enumerate(tree.birth)],
        "edges": [{"a": e.a, "b": e.b, "scale": e.scale, "path_ref": path_refs[k]}
                  for k, e in enumerate(tree.edges)],
        "merges": [{"scale": m.scale, "a": m.a, "b": m.b} for m in tree.merges],
    }


def tree_from_dict(d: dict, base: Path | None = None, load_paths: bool = False) -> MergeTree:
    try:
        grid = tuple(_float(g, "lambda_grid") for g in d["lambda_grid"])
        nodes = sorted(d["nodes"], key=lambda n: n["id"])
        if [n["id"] for n in nodes] != list(range(len(nodes))):
            raise FormatError("nodes: ids must be 0..n-1")
        birth = [_float(n["birth"], f"nodes[{n['id']}].birth") for n in nodes]
        edges = []
        for k, e in enumerate(d["edges"]):
            cp = None
            if load_paths and e.get("path_ref") and base is not None:
                cp = read_path(base / e["path_ref"])
            edges.append(MergeEdge(int(e["a"]), int(e["b"]), _float(e["scale"], f"edges[{k}].scale"), cp))
        merges = [MergeEvent(_float(m["scale"], "merges.scale"), int(m["a"]), int(m["b"]))
                  for m in d["merges"]]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"merge tree: missing or malformed field {exc}") from None
    return MergeTree(birth, edges, merges, grid, [], float(d.get("thickness_slack", 1e-3)))


def write_tree(path, tree: MergeTree, knot_refs=None, path_refs=None) -> None:
    Path(path).write_text(json.dumps(tree_to_dict(tree, knot_refs, path_refs), indent=1) + "\n")


def read_tree(path, load_paths: bool = False) -> MergeTree:
    path = Path(path)
    return tree_from_dict(json.loads(path.read_text()), path.parent, load_paths)


# ---------------------------------------------------------------- merge-scale matrix

def matrix_to_csv(msm: MergeScaleMatrix) -> str:
    buf = io.StringIO()
    buf.write(f"# lambda_birth={msm.birth!r} ceiling={msm.ceiling!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["component"] + [f"C{c}" for c in msm.labels])
    for lab, row in zip(msm.labels, msm.mu):
        w.writerow([f"C{lab}"] + [repr(float(x)) if math.isfinite(x) else "inf" for x in row])
    return buf.getvalue()


def matrix_from_csv(text: str) -> MergeScaleMatrix:
    lines = text.splitlines()
    meta = {}
    for line in lines:
        if line.startswith("#") and "lambda_birth=" in line:
            meta = dict(kv.split("=", 1) for kv in line[1:].split() if "=" in kv)
    try:
        birth = float(meta["lambda_birth"])
        ceiling = float(meta.get("ceiling", "inf"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"matrix: bad or missing '# lambda_birth=...' line ({exc})") from None
    rows = list(csv.reader(l for l in lines if not l.startswith("#")))
    if not rows:
        raise FormatError("matrix: missing header row")
    labels = [int(h[1:]) for h in rows[0][1:]]
    mu = np.empty((len(labels), len(labels)))
    for i, r in enumerate(rows[1:]):
        if len(r) != len(labels) + 1:
            raise FormatError(f"matrix: row {i + 1}: expected {len(labels) + 1} fields")
        mu[i] = [float(x) for x in r[1:]]
    return MergeScaleMatrix([(lab,) for lab in labels], mu, birth, ceiling)


# ---------------------------------------------------------------- filtrations

def filtration_lines(filt: MergeFiltration, max_dim: int | None = None) -> list[str]:
    """"scale v0 ... vk" for every simplex, vertices named by component label."""
    labels = filt.labels or list(range(filt.size))
    return [" ".join([repr(t)] + [str(labels[i]) for i in sigma])
            for t, sigma in filt.simplices(max_dim)]


def parse_filtration(lines) -> list[tuple[float, tuple[int, ...]]]:
    out = []
    for k, line in enumerate(lines, 1):
        parts = line.split()
        if not parts or line.startswith("#"):
            continue
        try:
            out.append((float(parts[0]), tuple(int(p) for p in parts[1:])))
        except ValueError:
            raise FormatError(f"filtration: line {k}: cannot parse {line!r}") from None
    return out


def filtration_from_lines(lines) -> MergeFiltration:
    """Rebuild the merge-scale matrix from the 0- and 1-simplices of an export."""
    simp = parse_filtration(lines)
    verts = sorted({s[0] for _, s in simp if len(s) == 1})
    index = {v: i for i, v in enumerate(verts)}
    mu = np.full((len(verts), len(verts)), np.inf)
    birth = math.inf
    for t, s in simp:
        if len(s) == 1:
            mu[index[s[0]], index[s[0]]] = t
            birth = min(birth, t)
        elif len(s) == 2:
            i, j = index[s[0]], index[s[1]]
            mu[i, j] = mu[j, i] = t
    scales = sorted({t for t, _ in simp})
    return MergeFiltration(mu, birth, tuple(scales), verts)
