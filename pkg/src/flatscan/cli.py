"""Command-line front end.

Every command reads an optional ``key=value`` config file (``-c``), then
``key=value`` overrides given on the command line, and writes its artifacts
into the output directory. Each artifact starts with a provenance header
(config hash, seed, library versions); no timestamps are written, so a rerun
with the same config reproduces every file byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from flatscan import __version__
from flatscan.coefficients import (
    KINDS as COEF_KINDS,
    PlaneSearchConfig,
    ScaleGrid,
    coefficient,
    plane_fixed_chain,
    square_function,
)
from flatscan.errors import AxiomViolation, DataError, FlatscanError, UsageError, VerificationFailure
from flatscan.generators import KINDS as GEN_KINDS, GeneratorSpec, generate
from flatscan.lattice import build_lattice, check_axioms, detect_doubling, detect_strongly_doubling
from flatscan.measure import Ball, read_measure
from flatscan import svg
from flatscan.transport import w1_duality_gap, wasserstein, wasserstein_entropic

COMMANDS = ("gen", "coeff", "sqfn", "wdist", "lattice", "decompose", "nu", "verify", "report")

# default value and type of every recognised config key
DEFAULTS = {
    "n": 1,
    "p": 2,
    "kind": "beta_p",
    "sample": 64,
    "seed": 0,
    "r_min": None,
    "r_max": None,
    "q": 2 ** -0.5,
    "nn_factor": 4.0,
    "eps": None,
    "search_K": 12,
    "spacing_factor": 1 / 24,
    "atom_cap": 300,
    "method": "exact",
    "sinkhorn_eps": 1e-3,
    "A0": 4.0,
    "C0": 7.0,
    "depth": None,
    "C_sdb": 1e4,
    "A": 10.0,
    "tau": 0.01,
    "theta": 0.1,
    "eps0": 0.01,
    "gamma": 0.1,
    "rho1": 0.25,
    "rho2": 0.01,
    "eta": 0.1,
    "root_level": None,
    "h_grid": None,
    "ad_samples": 1000,
    "verify_balls": 8,
    "verify_pairs": 8,
    "threads": 1,
}
INT_KEYS = {"n", "p", "sample", "seed", "search_K", "atom_cap", "depth", "root_level", "ad_samples",
            "verify_balls", "verify_pairs", "threads"}
STR_KEYS = {"kind", "method"}


# ----------------------------------------------------------------------
# configuration


def _parse_value(key, text):
    if key in STR_KEYS:
        return text
    if text.lower() in ("none", "null", ""):
        return None
    try:
        if key in INT_KEYS:
            return int(text)
        return float(text)
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot parse {text!r}") from None


def _guess_value(text):
    """Generator parameters: bool, int, float or string."""
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _split_pairs(items, source):
    out = []
    for lineno, raw in enumerate(items, start=1):
        line = raw.split("#", 1)[0].strip() if source != "argv" else raw.strip()
        if not line:
            continue
        if "=" not in line:
            where = f"{source} line {lineno}" if source != "argv" else "argument"
            raise UsageError(f"{where}: expected key=value, got {raw.strip()!r}")
        k, v = line.split("=", 1)
        out.append((k.strip(), v.strip()))
    return out


def load_config(path, overrides, *, free_keys=False):
    """Merge defaults, the config file and command-line overrides.

    With ``free_keys`` unknown keys are collected separately (generator
    parameters) instead of being rejected.
    """
    cfg = dict(DEFAULTS)
    env = os.environ.get("FLATSCAN_THREADS")
    if env:
        cfg["threads"] = _parse_value("threads", env)
    extra = {}
    pairs = []
    if path:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"no such config file: {p}")
        pairs += _split_pairs(p.read_text().splitlines(), str(p))
    pairs += _split_pairs(overrides or [], "argv")
    for k, v in pairs:
        if k in cfg:
            cfg[k] = _parse_value(k, v)
        elif free_keys:
            extra[k] = _guess_value(v)
        else:
            raise UsageError(f"unknown config key {k!r}")
    if cfg["threads"] is None or cfg["threads"] < 1:
        cfg["threads"] = 1
    return cfg, extra


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def provenance(command, cfg, inputs=(), extra=None):
    """Header lines: version, config hash, seed and library versions.

    The thread count is left out of the hash since results do not depend on it.
    """
    conf = {k: v for k, v in cfg.items() if k != "threads"}
    conf["command"] = command
    if extra:
        conf["params"] = extra
    conf["inputs"] = {Path(p).name: _file_digest(p) for p in inputs}
    text = json.dumps(conf, sort_keys=True, separators=(",", ":"), default=str)
    digest = hashlib.sha256(text.encode()).hexdigest()
    return [f"flatscan {__version__} {command}",
            f"config_sha256 {digest}",
            f"seed {cfg['seed']}",
            f"numpy {np.__version__} scipy {scipy.__version__}",
            f"config {text}"]


def _json_text(obj, header):
    out = {"provenance": header}
    out.update(obj)
    return json.dumps(_jsonable(out), indent=1, allow_nan=False) + "\n"


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (bool, np.bool_)):
        return bool(o)
    if isinstance(o, (float, np.floating)):
        v = float(o)
        return v if math.isfinite(v) else None
    return o


def _csv_text(header, columns, rows):
    lines = [f"# {h}" for h in header]
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return "nan"
    return format(float(v), ".17g")


def _write(outdir, name, text):
    path = Path(outdir) / name
    path.write_text(text)
    return path


def _outdir(args):
    if not args.output:
        raise UsageError("an output directory is required (-o)")
    p = Path(args.output)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load(path):
    if not path:
        raise UsageError("an input measure is required (-i)")
    p = Path(path)
    if p.exists() and p.stat().st_size == 0:
        raise UsageError(f"empty input file: {p}")
    return read_measure(p)


def _pmap(fn, items, threads):
    """Ordered map; results are merged in input order whatever the pool size."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _sample_atoms(mu, cfg):
    N = len(mu)
    k = cfg["sample"]
    if k is None or k <= 0 or k >= N:
        return np.arange(N)
    rng = np.random.default_rng(cfg["seed"])
    return np.sort(rng.choice(N, size=k, replace=False))


def _grid(mu, cfg):
    if cfg["r_min"] is not None and cfg["r_max"] is not None:
        return ScaleGrid(cfg["r_min"], cfg["r_max"], cfg["q"])
    g = ScaleGrid.for_measure(mu, cfg["q"], cfg["nn_factor"], cfg["r_max"])
    if cfg["r_min"] is not None:
        return ScaleGrid(cfg["r_min"], g.r_max, cfg["q"])
    return g


def _search(cfg):
    return PlaneSearchConfig(K=cfg["search_K"], spacing_factor=cfg["spacing_factor"],
                             atom_cap=cfg["atom_cap"])


def _params(cfg):
    from flatscan.decomposition import StoppingParams
    return StoppingParams(A=cfg["A"], tau=cfg["tau"], theta=cfg["theta"], eps0=cfg["eps0"],
                          gamma=cfg["gamma"], rho1=cfg["rho1"], rho2=cfg["rho2"], eta=cfg["eta"])


# ----------------------------------------------------------------------
# commands


def cmd_gen(args, cfg, extra):
    if args.kind not in GEN_KINDS:
        raise UsageError(f"unknown generator kind {args.kind!r}; expected one of {', '.join(GEN_KINDS)}")
    atoms = int(extra.pop("atoms", 1000))
    depth = int(extra.pop("depth", cfg["depth"] if cfg["depth"] is not None else 4))
    if "n" not in extra and cfg["n"] != DEFAULTS["n"]:
        extra["n"] = cfg["n"]
    if args.kind == "rescaled":
        base = {k[5:]: v for k, v in extra.items() if k.startswith("base_")}
        for k in list(extra):
            if k.startswith("base_"):
                extra.pop(k)
        bkind = base.pop("kind", "flat_plane")
        bspec = {"kind": bkind, "atoms": int(base.pop("atoms", atoms)),
                 "depth": int(base.pop("depth", depth)), "seed": cfg["seed"], "params": base}
        extra["base"] = bspec
    spec = GeneratorSpec(args.kind, extra, seed=cfg["seed"], atoms=atoms, depth=depth)
    mu = generate(spec)
    header = provenance("gen", cfg, extra={"kind": args.kind, "atoms": atoms, "depth": depth, **extra})
    if not args.output:
        raise UsageError("an output file is required (-o)")
    out = Path(args.output)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix.lower() == ".json":
        mu.to_json(out, extra={"provenance": header})
    else:
        mu.to_csv(out, header_lines=header)
    return 0


def _coef_matrix(mu, idx, radii, cfg):
    kind = cfg["kind"]
    if kind not in COEF_KINDS:
        raise UsageError(f"unknown coefficient kind {kind!r}; expected one of {', '.join(COEF_KINDS)}")
    search = _search(cfg)
    cells = [(i, j) for i in range(len(idx)) for j in range(len(radii))]

    def work(c):
        i, j = c
        return coefficient(mu, mu.points[idx[i]], float(radii[j]), kind, cfg["n"], cfg["p"], search)

    results = _pmap(work, cells, cfg["threads"])
    M = np.full((len(idx), len(radii)), np.nan)
    for (i, j), res in zip(cells, results):
        if res.defined:
            M[i, j] = res.value
    return M, results, cells


def cmd_coeff(args, cfg, extra):
    mu = _load(args.input)
    out = _outdir(args)
    idx = _sample_atoms(mu, cfg)
    grid = _grid(mu, cfg)
    radii = grid.radii
    M, results, cells = _coef_matrix(mu, idx, radii, cfg)
    header = provenance("coeff", cfg, [args.input])
    header.append("radii " + " ".join(format(float(r), ".17g") for r in radii))
    cols = ["atom"] + [f"x{k + 1}" for k in range(mu.dim)] + [f"r{j}" for j in range(len(radii))]
    rows = [[int(a)] + list(mu.points[a]) + list(M[i]) for i, a in enumerate(idx)]
    _write(out, "coeff.csv", _csv_text(header, cols, rows))
    wit = []
    for (i, j), res in zip(cells, results):
        d = res.to_dict()
        d["atom"] = int(idx[i])
        d["scale_index"] = j
        wit.append(d)
    _write(out, "coeff.json", _json_text({"kind": cfg["kind"], "grid": grid.to_dict(),
                                          "radii": radii, "witnesses": wit}, header))
    _write(out, "coeff.svg", svg.heatmap(M.T, title=f"{cfg['kind']} (atoms x scales)",
                                         xlabel="atoms (sample order)",
                                         ylabel="scale index (largest at bottom)",
                                         comments=header))
    return 0


def cmd_sqfn(args, cfg, extra):
    mu = _load(args.input)
    out = _outdir(args)
    idx = _sample_atoms(mu, cfg)
    grid = _grid(mu, cfg)
    search = _search(cfg)

    def work(a):
        return square_function(mu, mu.points[a], grid, cfg["kind"], cfg["n"], cfg["p"], search)

    res = _pmap(work, list(idx), cfg["threads"])
    header = provenance("sqfn", cfg, [args.input])
    cols = ["atom"] + [f"x{k + 1}" for k in range(mu.dim)] + ["value", "undefined"]
    if cfg["eps"] is not None:
        cols.append("good")
    rows = []
    for a, s in zip(idx, res):
        row = [int(a)] + list(mu.points[a]) + [s.value, int(s.undefined)]
        if cfg["eps"] is not None:
            row.append(bool(s.value < cfg["eps"] ** 2))
        rows.append(row)
    _write(out, "sqfn.csv", _csv_text(header, cols, rows))
    return 0


def cmd_wdist(args, cfg, extra):
    mu = _load(args.input)
    if not args.target:
        raise UsageError("wdist needs a second measure (-j)")
    nu = _load(args.target)
    out = _outdir(args)
    p = cfg["p"]
    if cfg["method"] == "exact":
        res = wasserstein(mu, nu, p)
    elif cfg["method"] == "sinkhorn":
        res = wasserstein_entropic(mu, nu, p, eps=cfg["sinkhorn_eps"])
    else:
        raise UsageError("method must be 'exact' or 'sinkhorn'")
    header = provenance("wdist", cfg, [args.input, args.target])
    meta = {k: v for k, v in res.metadata.items() if isinstance(v, (int, float, str, bool))}
    _write(out, "wdist.json", _json_text({"p": p, "method": cfg["method"], "value": res.value,
                                          "cost": res.cost, "approximate": res.approximate,
                                          "metadata": meta}, header))
    P = res.plan.matrix
    ii, jj = np.nonzero(P > 0)
    _write(out, "plan.csv", _csv_text(header, ["i", "j", "mass"],
                                      [[int(i), int(j), P[i, j]] for i, j in zip(ii, jj)]))
    return 0


def cmd_lattice(args, cfg, extra):
    mu = _load(args.input)
    out = _outdir(args)
    lat = build_lattice(mu, cfg["A0"], cfg["C0"], cfg["depth"], check=False)
    viol = check_axioms(lat, mu)
    dbl = detect_doubling(lat, mu)
    sdb = detect_strongly_doubling(lat, mu, cfg["C_sdb"])
    header = provenance("lattice", cfg, [args.input])
    lat.to_json(out / "lattice.json", extra={"provenance": header})
    report = {"levels": [len(lat.level(k)) for k in range(lat.depth + 1)],
              "violations": viol, "doubling": int(dbl.sum()), "strongly_doubling": int(sdb.sum())}
    _write(out, "lattice_report.json", _json_text(report, header))
    if viol:
        raise AxiomViolation(f"{len(viol)} lattice axiom violations", dump={"violations": viol[:20]})
    return 0


def _pipeline(mu, cfg):
    from flatscan.decomposition import run_pipeline
    return run_pipeline(mu, _params(cfg), cfg["n"], cfg["A0"], cfg["C0"], cfg["depth"],
                        root_level=cfg["root_level"], C_sdb=cfg["C_sdb"], h_grid=cfg["h_grid"],
                        ad_samples=cfg["ad_samples"])


def budget_table(summary, params) -> list:
    """Rows (quantity, value, reference, ratio) for the mass budgets."""
    b = summary["budgets"]
    mR0 = b["R0"]
    rows = [
        ("mass of BS cubes", b["BS"], params["eps0"] * mR0, "eps0 mu(R0)"),
        ("mass of R_Far", b["R_Far"], math.sqrt(params["eps0"]) * mR0, "sqrt(eps0) mu(R0)"),
        ("mass of HD cubes", b["HD"], mR0 / params["A"], "mu(R0) / A"),
        ("mass of LD cubes", b["LD"], params["tau"] * mR0, "tau mu(R0)"),
        ("mass of BA cubes", b["BA"], mR0, "mu(R0)"),
        ("mass of F cubes", b["F"], mR0, "mu(R0)"),
    ]
    g = summary.get("graph")
    if g:
        rows.append(("mu(R_G)", g["mass_RG"], 0.5 * mR0, "mu(R0) / 2"))
    out = []
    for name, v, ref, label in rows:
        out.append({"quantity": name, "value": v, "reference": label, "reference_value": ref,
                    "ratio": v / ref if ref > 0 else None})
    return out


def _table_text(rows, header):
    lines = [f"# {h}" for h in header]
    lines.append(f"{'quantity':<20} {'value':>14} {'reference':>20} {'ratio':>10}")
    for r in rows:
        ratio = "n/a" if r["ratio"] is None else format(r["ratio"], ".4g")
        lines.append(f"{r['quantity']:<20} {r['value']:>14.6g} {r['reference']:>20} {ratio:>10}")
    return "\n".join(lines) + "\n"


def cmd_decompose(args, cfg, extra):
    mu = _load(args.input)
    out = _outdir(args)
    res = _pipeline(mu, cfg)
    header = provenance("decompose", cfg, [args.input])
    summary = res.summary()
    table = budget_table(summary, _params(cfg).to_dict())
    doc = {"summary": summary, "budget_table": table, "decomposition": res.tree.to_dict()}
    _write(out, "decomposition.json", _json_text(doc, header))
    _write(out, "summary.txt", _table_text(table, header))
    layers = [{"points": mu.points, "kind": "dots", "color": "#888888", "radius": 0.8}]
    if res.graph is not None:
        _write(out, "graph.csv", res.graph.to_grid_csv(header))
        if res.graph.n == 1 and mu.dim == 2:
            layers.append({"points": res.graph.lift(res.graph.nodes), "kind": "line", "color": "#c03030"})
    if res.nu is not None and res.nu.measure is not None:
        res.nu.measure.to_csv(out / "nu.csv", header_lines=header)
    if mu.dim >= 2:
        _write(out, "decomposition.svg", svg.scatter_plot(layers, title="atoms and graph of F",
                                                          comments=header))
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_nu(args, cfg, extra):
    mu = _load(args.input)
    out = _outdir(args)
    res = _pipeline(mu, cfg)
    header = provenance("nu", cfg, [args.input])
    if res.nu is None or res.nu.measure is None:
        raise DataError("no approximating measure: the stopping-time tree is empty",
                        dump={"warnings": res.warnings})
    nu = res.nu
    probes = _probe_points(nu, cfg)
    sums = nu.h(probes).sum(axis=1) if len(probes) else np.zeros(0)
    meta = dict(nu.metadata)
    meta["partition_probes"] = int(len(probes))
    meta["partition_max_error"] = float(np.abs(sums - 1).max()) if len(sums) else 0.0
    _write(out, "nu.json", _json_text({"nu": meta}, header))
    nu.measure.to_csv(out / "nu.csv", header_lines=header)
    return 0


def _probe_points(nu, cfg, count=1000):
    """Points in the union of the doubled covering balls, seeded."""
    if len(nu.centers) == 0:
        return np.zeros((0, nu.centers.shape[1] if nu.centers.ndim == 2 else 1))
    rng = np.random.default_rng(cfg["seed"])
    k = rng.integers(0, len(nu.centers), count)
    d = nu.centers.shape[1]
    v = rng.normal(size=(count, d))
    v /= np.linalg.norm(v, axis=1)[:, None]
    rad = 2 * nu.radii[k] * rng.uniform(0, 1, count) ** (1.0 / d)
    return nu.centers[k] + v * rad[:, None]


def run_verify(mu, cfg) -> list:
    """Three suites; returns one record per check."""
    records = []
    rng = np.random.default_rng(cfg["seed"])
    n = cfg["n"]
    # plane-fixed chain
    diam = mu.diameter_bound()
    res_ = mu.resolution()
    for b in range(cfg["verify_balls"]):
        a = int(rng.integers(len(mu)))
        lo, hi = max(4 * res_, 1e-12), max(diam / 4, 8 * res_)
        r = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
        ch = plane_fixed_chain(mu, Ball(mu.points[a], r), n=n)
        for name, ok in ch.holds.items():
            records.append({"suite": "chain", "check": name, "atom": a, "r": r, "pass": bool(ok),
                            "rms": ch.rms_dist, "w2_cost_root": ch.w2_cost_root, "fb": ch.fb,
                            "w1": ch.w1, "w2": ch.w2})
    # lattice axioms
    lat = build_lattice(mu, cfg["A0"], cfg["C0"], cfg["depth"], check=False)
    viol = check_axioms(lat, mu)
    records.append({"suite": "lattice", "check": "axioms", "violations": len(viol),
                    "pass": not viol, "first": viol[:5]})
    # duality gap on small sub-measures
    for t in range(cfg["verify_pairs"]):
        k = int(min(len(mu) // 2, 8))
        if k < 1:
            break
        perm = rng.permutation(len(mu))
        A, B = perm[:k], perm[k:2 * k]
        wa = mu.weights[A] / mu.weights[A].sum()
        wb = mu.weights[B] / mu.weights[B].sum()
        gap = w1_duality_gap((mu.points[A], wa), (mu.points[B], wb))
        records.append({"suite": "duality", "check": "w1_gap", "pair": t, "gap": gap["gap"],
                        "primal": gap["primal"], "dual": gap["dual"],
                        "pass": bool(gap["gap"] <= 1e-7 * (1 + gap["primal"]))})
    return records


def cmd_verify(args, cfg, extra):
    mu = _load(args.input)
    records = run_verify(mu, cfg)
    lines = [json.dumps(_jsonable(r), sort_keys=True) for r in records]
    for line in lines:
        print(line)
    if args.output:
        out = _outdir(args)
        header = provenance("verify", cfg, [args.input])
        text = json.dumps({"provenance": header}) + "\n" + "\n".join(lines) + "\n"
        _write(out, "verify.jsonl", text)
    failed = [r for r in records if not r["pass"]]
    if failed:
        raise VerificationFailure(f"{len(failed)} of {len(records)} checks failed")
    return 0


def cmd_report(args, cfg, extra):
    src = Path(args.input or "")
    path = src / "decomposition.json" if src.is_dir() else src
    if not path.exists():
        raise UsageError(f"no decomposition.json found at {src}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e.msg})") from None
    out = _outdir(args) if args.output else None
    s = doc["summary"]
    lines = ["# flatscan decomposition report", ""]
    lines.append(f"root cube {s['root']} at level {s['root_level']}; "
                 f"{s['n_tree']} tree cubes, {s['n_stop']} stopping cubes")
    h = s["hypothesis"]
    lines.append(f"hypothesis holds: {h['holds']} (bad mass {h['bad_mass']:.4g}, budget {h['budget']:.4g})")
    if "graph" in s:
        g = s["graph"]
        lines.append(f"Lipschitz constant of F: {g['lipschitz']:.4g}; "
                     f"mu(R_G)/mu(R0) = {g['RG_fraction']:.4g}")
    if "nu" in s:
        nu = s["nu"]
        lines.append(f"AD ratio of nu: {nu.get('ad_ratio', float('nan')):.4g}")
    for w in s.get("warnings", []):
        lines.append(f"warning: {w}")
    lines += ["", "| quantity | value | reference | ratio |", "|---|---|---|---|"]
    for r in doc.get("budget_table", []):
        ratio = "n/a" if r["ratio"] is None else format(r["ratio"], ".4g")
        lines.append(f"| {r['quantity']} | {r['value']:.6g} | {r['reference']} | {ratio} |")
    text = "\n".join(lines) + "\n"
    if out is not None:
        prov = doc.get("provenance", [])
        _write(out, "report.md", "".join(f"<!-- {p} -->\n" for p in prov) + text)
    sys.stdout.write(text)
    return 0


HANDLERS = {"gen": cmd_gen, "coeff": cmd_coeff, "sqfn": cmd_sqfn, "wdist": cmd_wdist,
            "lattice": cmd_lattice, "decompose": cmd_decompose, "nu": cmd_nu,
            "verify": cmd_verify, "report": cmd_report}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="key=value config file")
    common.add_argument("-o", "--output", help="output directory (output file for gen)")
    common.add_argument("--threads", type=int, help="worker threads (also FLATSCAN_THREADS)")
    parser = argparse.ArgumentParser(prog="flatscan", description="Multiscale flatness diagnostics "
                                     "for discrete measures.")
    parser.add_argument("--version", action="version", version=f"flatscan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen", parents=[common], help="generate a synthetic measure")
    g.add_argument("kind", help=f"one of {', '.join(GEN_KINDS)}")
    g.add_argument("settings", nargs="*", metavar="key=value",
                   help="generator parameters and config overrides")
    for name, helptext in [("coeff", "coefficient matrix over atoms x scales"),
                           ("sqfn", "square functions per atom"),
                           ("wdist", "Wasserstein distance between two measures"),
                           ("lattice", "build and check the cube lattice"),
                           ("decompose", "stopping-time decomposition and Lipschitz graph"),
                           ("nu", "approximating measure nu"),
                           ("verify", "run the invariant suites"),
                           ("report", "render a decomposition report")]:
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("-i", "--input", help="input measure (CSV or JSON); report: output dir")
        if name == "wdist":
            p.add_argument("-j", "--target", help="second measure")
        p.add_argument("settings", nargs="*", metavar="key=value", help="config overrides")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg, extra = load_config(args.config, args.settings, free_keys=args.command == "gen")
        if args.threads is not None:
            cfg["threads"] = max(1, args.threads)
        return HANDLERS[args.command](args, cfg, extra)
    except FlatscanError as e:
        print(f"error: {e}", file=sys.stderr)
        if e.dump:
            print(json.dumps(_jsonable(e.dump), sort_keys=True), file=sys.stderr)
        return e.exit_code
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3 if isinstance(e, OSError) else 4


if __name__ == "__main__":
    sys.exit(main())
