"""Command-line driver: ``loopforge {verify,sample,experiment,info}``.

Exit codes: 0 on success, 1 when a verification check fails, 2 on usage
or input errors.  Sampling work is cut into chunks of ``CHUNK`` draws and
chunk ``k`` always uses ``derive_stream(seed, k)``, so the output does
not depend on the number of worker processes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, z2
from .chain import WeightedChain, spectral_margins
from .errors import LoopforgeError
from .isomorphism import lupu_sample, sample_gff
from .lerw import sample_lerw
from .spanning import wilson
from .verify import FIXTURES, SUITES, derive_stream, format_report, load_graph, run_suite

CHUNK = 1000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def worker_count(requested=None) -> int:
    env = os.environ.get("LOOPFORGE_WORKERS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"LOOPFORGE_WORKERS must be an integer, got {env!r}") from None
    else:
        value = 1 if requested is None else requested
    if value < 1:
        raise UsageError("worker count must be at least 1")
    return value


def _executor(workers):
    return ProcessPoolExecutor(max_workers=workers) if workers > 1 else None


def _map(fn, jobs, workers):
    ex = _executor(workers)
    if ex is None:
        return list(map(fn, jobs))
    with ex:
        return list(ex.map(fn, jobs))


def resolve_vertex(chain: WeightedChain, text):
    """Vertex id from a command-line string; integer ids are accepted as digits."""
    if text in chain.index:
        return text
    try:
        as_int = int(text)
    except ValueError:
        as_int = None
    if as_int is not None and as_int in chain.index:
        return as_int
    raise UsageError(f"unknown vertex {text!r}")


def _floats(text, name):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name} must be a comma-separated list of numbers") from None


# ---------------------------------------------------------------------------
# sampling chunks (top level so worker processes can import them)


def _chunk_lerw(job):
    data, start, seed, k, size = job
    chain = WeightedChain.from_dict(data)
    return [s.vertices for s in sample_lerw(chain, start, derive_stream(seed, k), size)]


def _chunk_ust(job):
    data, root, seed, k, size = job
    chain = WeightedChain.from_dict(data)
    trees = wilson(chain, derive_stream(seed, k), root=root, size=size)
    return [sorted(t.parent.items(), key=lambda e: str(e[0])) for t in trees]


def _chunk_gff(job):
    data, method, seed, k, size = job
    chain = WeightedChain.from_dict(data)
    sampler = sample_gff if method == "direct" else lupu_sample
    return sampler(chain, derive_stream(seed, k), size).z.tolist()


def _chunked(fn, head, seed, n, workers):
    jobs = [(*head, seed, k, min(CHUNK, n - k * CHUNK)) for k in range(-(-n // CHUNK))]
    out = []
    for part in _map(fn, jobs, workers):
        out.extend(part)
    return out


# ---------------------------------------------------------------------------
# writers


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return repr(float(x))


def _emit(text: str, path):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_verify(args):
    graph = points = None
    if args.points is not None:
        if args.graph is None:
            raise UsageError("--points needs --graph")
        graph = load_graph(args.graph)
        sep = ";" if ";" in args.points else ","
        points = tuple(resolve_vertex(graph, p) for p in args.points.split(sep))
        if len(points) != 4:
            raise UsageError("--points takes four vertices x1,x2,y1,y2")
        if args.suite != "fomin":
            raise UsageError("--graph/--points apply to the fomin suite")
    elif args.graph is not None:
        raise UsageError("--graph needs --points")
    tolerances = {}
    for item in args.tol:
        name, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--tol expects name=value, got {item!r}")
        try:
            tolerances[name] = float(value)
        except ValueError:
            raise UsageError(f"--tol value for {name!r} is not a number") from None
    workers = worker_count(args.workers)
    ex = _executor(workers)
    try:
        results = run_suite(args.suite, args.seed, graph, points, tolerances, ex)
    finally:
        if ex is not None:
            ex.shutdown()
    _emit(format_report(results, args.suite, args.seed), args.output)
    return 0 if all(r.ok for r in results) else 1


def cmd_sample(args):
    chain = load_graph(args.graph)
    if args.n < 0:
        raise UsageError("--n must be nonnegative")
    workers = worker_count(args.workers)
    data = chain.to_dict()
    if args.what == "lerw":
        start = resolve_vertex(chain, getattr(args, "from"))
        if args.n and start not in chain.vertices:
            raise UsageError("--from must be an interior vertex")
        paths = _chunked(_chunk_lerw, (data, start), args.seed, args.n, workers)
        if args.out == "json":
            text = json.dumps([list(p) for p in paths]) + "\n"
        else:
            rows = [(i, len(p) - 1, ";".join(map(str, p))) for i, p in enumerate(paths)]
            text = _csv_text(("sample", "length", "path"), rows) if paths else ""
    elif args.what == "ust":
        root = None if args.root is None else resolve_vertex(chain, args.root)
        trees = _chunked(_chunk_ust, (data, root), args.seed, args.n, workers)
        if args.out == "csv":
            rows = [(i, c, p) for i, t in enumerate(trees) for c, p in t]
            text = _csv_text(("sample", "child", "parent"), rows) if trees else ""
        else:
            text = json.dumps([[list(e) for e in t] for t in trees]) + "\n"
    else:
        fields = _chunked(_chunk_gff, (data, args.method), args.seed, args.n, workers)
        if args.out == "json":
            text = json.dumps({"vertices": list(chain.vertices), "samples": fields}) + "\n"
        else:
            rows = [(i, *map(_num, z)) for i, z in enumerate(fields)]
            text = _csv_text(("sample", *map(str, chain.vertices)), rows) if fields else ""
    _emit(text if args.n else "", args.output)
    return 0


def _odd_loop_row(r):
    dom = z2.build_domain("disc", r=r)
    return r, dom.n, z2.odd_loop_mass(dom)


def cmd_experiment(args):
    if args.what == "odd-loop-slope":
        radii = _floats(args.radii, "--radii")
        if len(radii) < 2 or min(radii) <= 0:
            raise UsageError("--radii needs at least two positive radii")
        rows = _map(_odd_loop_row, radii, worker_count(args.workers))
        logs = np.log([r for r, _, _ in rows])
        slope, icpt = np.polyfit(logs, [m for _, _, m in rows], 1)
        if args.out == "json":
            text = json.dumps({
                "rows": [{"radius": r, "vertices": n, "log_radius": float(lr), "odd_loop_mass": m}
                         for (r, n, m), lr in zip(rows, logs)],
                "fit_slope": float(slope), "fit_intercept": float(icpt), "target": 0.125,
            }, indent=1) + "\n"
        else:
            text = _csv_text(
                ("radius", "vertices", "log_radius", "odd_loop_mass", "fit_slope", "fit_intercept"),
                [(_num(r), n, _num(lr), _num(m), _num(slope), _num(icpt)) for (r, n, m), lr in zip(rows, logs)],
            )
    else:
        if not args.rmin < args.rmax or args.points < 2:
            raise UsageError("need rmin < rmax and at least two points")
        grid = np.linspace(args.rmin, args.rmax, args.points)
        ys = None if args.y is None else _floats(args.y, "--y")
        res = z2.crossing_exponent(args.n, r_grid=grid, y_points=ys, terms=args.terms)
        ratio = res.get("ratio_scaled")
        if args.out == "json":
            out = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in res.items()}
            text = json.dumps(out, indent=1, default=float) + "\n"
        else:
            rows = [
                (res["n"], _num(r), _num(ld), _num(res["exponent"]), _num(res["target"]),
                 "" if ratio is None else _num(ratio[i]))
                for i, (r, ld) in enumerate(zip(res["r"], res["log_det"]))
            ]
            text = _csv_text(("n", "r", "log_det", "fit_exponent", "target", "ratio_scaled"), rows)
    _emit(text, args.output)
    return 0


def cmd_info(args):
    lines = [f"loopforge {__version__}", "fixtures: " + ", ".join(FIXTURES)]
    if args.graph is not None:
        chain = load_graph(args.graph)
        lines.append(f"interior vertices: {chain.n}")
        lines.append(f"boundary vertices: {len(chain.boundary)}")
        for k, v in spectral_margins(chain).items():
            lines.append(f"{k}: {v:.12g}" if isinstance(v, float) else f"{k}: {v}")
    _emit("\n".join(lines) + "\n", args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="loopforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"loopforge {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(q, seed=True):
        if seed:
            q.add_argument("--seed", type=int, default=0)
        q.add_argument("--workers", type=int, default=None, help="overridden by LOOPFORGE_WORKERS")
        q.add_argument("--output", default=None, help="write here instead of stdout")

    v = sub.add_parser("verify", help="run verification suites")
    v.add_argument("--suite", choices=SUITES, default="all")
    v.add_argument("--graph")
    v.add_argument("--points", help="x1,x2,y1,y2 for the fomin suite (use ; when ids contain commas)")
    v.add_argument("--tol", action="append", default=[], metavar="NAME=VALUE")
    common(v)
    v.set_defaults(fn=cmd_verify)

    s = sub.add_parser("sample", help="draw samples")
    ss = s.add_subparsers(dest="what", required=True, parser_class=_Parser)
    lw = ss.add_parser("lerw")
    lw.add_argument("--from", required=True)
    lw.add_argument("--out", choices=("csv", "json"), default="csv")
    ut = ss.add_parser("ust")
    ut.add_argument("--root")
    ut.add_argument("--out", choices=("csv", "json"), default="json")
    gf = ss.add_parser("gff")
    gf.add_argument("--method", choices=("direct", "lupu"), default="direct")
    gf.add_argument("--out", choices=("csv", "json"), default="csv")
    for q in (lw, ut, gf):
        q.add_argument("--graph", required=True, help="graph JSON path or bundled fixture name")
        q.add_argument("--n", type=int, default=1)
        common(q)
        q.set_defaults(fn=cmd_sample)

    e = sub.add_parser("experiment", help="Z² experiments")
    es = e.add_subparsers(dest="what", required=True, parser_class=_Parser)
    ol = es.add_parser("odd-loop-slope")
    ol.add_argument("--radii", default="8,12,16,24,32")
    ce = es.add_parser("crossing-exponent")
    ce.add_argument("--n", type=int, default=2)
    ce.add_argument("--rmin", type=float, default=3.0)
    ce.add_argument("--rmax", type=float, default=6.0)
    ce.add_argument("--points", type=int, default=31)
    ce.add_argument("--terms", type=int, default=200)
    ce.add_argument("--y", default=None, help="comma-separated boundary points in (0, pi)")
    for q in (ol, ce):
        q.add_argument("--out", choices=("csv", "json"), default="csv")
        common(q, seed=False)
        q.set_defaults(fn=cmd_experiment)

    i = sub.add_parser("info", help="version, fixtures and graph diagnostics")
    i.add_argument("--graph")
    i.add_argument("--output", default=None)
    i.set_defaults(fn=cmd_info)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"loopforge: error: {exc}", file=sys.stderr)
        return 2
    except (LoopforgeError, KeyError, OSError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"loopforge: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
