"""Command-line entry point: ``ellcone analyze | check | bench``.

``check`` imports only the certificate reader and the interval checker, so
a certificate is re-validated without the solver ever being loaded.

Exit codes: 0 success, 1 usage/parse/IO error, 2 partial result (some
point is top), 3 a certificate step could not be confirmed.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL, EXIT_UNKNOWN = 0, 1, 2, 3

INVARIANT_HEADER = "ellcone-invariants"
INVARIANT_VERSION = 1

logger = logging.getLogger("ellcone")


def corpus_dir() -> Path:
    return Path(__file__).with_name("corpus")


def env_seed(default: int = 0) -> int:
    """Seed for randomized sampling, overridable through ``ELLCONE_SEED``."""
    raw = os.environ.get("ELLCONE_SEED", "")
    try:
        return int(raw) if raw.strip() else default
    except ValueError:
        return default


def _config(args):
    from .config import DEFAULT

    kw = {}
    for name in ("epsilon", "pad_max", "widen_delay", "beta_cap", "bootstrap_iters", "horizon",
                 "solver_tol", "max_iterations"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return DEFAULT.with_(**kw)


def _hex(x: float) -> str:
    return float(x).hex()


def format_invariants(res, name: str = "") -> str:
    """Line-oriented dump of every program point; floats in hexadecimal."""
    out = [f"{INVARIANT_HEADER} {INVARIANT_VERSION}"]
    if name:
        out.append(f"program {name}")
    out.append(f"variables {' '.join(res.program.variables)}")
    for counter, (lo, hi, rel) in res.sidecar.items():
        out.append(f"bounds {counter} {lo} {hi}" + (" horizon-relative" if rel else ""))
    for point, C in res.points.items():
        counters = res.counters_at.get(point, ())
        out.append(f"point {point} counters {' '.join(counters) if counters else '-'}")
        if C is None:
            out.append("top")
            continue
        out.append(f"center {' '.join(_hex(v) for v in C.base.c)}")
        for row in C.base.Q:
            out.append(f"shape {' '.join(_hex(v) for v in row)}")
        for nm, s in zip(counters, C.counters):
            out.append(f"slot {nm} beta {_hex(s.beta)} lambda {_hex(s.lam)} "
                       f"extrapolated {int(s.extrapolated)} delta {' '.join(_hex(v) for v in s.delta)}")
    return "\n".join(out) + "\n"


def _summary(res, name: str) -> str:
    lines = [f"{name}: {len(res.program.variables)} variables, {len(res.loops)} loop(s), "
             f"{len(res.certificate)} certificate steps, {res.stats.get('seconds', 0.0):.2f}s"]
    for lp in res.loops:
        status = "stable" if lp.stable and lp.error is None else f"top ({lp.error})"
        lines.append(f"  loop {lp.counter}: policy {lp.policy}, {lp.iterations} iteration(s), "
                     f"{lp.widenings} widening(s), {status}")
    for point, C in res.points.items():
        if C is None:
            lines.append(f"  {point}: top")
            continue
        slots = ", ".join(f"{nm}: beta={s.beta:.6g} delta=[{', '.join(f'{d:.6g}' for d in s.delta)}]"
                          for nm, s in zip(res.counters_at.get(point, ()), C.counters))
        c = ", ".join(f"{v:.6g}" for v in C.base.c)
        lines.append(f"  {point}: center ({c}), volume {C.base.volume_proxy():.4g}"
                     + (f"; {slots}" if slots else ""))
    for note in res.certificate.notes:
        lines.append(f"  note: {note}")
    for err in res.errors:
        lines.append(f"  top: {err}")
    return "\n".join(lines)


def cmd_analyze(args) -> int:
    from .analyzer import analyze
    from .lang import ParseError, parse

    path = Path(args.path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        prog = parse(text)
    except ParseError as exc:
        print(f"{path}:{exc}", file=sys.stderr)
        return EXIT_ERROR
    cfg = _config(args)
    res = analyze(prog, cfg)
    print(_summary(res, path.name))
    if args.out:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / f"{path.stem}.cert").write_text(res.certificate.dumps(), encoding="utf-8")
            (out / f"{path.stem}.inv").write_text(format_invariants(res, path.name), encoding="utf-8")
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
    return EXIT_PARTIAL if res.partial else EXIT_OK


def cmd_check(args) -> int:
    # keep this path free of the solver: certificate + interval only
    from .certificate import Certificate, CertificateFormatError

    try:
        text = Path(args.path).read_text(encoding="utf-8")
        cert = Certificate.loads(text)
    except (OSError, UnicodeDecodeError, CertificateFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    bad = cert.failures()
    for i in bad:
        s = cert.steps[i]
        print(f"unknown: step {i} ({s.kind} {s.op}): {s.claim}")
    if bad:
        print(f"{len(bad)} of {len(cert)} steps could not be confirmed")
        return EXIT_UNKNOWN
    print(f"ok: {len(cert)} steps certified")
    return EXIT_OK


def bench_one(path: str, cfg) -> dict:
    from .analyzer import analyze
    from .lang import parse

    p = Path(path)
    row = {"program": p.stem, "n": 0, "seconds": 0.0, "status": "error", "points_top": 0,
           "steps": 0, "max_beta": float("nan"), "volume": float("nan")}
    try:
        prog = parse(p.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        row["status"] = f"error: {exc}"
        return row
    t0 = time.perf_counter()
    res = analyze(prog, cfg)
    row["seconds"] = time.perf_counter() - t0
    row["n"] = prog.n
    row["steps"] = len(res.certificate)
    row["points_top"] = sum(C is None for C in res.points.values())
    row["status"] = "partial" if res.partial else "certified"
    heads = [C for k, C in res.points.items() if k.startswith("head:") and C is not None]
    if heads:
        row["max_beta"] = max(s.beta for C in heads for s in C.counters)
        row["volume"] = max(C.base.volume_proxy() for C in heads)
    return row


BENCH_COLUMNS = ("program", "n", "seconds", "status", "points_top", "steps", "max_beta", "volume")


def format_table(rows) -> str:
    out = ["\t".join(BENCH_COLUMNS)]
    for r in rows:
        cells = []
        for k in BENCH_COLUMNS:
            v = r[k]
            cells.append(f"{v:.4g}" if isinstance(v, float) else str(v))
        out.append("\t".join(cells))
    return "\n".join(out) + "\n"


def _plot(rows, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    families = {}
    for r in rows:
        fam = r["program"].rstrip("0123456789").rstrip("_") or r["program"]
        families.setdefault(fam, []).append(r)
    for fam, rs in sorted(families.items()):
        rs = sorted(rs, key=lambda r: r["n"])
        ax.plot([r["n"] for r in rs], [r["seconds"] for r in rs], "o-", label=fam)
    ax.set_xlabel("dimension")
    ax.set_ylabel("analysis time (s)")
    ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_bench(args) -> int:
    d = Path(args.corpus) if args.corpus else corpus_dir()
    if not d.is_dir():
        print(f"error: no corpus directory {d}", file=sys.stderr)
        return EXIT_ERROR
    files = sorted(str(f) for f in d.glob("*.ell"))
    cfg = _config(args)
    if args.jobs > 1 and len(files) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(bench_one, files, [cfg] * len(files)))
    else:
        rows = [bench_one(f, cfg) for f in files]
    table = format_table(rows)
    sys.stdout.write(table)
    try:
        if args.out:
            Path(args.out).write_text(table, encoding="utf-8")
        if args.plot:
            _plot(rows, args.plot)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def _add_config_flags(p):
    p.add_argument("--epsilon", type=float, help="radius squared of the ball every affine image contains")
    p.add_argument("--pad-max", type=int, help="padding attempts before a step gives up")
    p.add_argument("--widen-delay", type=int, help="widenings without slope slack")
    p.add_argument("--beta-cap", type=int, help="widenings before a slope is sent to infinity")
    p.add_argument("--bootstrap-iters", type=int, help="abstract iterates joined into a bootstrap base")
    p.add_argument("--horizon", type=int, help="bound assumed for unbounded loop counters")
    p.add_argument("--solver-tol", type=float, help="interior-point tolerance")
    p.add_argument("--max-iterations", type=int, help="interior-point iteration budget")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ellcone", description="Certified ellipsoidal-cone loop invariants.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="analyze one program")
    a.add_argument("path")
    a.add_argument("--out", help="directory for <name>.cert and <name>.inv")
    _add_config_flags(a)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("check", help="replay a certificate file")
    c.add_argument("path")
    c.set_defaults(func=cmd_check)

    b = sub.add_parser("bench", help="time the analysis over a corpus directory")
    b.add_argument("corpus", nargs="?", help="directory of .ell programs (default: bundled corpus)")
    b.add_argument("--out", help="write the table to this file")
    b.add_argument("--plot", help="write a time-vs-dimension chart to this file")
    b.add_argument("--jobs", type=int, default=1)
    _add_config_flags(b)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
