"""Command line entry point: run, validate, sweep and replay experiments.

Exit codes: 0 success, 1 failed checks (or replay mismatch), 2 config or
usage errors (including a locked output directory).
"""
import argparse
import csv
import io
import os
import shutil
import sys
import tempfile
import time

from . import config as cfgmod

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _set_threads(n):
    """Thread count for the BLAS/FFT pools; numeric results do not depend on it."""
    if n is None:
        env = os.environ.get("QFTLAB_THREADS")
        n = int(env) if env and env.strip().isdigit() else None
    if n is not None:
        if n < 1:
            raise cfgmod.ConfigError("threads must be >= 1")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)
    return n


class OutputLock:
    """Single-writer lock file inside the output directory."""

    def __init__(self, out):
        self.path = os.path.join(out, ".lock")
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise cfgmod.ConfigError(f"output directory is locked by another run ({self.path})") from None
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self.fd)
        os.remove(self.path)
        return False


def write_csv(path, header, rows):
    """RFC-4180 CSV: CRLF line ends, minimal quoting, floats at 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for row in rows:
        w.writerow([cfgmod.fmt_float(v) if isinstance(v, float) else v for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def build_report(cfg, result, elapsed, threads):
    from .estimates import EstimateReport
    checks = [c.to_dict() if isinstance(c, EstimateReport) else c for c in result.checks]
    failing = [c["name"] for c in checks if c.get("passed") is False]
    messages = sorted({c.get("extra", {}).get("message") for c in checks
                       if c.get("passed") is False and c.get("extra", {}).get("message")})
    results = {"checks": checks, "failing_checks": failing, "messages": messages,
               "verdict": "pass" if not failing else "fail", "summary": result.summary}
    return {
        "config": cfg,
        "config_hash": cfgmod.config_hash(cfg),
        "experiment": cfg["experiment"],
        "results": results,
        "metrics": {"wall_clock_s": elapsed, "n_samples": result.n_samples,
                    "samples_per_s": result.n_samples / elapsed if elapsed > 0 else 0.0,
                    "threads": threads},
    }


def execute(cfg, out):
    """Run one validated config and persist report.json and tables/*.csv."""
    from .experiments import run_experiment
    os.makedirs(out, exist_ok=True)
    with OutputLock(out):
        t0 = time.perf_counter()
        result = run_experiment(cfg)
        elapsed = time.perf_counter() - t0
        report = build_report(cfg, result, elapsed, os.environ.get("OMP_NUM_THREADS"))
        tdir = os.path.join(out, "tables")
        if result.tables:
            os.makedirs(tdir, exist_ok=True)
        for name, (header, rows) in sorted(result.tables.items()):
            write_csv(os.path.join(tdir, f"{name}.csv"), header, rows)
        with open(os.path.join(out, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(cfgmod.dumps(report) + "\n")
    return report


def _resolve(cfg, seed=None, out=None):
    if seed is not None:
        cfg = cfgmod.with_override(cfg, "mc.seed", int(seed))
        cfgmod.validate(cfg)
    out = out or cfg.get("output") or os.path.join("runs", cfg["experiment"])
    return cfg, out


def cmd_run(args):
    _set_threads(args.threads)
    cfg, out = _resolve(cfgmod.load(args.config), args.seed, args.out)
    report = execute(cfg, out)
    res = report["results"]
    for c in res["checks"]:
        print(f"{'PASS' if c.get('passed') else 'FAIL'}  {c['name']}  observed={c.get('observed')}  "
              f"tolerance={c.get('tolerance')}")
    for m in res["messages"]:
        print(m)
    print(f"report: {os.path.join(out, 'report.json')}  hash: {report['config_hash']}")
    if res["failing_checks"]:
        print("failing checks: " + ", ".join(res["failing_checks"]), file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_validate(args):
    cfg = cfgmod.load(args.config)
    print(f"valid {cfg['experiment']} config; hash {cfgmod.config_hash(cfg)}")
    return EXIT_OK


def _parse_value(s):
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def cmd_sweep(args):
    _set_threads(args.threads)
    base, out = _resolve(cfgmod.load(args.config), args.seed, args.out)
    values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise cfgmod.ConfigError("--values must list at least one value")
    rows, failed = [], False
    for v in values:
        cfg = cfgmod.with_override(base, args.param, float(v) if args.param == "T" else v)
        cfgmod.validate(cfg)
        sub = os.path.join(out, f"{args.param}={v}")
        rep = execute(cfg, sub)
        for c in rep["results"]["checks"]:
            rows.append([str(v), c["name"], c.get("value"), c.get("stderr"), c.get("observed"),
                         c.get("tolerance"), c.get("passed")])
        failed |= bool(rep["results"]["failing_checks"])
        print(f"{args.param}={v}: {rep['results']['verdict']}")
    os.makedirs(out, exist_ok=True)
    rows = [[r if not isinstance(r, bool) else str(r).lower() for r in row] for row in rows]
    write_csv(os.path.join(out, "sweep.csv"),
              [args.param, "check", "value", "stderr", "observed", "tolerance", "passed"],
              [[x if x is not None else "" for x in row] for row in rows])
    print(f"trend table: {os.path.join(out, 'sweep.csv')}")
    return EXIT_FAILED if failed else EXIT_OK


def _payload(out):
    """Numeric payload of a run: the report minus wall-clock metrics, and all tables."""
    import json
    with open(os.path.join(out, "report.json"), encoding="utf-8") as fh:
        rep = json.load(fh)
    body = cfgmod.dumps({k: rep[k] for k in ("config", "config_hash", "experiment", "results")})
    tables = {}
    tdir = os.path.join(out, "tables")
    if os.path.isdir(tdir):
        for name in sorted(os.listdir(tdir)):
            with open(os.path.join(tdir, name), "rb") as fh:
                tables[name] = fh.read()
    return body, tables, rep["config"]


def replay(report_dir):
    """Rerun a stored report's config in a scratch directory; returns (identical, differences)."""
    body, tables, cfg = _payload(report_dir)
    cfgmod.validate(cfg)
    tmp = tempfile.mkdtemp(prefix="qftlab-replay-")
    try:
        execute(cfg, tmp)
        body2, tables2, _ = _payload(tmp)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    diffs = []
    if body != body2:
        diffs.append("report.json")
    for name in sorted(set(tables) | set(tables2)):
        if tables.get(name) != tables2.get(name):
            diffs.append(f"tables/{name}")
    return not diffs, diffs


def cmd_replay(args):
    _set_threads(args.threads)
    path = args.report
    d = os.path.dirname(path) if path.endswith(".json") else path
    ok, diffs = replay(d or ".")
    if ok:
        print("replay identical")
        return EXIT_OK
    print("replay differs: " + ", ".join(diffs), file=sys.stderr)
    return EXIT_FAILED


def make_parser():
    p = argparse.ArgumentParser(prog="qftlab", description="Finite-cutoff phi^4_3 numerical laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--threads", type=int)
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="schema-check a config")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    s = sub.add_parser("sweep", help="run a config over a list of parameter values")
    s.add_argument("config")
    s.add_argument("--param", required=True, help="'T' or a dotted config key such as mc.n_samples")
    s.add_argument("--values", required=True, help="comma separated values")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_sweep)
    rp = sub.add_parser("replay", help="rerun a stored report and compare numeric payloads")
    rp.add_argument("report", help="report.json or its run directory")
    rp.add_argument("--threads", type=int)
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        return args.func(args)
    except cfgmod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
