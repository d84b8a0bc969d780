"""Command-line entry point: ``cvquad estimate | sweep | theory | lab | plot``.

Configs are flat JSON objects validated against ``data/config.schema.json``.
Exit codes: 0 success, 1 failed check, 2 usage or config error, 3 estimator
or runtime error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import os
import re
import subprocess
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import fuzzy_lab as lab
from . import harness as hz
from . import rate_theory as rt
from .errors import ConfigError, CvquadError, ParameterError
from .sampling import cell_stream, draw_sample
from .testfn import reference_moment

logger = logging.getLogger("cvquad")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
CSV_COLUMNS = ("schema_version", "config_hash", "seed", "gamma", "statistic", "n",
               "stat", "n_reps", "stderr", "n_failed", "error")
DEFAULT_OUT = "cvquad_out"

_FUNCTION_KEYS = {
    "sine": ("offset",), "one_plus_bump": ("amp",), "lipschitz": ("kink",),
    "linear": ("a", "b"), "constant": ("c",), "bump": ("variant",), "peak": ("beta", "x0"),
}


# --------------------------------------------------------------------------
# formatting


def fmt(x) -> str:
    """A number at 17 significant digits (``inf`` / ``nan`` spelled out)."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


def dumps(obj) -> str:
    """Compact JSON with every float written at 17 significant digits; non-finite -> null."""
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{dumps(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(dumps(v) for v in obj) + "]"
    if hasattr(obj, "value"):  # enums
        return dumps(obj.value)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# --------------------------------------------------------------------------
# configuration


def _schema() -> dict:
    return json.loads(resources.files("cvquad.data").joinpath("config.schema.json").read_text())


def _line_of(text: str, key: str) -> int:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else 1


def load_config(path: str) -> tuple[dict, str]:
    """Read and validate a config; raises :class:`ConfigError` with line/field diagnostics."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    validator = jsonschema.Draft202012Validator(_schema())
    problems = sorted(validator.iter_errors(raw), key=lambda e: [str(p) for p in e.absolute_path])
    if problems:
        lines = []
        for err in problems:
            field = err.absolute_path[0] if err.absolute_path else None
            if field is None and err.validator == "additionalProperties":
                extra = re.findall(r"'([^']+)'", err.message)
                field = extra[0] if extra else None
            where = _line_of(text, field) if field else 1
            lines.append(f"{path}:{where}: field {field or '<root>'!r}: {err.message}")
        raise ConfigError("\n".join(lines))
    return raw, text


def _function_spec(raw: dict) -> dict:
    kind = raw.get("function")
    if kind is None:
        raise ConfigError("config needs a 'function'")
    spec = {"kind": kind}
    for key in _FUNCTION_KEYS[kind]:
        if key in raw:
            spec[key] = raw[key]
    if kind == "peak":
        missing = [k for k in ("beta", "q", "p", "s") if k not in raw]
        if missing:
            raise ConfigError(f"peak function needs {missing}")
        spec.update(q=raw["q"], p=raw["p"], s=raw["s"])
    return spec


def _estimator_spec(raw: dict) -> dict:
    method = raw.get("method")
    if method is None:
        raise ConfigError("config needs a 'method'")
    spec: dict = {"method": method}
    M = raw.get("M")
    if isinstance(M, str):
        sched = {"schedule": M, "c": raw.get("M_c", 1.0)}
        if M == "power":
            if "M_exponent" not in raw:
                raise ConfigError("M = 'power' needs 'M_exponent'")
            sched["exponent"] = raw["M_exponent"]
        spec["M"] = sched
    elif M is not None:
        spec["M"] = M
    k = raw.get("k")
    if isinstance(k, str):
        spec["k"] = {"schedule": k, "c": raw.get("k_c", 1.0)}
    elif k is not None:
        spec["k"] = k
    if method == "cv_moment":
        reg = {"kind": raw.get("regressor", "grid"), "empty": raw.get("empty", "nearest")}
        cells = raw.get("cells", "fraction")
        reg["cells"] = ({"schedule": "fraction", "fraction": raw.get("cells_fraction", 0.5)}
                        if cells == "fraction" else cells)
        if "regressor_k" in raw:
            reg["k"] = raw["regressor_k"]
        spec["regressor"] = reg
    for key in ("quad_resolution", "probe_n"):
        if key in raw:
            spec[key] = raw[key]
    return spec


def _theory(raw: dict) -> dict:
    return {k: raw[k] for k in ("s", "p", "beta", "tol") if k in raw}


def config_hash(raw: dict) -> str:
    """Digest of every result-affecting field (the free-text comment excluded)."""
    payload = {k: v for k, v in raw.items() if k != "comment"}
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def experiment_config(raw: dict) -> hz.ExperimentConfig:
    if "n_grid" not in raw:
        raise ConfigError("sweep config needs 'n_grid'")
    return hz.ExperimentConfig(
        function=_function_spec(raw),
        estimator=_estimator_spec(raw),
        n_grid=raw["n_grid"],
        reps=raw.get("reps", 100),
        q=raw.get("q", 1),
        d=raw.get("d", 1),
        gamma=raw.get("gamma"),
        base_seed=raw["seed"],
        statistic=raw.get("statistic", "RMSE"),
        theory=_theory(raw),
        reference_tol=raw.get("reference_tol", 1e-10),
    )


def _regime_warning(raw: dict) -> None:
    if raw.get("method") != "cv_moment" or "s" not in raw or "p" not in raw:
        return
    try:
        rep = rt.regime(raw["s"], raw["p"], raw.get("q", 1), raw.get("d", 1))
    except ParameterError:
        return
    if rep.regime is rt.Regime.RARE_EVENT:
        print(f"warning: s={raw['s']} is below d(2q-p)/(2pq)={rep.thresholds[2]:.6g} (rare-event regime); "
              "truncated Monte Carlo is the recommended estimator", file=sys.stderr)


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("CVQUAD_OUT_DIR") or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _git_revision() -> str | None:
    try:
        res = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             timeout=5, check=False)
    except (OSError, subprocess.SubprocessError):
        return None
    return res.stdout.strip() or None if res.returncode == 0 else None


def _load_with_seed(args) -> dict:
    raw, _ = load_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    raw.setdefault("seed", 0)
    return raw


# --------------------------------------------------------------------------
# subcommands


def cmd_estimate(args) -> int:
    raw = _load_with_seed(args)
    if "n" not in raw:
        raise ConfigError("estimate config needs 'n'")
    _regime_warning(raw)
    fspec = _function_spec(raw)
    d, q, n = raw.get("d", 1), raw.get("q", 1), raw["n"]
    gamma = math.inf if raw.get("gamma") is None else float(raw["gamma"])
    f = hz.build_function(fspec, d)
    estimator = hz.bind_estimator(_estimator_spec(raw), f, n, q=q, d=d, gamma=gamma, theory=_theory(raw))
    S = draw_sample(f, n, gamma, cell_stream(raw["seed"], n, 0))
    e = estimator(S)
    row = {"schema_version": SCHEMA_VERSION, "config_hash": config_hash(raw), **e.to_dict(),
           "gamma": "inf" if math.isinf(gamma) else gamma}
    try:
        row["reference"] = reference_moment(f, q, raw.get("reference_tol", 1e-10))
    except CvquadError as exc:
        logger.info("no reference moment: %s", exc)
    print(dumps(row))
    return EXIT_OK


def write_csv(path: Path, result: hz.SweepResult, chash: str) -> None:
    cfg = result.config
    gamma = "inf" if math.isinf(cfg.gamma) else fmt(cfg.gamma)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i, n in enumerate(result.n_grid):
            ok = cfg.reps - int(result.n_failed[i])
            w.writerow([SCHEMA_VERSION, chash, cfg.base_seed, gamma, cfg.statistic.value, n,
                        fmt(result.stat[i]), ok, fmt(result.stderr[i]), int(result.n_failed[i]),
                        result.cell_error(i)])


def write_reps(path: Path, result: hz.SweepResult, chash: str) -> None:
    cfg = result.config
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        for i, n in enumerate(result.n_grid):
            for r in range(cfg.reps):
                row = {"schema_version": SCHEMA_VERSION, "config_hash": chash, "seed": cfg.base_seed,
                       "stream_index": cell_stream(cfg.base_seed, n, r).stream_index, "n": n, "rep": r,
                       "value": float(result.values[i, r]), "error": float(result.errors[i, r]),
                       "failure": result.failures.get((i, r), "")}
                fh.write(dumps(row) + "\n")


def plot_sweep(path: Path, n_grid, stat, stderr, report: dict, title: str = "") -> None:
    """Log-log SVG of the error statistic with the fitted and theoretical slopes."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "cvquad"
    ns = np.asarray(n_grid, dtype=float)
    ys = np.asarray(stat, dtype=float)
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.errorbar(ns, ys, yerr=np.asarray(stderr, dtype=float), fmt="o", color="k", capsize=3, label="measured")
    slope, intercept = report.get("slope"), report.get("intercept")
    if slope is not None and math.isfinite(slope):
        ax.plot(ns, np.exp(intercept) * ns**slope, "-", color="tab:blue", label=f"fit slope {slope:.3f}")
        theory = report.get("theory")
        if theory is not None:
            # anchor the theory line at the fit's value in the middle of the grid
            mid = math.exp(np.mean(np.log(ns)))
            anchor = math.exp(intercept) * mid**slope
            ax.plot(ns, anchor * (ns / mid) ** theory, "--", color="tab:red", label=f"theory {theory:.3f}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("error")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def cmd_sweep(args) -> int:
    raw = _load_with_seed(args)
    cfg = experiment_config(raw)
    _regime_warning(raw)
    chash = config_hash(raw)
    result = hz.run_sweep(cfg, threads=args.threads)
    out = _out_dir(args)
    write_csv(out / "sweep.csv", result, chash)
    write_reps(out / "reps.jsonl", result, chash)
    try:
        report = hz.report_for(result).to_dict()
    except ParameterError as exc:
        report = {"error": str(exc)}
    report.update(config_hash=chash, seed=cfg.base_seed, reference=result.reference,
                  statistic=cfg.statistic.value)
    (out / "report.json").write_text(dumps(report) + "\n", encoding="utf-8")
    files = ["sweep.csv", "reps.jsonl", "report.json"]
    if args.plot:
        title = f"{raw.get('method')} on {raw.get('function')}"
        plot_sweep(out / "plot.svg", result.n_grid, result.stat, result.stderr, report, title)
        files.append("plot.svg")
    record = {
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "config_hash": chash, "git_revision": _git_revision(), "version": __version__,
        "command": "sweep", "config": raw, "threads": args.threads, "files": files,
        "rows": len(result.n_grid),
    }
    (out / "run.json").write_text(dumps(record) + "\n", encoding="utf-8")
    print(dumps({k: report.get(k) for k in ("slope", "intercept", "r2", "theory", "verdict", "below_floor")}))
    logger.info("wrote %s", ", ".join(str(out / f) for f in files))
    return EXIT_OK


def cmd_plot(args) -> int:
    out = Path(args.out or os.environ.get("CVQUAD_OUT_DIR") or DEFAULT_OUT)
    try:
        with open(out / "sweep.csv", newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read sweep output in {out}: {exc}") from None
    n = [int(r["n"]) for r in rows]
    stat = [float(r["stat"]) for r in rows]
    se = [float(r["stderr"]) for r in rows]
    plot_sweep(out / "plot.svg", n, stat, se, report)
    print(out / "plot.svg")
    return EXIT_OK


def cmd_theory(args) -> int:
    try:
        table = rt.theory_table(args.s, args.p, args.q, args.d, args.gamma)
    except ParameterError as exc:
        print(f"cvquad theory: {exc}", file=sys.stderr)
        return EXIT_USAGE
    t1, t2, t3 = table["thresholds"]
    rows = [
        ("regime", table["regime"] + (" (boundary)" if table["boundary"] else "")),
        ("threshold d/p", fmt(t1)),
        ("threshold d(2q-p)/(p(2q-2))", fmt(t2)),
        ("threshold d(2q-p)/(2pq)", fmt(t3)),
        ("moment exponent", fmt(table["exponent"])),
        ("recommended method", table["recommended_method"]),
        ("truncation exponent 1/p-s/d", fmt(table["truncation_exponent"])),
    ]
    if table["truncated_mc_exponent"] is not None:
        rows.append(("truncated MC exponent", fmt(table["truncated_mc_exponent"])))
    rows += [(f"M at n={n}", fmt(m) if m is not None else "-") for n, m in table["M_schedule"].items()]
    if "integral_exponent" in table:
        rows.append(("integral exponent", fmt(table["integral_exponent"])))
    rows += [(f"k at n={n}", str(k)) for n, k in table.get("k_schedule", {}).items()]
    width = max(len(r[0]) for r in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value}")
    return EXIT_OK


def cmd_lab(args) -> int:
    raw = _load_with_seed(args) if args.config else {"seed": args.seed or 0}
    trials = args.trials if args.trials is not None else raw.get("trials", 10**6)
    h_trials = raw.get("hoeffding_trials", 10**5)
    if trials < lab.MIN_TRIALS:
        raise ConfigError(f"--trials must be >= {lab.MIN_TRIALS}, got {trials}")
    checks = lab.run_lab(trials, raw["seed"], raw.get("checks"), raw.get("expected"), h_trials)
    width = max(len(c.name) for c in checks)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:<{width}}  value={fmt(c.value)}  "
              f"expected={fmt(c.expected)}  {c.detail}")
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_CHECK if failed else EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvquad", description="Monte Carlo moment and integral estimation experiments.")
    parser.add_argument("--version", action="version", version=f"cvquad {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="flat JSON config file")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")

    p = sub.add_parser("estimate", help="one estimate from a config with 'n'")
    common(p)
    p = sub.add_parser("sweep", help="convergence sweep over 'n_grid'")
    common(p)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    p.add_argument("--plot", action="store_true", help="also write plot.svg")
    p.add_argument("--out", help="output directory (default $CVQUAD_OUT_DIR or ./cvquad_out)")
    p = sub.add_parser("theory", help="regime and exponent table")
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--gamma", type=float, help="noise exponent for the integral rate")
    p = sub.add_parser("lab", help="lower-bound construction checks")
    common(p, config_required=False)
    p.add_argument("--trials", type=int, help="Case I simulation trials")
    p = sub.add_parser("plot", help="redraw plot.svg from a sweep output directory")
    p.add_argument("--out", help="sweep output directory")
    return parser


COMMANDS = {"estimate": cmd_estimate, "sweep": cmd_sweep, "theory": cmd_theory,
            "lab": cmd_lab, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"cvquad {args.command}: config error:\n{exc}", file=sys.stderr)
        return EXIT_USAGE
    except CvquadError as exc:
        print(f"cvquad {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
