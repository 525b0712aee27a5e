"""Command-line entry point: ``stablefrac <subcommand> [options]``.

Exit codes: 0 success, 1 a check failed, 2 usage error, 3 numerical or domain error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields

import numpy as np

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
OUTDIR_ENV = "STABLEFRAC_OUTDIR"
DIGITS = 12
VERIFY_HEADER = ("check", "instance", "lhs", "rhs", "margin", "pass")


@dataclass
class RunConfig:
    """Every option of every subcommand, with its default."""
    n: int = 1
    s: float = 0.5
    p: float | None = None
    f: str = "exp"
    trace: str = "gaussian"
    x: str = "0,0.25,0.5"
    h: float = 1 / 64
    resolution: int = 256
    eps: float = 1e-12
    seed: int = 20240611
    instances: int = 100
    probes: int = 20
    tol: float = 1e-6
    format: str = "json"
    out: str | None = None

    def to_text(self) -> str:
        lines = [f"{k}={v}" for k, v in asdict(self).items() if v is not None]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls(**_coerce(parse_config_text(text)))


_HELP = {
    "n": "dimension of the trace variable",
    "s": "fractional order in (0, 1)",
    "p": "power exponent (dimension condition for (1+u)^p)",
    "f": "nonlinearity: exp, power<p>, spline<gamma>, linear",
    "trace": "trace function: gaussian, bump, log, one, cos<k>",
    "x": "comma-separated evaluation points",
    "h": "extension grid spacing",
    "resolution": "cells of the branch discretization",
    "eps": "inner radius of the log-polar probe",
    "seed": "seed of randomized families",
    "instances": "random instances per (n, p)",
    "probes": "probe functions per branch point",
    "tol": "stability verdict tolerance",
    "format": "json or csv",
    "out": "output file; falls back to $STABLEFRAC_OUTDIR/<command>.<ext>, then stdout",
}

_OPTIONS = {
    "dimcond": ("n", "s", "p", "format", "out"),
    "fraclap": ("n", "s", "trace", "x", "format", "out"),
    "extend": ("n", "s", "trace", "h", "format", "out"),
    "stability": ("n", "s", "eps", "tol", "format", "out"),
    "checks": ("n", "f", "resolution", "h", "seed", "probes", "format", "out"),
    "branch": ("n", "f", "resolution", "format", "out"),
    "verify": ("seed", "instances", "probes", "format", "out"),
}

_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _caster(name):
    t = str(_TYPES[name])
    if "int" in t:
        return int
    if "float" in t:
        return float
    return str


def _coerce(raw: dict) -> dict:
    out = {}
    for k, v in raw.items():
        if k not in _TYPES:
            raise ValueError(f"unknown config key {k!r}")
        out[k] = _caster(k)(v)
    return out


def parse_config_text(text: str) -> dict:
    """key=value lines; blank lines and '#' comments are skipped."""
    out = {}
    for i, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {i}: expected key=value")
        k, v = (t.strip() for t in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


# ---------------------------------------------------------------- serialization

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(f"{x:.{DIGITS}g}")
    return obj


def serialize_report(report) -> bytes:
    """Deterministic JSON: sorted keys, compact separators, 12 significant digits."""
    return json.dumps(_clean(report), sort_keys=True, separators=(",", ":")).encode() + b"\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.{DIGITS}g}"
    return str(v)


def serialize_csv(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue().encode()


def verify_csv(report) -> bytes:
    rows = [(r.check, r.instance, r.lhs, r.rhs, r.margin, r.passed) for r in report.sorted_rows()]
    return serialize_csv(VERIFY_HEADER, rows)


# ---------------------------------------------------------------- builders

def _trace(name: str, n: int, s: float):
    from .fracops import ConstantTail, PeriodicTail, TraceFunction, log_trace
    geo = "line" if n == 1 else "radial"
    name = name.lower()
    if name == "gaussian":
        return TraceFunction(np.linspace(0 if n > 1 else -8, 8, 1025 if n == 1 else 513), n=n,
                             geometry=geo, s=s,
                             func=lambda x: np.exp(-np.asarray(x) ** 2))
    if name == "bump":
        g = lambda x: np.maximum(1 - np.asarray(x) ** 2, 0.0) ** 2
        return TraceFunction(np.linspace(0 if n > 1 else -1, 1, 129 if n == 1 else 65), n=n,
                             geometry=geo, s=s, func=g)
    if name == "log":
        return log_trace(n, s, scale=2 * s)
    if name.startswith("cos") and n == 1:
        k = float(name[3:] or 1)
        c = lambda x: np.cos(k * np.asarray(x))
        return TraceFunction(np.linspace(-2 * math.pi / k, 2 * math.pi / k, 257), n=1, s=s, func=c,
                             tail=PeriodicTail(c, 2 * math.pi / k))
    if name == "one":
        return TraceFunction(np.linspace(0 if n > 1 else -1, 1, 65), n=n, geometry=geo, s=s,
                             func=lambda x: np.ones_like(np.asarray(x, float)), tail=ConstantTail(1.0))
    raise ValueError(f"unknown trace {name!r}")


def _floats(text: str) -> list:
    return [float(t) for t in text.split(",") if t.strip()]


def cmd_dimcond(cfg: RunConfig):
    from .special import condition_exponential, condition_power
    reg = condition_exponential(cfg.n, cfg.s) if cfg.p is None else condition_power(cfg.n, cfg.s, cfg.p)
    d = reg.as_dict()
    d["verdict"] = reg.verdict == "true" if reg.verdict != "boundary" else "boundary"
    return d, None, EXIT_OK


def cmd_fraclap(cfg: RunConfig):
    from .fracops import frac_laplacian_point
    u = _trace(cfg.trace, cfg.n, cfg.s)
    xs = _floats(cfg.x)
    vals = [float(frac_laplacian_point(u, x, cfg.s)) for x in xs]
    rows = list(zip(xs, vals))
    return {"n": cfg.n, "s": cfg.s, "trace": cfg.trace, "x": xs, "value": vals}, \
        (("x", "value"), rows), EXIT_OK


def cmd_extend(cfg: RunConfig):
    from .extension import ExtensionGrid, dtn, extend_poisson
    from .fracops import frac_laplacian_point
    u = _trace(cfg.trace, cfg.n, cfg.s)
    geo = "line" if cfg.n == 1 else "radial"
    fld = extend_poisson(u, ExtensionGrid.uniform(geo, h=cfg.h))
    t = dtn(fld)
    xs = fld.x[np.abs(fld.x) <= 0.5 + 1e-12][::4]
    a = np.asarray(t(xs))
    b = np.array([frac_laplacian_point(u, x, cfg.s) for x in xs])
    rows = list(zip(xs, a, b))
    out = {"n": cfg.n, "s": cfg.s, "trace": cfg.trace, "shape": list(fld.v.shape),
           "residual": fld.info.get("residual"),
           "dtn_rel_error": float(np.max(np.abs(a - b)) / np.max(np.abs(b)))}
    return out, (("x", "dtn", "direct"), rows), EXIT_OK


def cmd_stability(cfg: RunConfig):
    """Singular solution -2s log|x| with lambda from the closed form, probed in log-polar space."""
    from .fracops import exponential, log_trace
    from .special import singular_lambda_closed_form
    from .stability import LogPolarProbe, rayleigh_min
    lam = singular_lambda_closed_form(cfg.n, cfg.s)
    u = log_trace(cfg.n, cfg.s, scale=2 * cfg.s)
    rep = rayleigh_min(u, exponential().scaled(lam), cfg.s, LogPolarProbe(cfg.n, eps=cfg.eps))
    d = rep.as_dict()
    d.update(n=cfg.n, s=cfg.s, lam=lam)
    d["verdict"] = "stable" if rep.rayleigh_min >= -cfg.tol else "unstable"
    d["marginal"] = abs(rep.rayleigh_min) <= cfg.tol
    rows = [(k, d[k]) for k in sorted(d)]
    return d, (("field", "value"), rows), EXIT_OK


def cmd_checks(cfg: RunConfig):
    from .extension import ExtensionGrid, extend_poisson
    from .fracops import nonlinearity_from_name
    from .gelfand import ContinuationConfig, minimal_branch
    from .stability import RadialCutoff, geometric_stability_check, lemma23_check, random_cutoffs
    f = nonlinearity_from_name(cfg.f)
    br = minimal_branch(f, ContinuationConfig(resolution=cfg.resolution), n=cfg.n)
    geo = "line" if cfg.n == 1 else "radial"
    rows = []
    etas = random_cutoffs(cfg.probes, cfg.n, seed=cfg.seed)
    for j, pt in enumerate(br.minimal()):
        if pt.lam == 0:
            continue
        fld = extend_poisson(pt.solution, ExtensionGrid.uniform(geo, h=cfg.h), nonlinearity=f.scaled(pt.lam))
        for i, eta in enumerate(etas):
            r = geometric_stability_check(fld, eta)
            rows.append((f"geometric_stability[pt{j:02d},eta{i:02d}]", r.lhs, r.rhs, r.margin, r.holds))
        r = lemma23_check(fld, RadialCutoff.standard())
        rows.append((f"radial_derivative_test[pt{j:02d}]", r.lhs, r.rhs, r.margin, r.holds))
    ok = all(r[-1] for r in rows)
    out = {"checks": [dict(zip(("name", "lhs", "rhs", "margin", "pass"), r)) for r in rows]}
    return out, (("name", "lhs", "rhs", "margin", "pass"), rows), EXIT_OK if ok else EXIT_CHECK


def cmd_branch(cfg: RunConfig):
    from .fracops import nonlinearity_from_name
    from .gelfand import ContinuationConfig, detect_lambda_star, minimal_branch
    f = nonlinearity_from_name(cfg.f)
    br = minimal_branch(f, ContinuationConfig(resolution=cfg.resolution), n=cfg.n)
    fold = detect_lambda_star(br)
    rows = [(p.arclength, p.lam, p.sup_norm, p.mu_min) for p in br.points]
    out = {"lambda_star": fold.lambda_star, "fold_index": br.fold_index,
           "resolutions": [cfg.resolution], "n": cfg.n, "f": cfg.f}
    return out, (("arclength", "lambda", "sup_norm", "mu_min"), rows), EXIT_OK


def cmd_verify(cfg: RunConfig):
    from .verify import run_suite
    rep = run_suite(seed=cfg.seed, instances=cfg.instances, probes=cfg.probes)
    out = {"seed": rep.seed, "passed": rep.passed, "constants": rep.constants,
           "checks": [{"check": r.check, "instance": r.instance, "lhs": r.lhs, "rhs": r.rhs,
                       "margin": r.margin, "pass": r.passed} for r in rep.sorted_rows()]}
    rows = [(r.check, r.instance, r.lhs, r.rhs, r.margin, r.passed) for r in rep.sorted_rows()]
    return out, (VERIFY_HEADER, rows), EXIT_OK if rep.passed else EXIT_CHECK


COMMANDS = {
    "dimcond": (cmd_dimcond, "dimension condition for e^u (or (1+u)^p with --p)"),
    "fraclap": (cmd_fraclap, "pointwise fractional Laplacian of a named trace"),
    "extend": (cmd_extend, "extension of a named trace and its Dirichlet-to-Neumann map"),
    "stability": (cmd_stability, "stability of the singular solution on the log-polar probe"),
    "checks": (cmd_checks, "stability inequalities along the minimal branch"),
    "branch": (cmd_branch, "minimal branch by continuation and the extremal parameter"),
    "verify": (cmd_verify, "randomized interpolation and added-variable suite"),
}


# ---------------------------------------------------------------- parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    defaults = RunConfig()
    ap = _Parser(prog="stablefrac", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="key=value file; command-line flags override it")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, text) in COMMANDS.items():
        sp = sub.add_parser(name, help=text, description=text)
        for opt in _OPTIONS[name]:
            flag = "--res" if opt == "resolution" else f"--{opt}"
            kw = {"dest": opt, "default": getattr(defaults, opt), "type": _caster(opt),
                  "help": f"{_HELP[opt]} (default: %(default)s)"}
            if opt == "format":
                kw["choices"] = ("json", "csv")
            names = [flag, "--resolution"] if opt == "resolution" else [flag]
            sp.add_argument(*names, **kw)
        sp.add_argument("--config", dest="sub_config", help=argparse.SUPPRESS)
    return ap


def resolve_config(argv) -> tuple[str, RunConfig]:
    ap = build_parser()
    ns = ap.parse_args(argv)
    path = ns.config or getattr(ns, "sub_config", None)
    if path:
        with open(path) as fh:
            fromfile = _coerce(parse_config_text(fh.read()))
        sp = ap._subparsers._group_actions[0].choices[ns.command]
        sp.set_defaults(**{k: v for k, v in fromfile.items() if k in _OPTIONS[ns.command]})
        ns = ap.parse_args(argv)
    cfg = RunConfig(**{k: getattr(ns, k) for k in _OPTIONS[ns.command]})
    return ns.command, cfg


def _destination(command: str, cfg: RunConfig) -> str | None:
    if cfg.out:
        return cfg.out
    outdir = os.environ.get(OUTDIR_ENV)
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        return os.path.join(outdir, f"{command}.{cfg.format}")
    return None


def _numeric_errors():
    from scipy.linalg import LinAlgError
    from .extension import SolverError
    from .fracops import DivergenceError, DivergentTailError
    from .gelfand import ExtrapolationError, NewtonError, NoFoldError
    from .special import DomainError
    from .stability import CertificateError, EigenError, GeometryError, RegimeError, ResolutionError
    return (DomainError, DivergentTailError, DivergenceError, SolverError, NoFoldError, NewtonError,
            ExtrapolationError, EigenError, CertificateError, GeometryError, RegimeError,
            ResolutionError, LinAlgError, ArithmeticError, ValueError)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command, cfg = resolve_config(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (OSError, ValueError) as exc:
        print(f"stablefrac: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    func = COMMANDS[command][0]
    try:
        payload, table, code = func(cfg)
    except _numeric_errors() as exc:
        print(f"stablefrac {command}: {type(exc).__module__}.{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if cfg.format == "csv" and table is not None:
        data = serialize_csv(*table)
    else:
        data = serialize_report(payload)
    dest = _destination(command, cfg)
    if dest is None:
        sys.stdout.write(data.decode())
    else:
        with open(dest, "wb") as fh:
            fh.write(data)
    return code


parse_and_dispatch = main


if __name__ == "__main__":
    sys.exit(main())
