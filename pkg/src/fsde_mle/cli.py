"""Command line front end: ``fsde-mle <subcommand> [flags]``.

Settings come from an optional ``--config`` file of ``key = value`` lines
(``#`` starts a comment, keys are flag names with ``-`` or ``_``) and from
flags, which win.  Output is CSV: comment lines with the toolkit version
and the resolved configuration, a header row, then data, with LF line
endings and no timestamps, so equal configurations give byte-identical
files.  A JSON summary goes next to the CSV (``<out>.json``) or to stderr.

Exit codes: 0 success, 2 an acceptance threshold failed, 1 error.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__, analysis, constants, experiments, kernel, mlf, schemes
from .errors import ConfigInvalid, FsdeError
from .models import MODEL_NAMES, builtin_model

EXIT_OK, EXIT_ERROR, EXIT_THRESHOLD = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigInvalid(message)


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _complexes(text):
    try:
        return [complex(v.replace(" ", "")) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


# subcommand table: name -> (help, [(flag, type, default, help)])
_MODEL = ("--model", str, "bilinear_scalar", f"one of {', '.join(MODEL_NAMES)}")
_SUBCOMMANDS = {
    "ml-eval": ("evaluate E_{a,b}(z)", [
        ("--a", float, 0.75, "first parameter"),
        ("--b", float, 0.75, "second parameter"),
        ("--z", _complexes, [-1.0], "comma-separated arguments"),
        ("--tol", float, mlf.DEFAULT_TOL, "relative tolerance"),
    ]),
    "kernel-check": ("kernel regularity integrals and fitted slopes", [
        _MODEL,
        ("--alpha", float, 0.75, "fractional order"),
        ("--n", _ints, [8, 16, 32, 64, 128], "grid counts"),
        ("--t", float, 1.0, "grid time"),
    ]),
    "kappa": ("limit constants", [
        ("--alpha", _floats, list(constants.DEFAULT_ALPHAS), "orders"),
        ("--y-max", int, None, "last y cell (default: automatic)"),
        ("--cells-per-unit", int, 16, "Gauss nodes per axis on near cells"),
        ("--tail-tol", float, 1e-8, "tail bound"),
    ]),
    "mn-cov": ("quadrature of E[M_n^2] against kappa2^2", [
        ("--alpha", float, 0.75, "fractional order"),
        ("--n", _ints, [16, 64, 256, 1024], "grid counts"),
        ("--t", float, 1.0, "grid time"),
    ]),
    "strong-order": ("L2 error of the MLE scheme and fitted order", [
        _MODEL,
        ("--alpha", float, 0.75, "fractional order"),
        ("--n", _ints, [8, 16, 32, 64, 128], "grid counts"),
        ("--paths", int, 2000, "sample paths"),
        ("--seed", int, 42, "seed"),
        ("--refine", int, 32, "reference refinement factor"),
    ]),
    "error-dist": ("distribution of the normalized remainder", [
        ("--model", str, "additive_scalar", "scalar model"),
        ("--alpha", float, 0.75, "fractional order"),
        ("--n", int, 256, "grid count"),
        ("--paths", int, 10000, "sample paths per seed"),
        ("--seed", _ints, [1, 2, 3], "seeds"),
    ]),
    "y-limit": ("limit SVE and the normalized reference gap", [
        ("--model", str, "additive_scalar", "model"),
        ("--alpha", float, 0.75, "fractional order"),
        ("--n", _ints, [64, 128, 256], "grid counts"),
        ("--paths", int, 1000, "sample paths"),
        ("--seed", int, 7, "seed"),
        ("--refine", int, 32, "reference refinement factor"),
        ("--n-limit", int, 256, "grid count of the limit equation"),
    ]),
    "simulate": ("terminal states of one scheme", [
        _MODEL,
        ("--alpha", float, 0.75, "fractional order"),
        ("--n", int, 64, "grid count"),
        ("--paths", int, 100, "sample paths"),
        ("--seed", int, 0, "seed"),
        ("--scheme", str, "mle", "mle, kmle, aux or ref"),
        ("--refine", int, 32, "refinement factor of the reference"),
    ]),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fsde-mle", description="Mittag-Leffler Euler toolkit for fractional SDEs")
    parser.add_argument("--version", action="version", version=f"fsde-mle {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (help_text, flags) in _SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key = value file; flags override it")
        p.add_argument("--out", default=None, help="CSV path (default stdout)")
        p.add_argument("--workers", type=int, default=None, help="worker threads")
        for flag, typ, _, h in flags:
            p.add_argument(flag, type=typ, default=None, help=h)
    return parser


def _read_config(path: str, flags) -> dict:
    """Parse a flat ``key = value`` file into typed values."""
    types = {f.lstrip("-").replace("-", "_"): t for f, t, _, _ in flags}
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigInvalid(f"{path}: cannot read config ({exc.strerror})") from exc
    for no, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{path}:{no}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ConfigInvalid(f"{path}:{no}: unknown key {key!r}")
        try:
            out[key] = types[key](value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigInvalid(f"{path}:{no}: bad value for {key!r}: {exc}") from exc
    return out


def resolve(argv) -> tuple[str, dict, dict]:
    """Parse ``argv`` into ``(command, settings, io_options)``."""
    args = build_parser().parse_args(argv)
    flags = _SUBCOMMANDS[args.command][1]
    settings = {f.lstrip("-").replace("-", "_"): d for f, _, d, _ in flags}
    if args.config:
        settings.update(_read_config(args.config, flags))
    for key in settings:
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    io_opts = {"out": args.out, "workers": args.workers}
    return args.command, settings, io_opts


# formatting -----------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, complex):
        return f"{v.real!r}{'+' if v.imag >= 0 else '-'}{abs(v.imag)!r}j"
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def render_csv(command: str, settings: dict, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# fsde-mle {__version__} {command}\n")
    for key in sorted(settings):
        buf.write(f"# {key}={_fmt(settings[key])}\n")
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(row[c]) for c in columns) + "\n")
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


# subcommands ----------------------------------------------------------------


def _ml_eval(s):
    p = mlf.MlParams(s["a"], s["b"], tol=s["tol"])
    rows = []
    for z in s["z"]:
        val = complex(mlf.ml_scalar(p, z if z.imag else z.real))
        rows.append({"a": s["a"], "b": s["b"], "z": z, "value_re": val.real, "value_im": val.imag})
    return ["a", "b", "z", "value_re", "value_im"], rows, {"passed": None}


def _kernel_check(s):
    rep = experiments.kernel_check(s["model"], s["alpha"], s["n"], s["t"])
    slopes = sorted({(r["integral_id"], r["fitted_slope"]) for r in rep.error_table})
    return ["n", "integral_id", "value", "fitted_slope"], rep.error_table, {
        "passed": rep.passed, "slopes": {str(i): v for i, v in slopes}}


def _kappa(s):
    q = constants.QuadConfig(s["y_max"], s["cells_per_unit"], s["tail_tol"])
    rows = constants.kappa_table(s["alpha"], q)
    return ["alpha", "kappa1_sq", "kappa11_sq", "kappa2_sq", "tail_estimate"], rows, {"passed": None}


def _mn_cov(s):
    rep = experiments.mn_covariance(s["alpha"], s["n"], t=s["t"])
    return ["n", "value", "target", "gap"], rep.covariance_table, {"passed": rep.passed}


def _strong_order(s):
    rep = experiments.strong_order(s["model"], s["alpha"], s["n"], s["paths"], s["seed"],
                                   s["refine"])
    f = rep.fit
    return ["n", "h", "l2_error", "stderr"], rep.error_table, {
        "passed": rep.passed, "slope": f.slope, "ci": [f.ci_low, f.ci_high],
        "target": s["alpha"] - 0.5}


def _error_dist(s):
    rep = experiments.error_distribution(s["alpha"], s["n"], s["paths"], s["seed"], s["model"])
    return ["t", "sample_count", "emp_var", "target_var", "ks_stat", "p_value"], \
        rep.distribution_tests, {"passed": rep.passed, "tests": rep.distribution_tests}


def _y_limit(s):
    rep = experiments.y_limit(s["model"], s["alpha"], s["n"], s["paths"], s["seed"],
                              s["refine"], s["n_limit"])
    lim = rep.distribution_tests[0]
    summary = {"limit": lim, "notes": rep.notes, "passed": None}
    if s["model"] == "additive_scalar":
        v = [r["var_gap"] for r in rep.error_table]
        summary["passed"] = lim["max_abs_limit"] == 0.0 and v[-1] <= 0.5 * v[0]
    return ["n", "sample_count", "var_gap", "var_gap_se"], rep.error_table, summary


def _simulate(s):
    model = builtin_model(s["model"], s["alpha"])
    n, scheme = s["n"], s["scheme"]
    refine = s["refine"] if scheme == "ref" else 1
    b = schemes.generate_increments(s["seed"], n, model.m, refine, s["paths"], model.T)
    table = kernel.build_kernel_table(model, n, with_cells=scheme in ("kmle", "aux"))
    if scheme == "mle":
        X = schemes.solve_mle(model, table, b)[:, -1]
    elif scheme == "ref":
        X = schemes.reference_solution(model, b)[:, -1]
    elif scheme == "kmle":
        ig = schemes.sample_interval_gaussians(model, table, b)
        X = schemes.solve_variant_kmle(model, table, b, ig)[:, -1]
    elif scheme == "aux":
        Xh = schemes.solve_mle(model, table, b)
        ig = schemes.sample_interval_gaussians(model, table, b, targets=[n])
        X = schemes.solve_auxiliary(model, table, b, ig, Xh)[:, -1]
    else:
        raise ConfigInvalid(f"unknown scheme {scheme!r}; choose mle, kmle, aux or ref")
    cols = ["path"] + [f"x{i + 1}" for i in range(model.d)]
    rows = [dict(path=p, **{f"x{i + 1}": X[p, i] for i in range(model.d)}) for p in range(len(X))]
    summary = {"passed": None, "mean": X.mean(axis=0).tolist(),
               "variance": X.var(axis=0, ddof=1).tolist() if len(X) > 1 else None}
    return cols, rows, summary


_HANDLERS = {
    "ml-eval": _ml_eval,
    "kernel-check": _kernel_check,
    "kappa": _kappa,
    "mn-cov": _mn_cov,
    "strong-order": _strong_order,
    "error-dist": _error_dist,
    "y-limit": _y_limit,
    "simulate": _simulate,
}


def run(command: str, settings: dict, out: str | None = None) -> tuple[str, dict, int]:
    """Execute one subcommand; returns ``(csv_text, summary, exit_code)``."""
    cols, rows, summary = _HANDLERS[command](settings)
    text = render_csv(command, settings, cols, rows)
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        with open(out + ".json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonable({"command": command, "version": __version__,
                                 "config": settings, **summary}), fh, indent=2, sort_keys=True)
            fh.write("\n")
    code = EXIT_THRESHOLD if summary.get("passed") is False else EXIT_OK
    return text, summary, code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        command, settings, io_opts = resolve(argv)
        if io_opts["workers"] is not None:
            os.environ["FSDE_MLE_WORKERS"] = str(io_opts["workers"])
        text, summary, code = run(command, settings, io_opts["out"])
    except FsdeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if io_opts["out"] is None:
        sys.stdout.write(text)
        print(json.dumps(_jsonable(summary), sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
