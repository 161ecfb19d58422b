"""Command-line front end.

Subcommands: ``assess`` (run one assessment on a data file or preset design),
``replicate`` (named replication experiments with tolerance verdicts),
``sweep`` (worst case over group variance ratios), ``power`` (generate under
an alternative, test the null).

A JSON config file can mirror every flag (keys use the flag spelling with
dashes or underscores); explicit flags override the file. Exit codes: 2 for
configuration errors, 3 for data errors, 4 for numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, presets
from .datamodel import Dataset, LinearHypothesis, load_dataset, load_shocks
from .engine import (
    AssessmentReport,
    AssessmentSpec,
    run_assessment,
    run_power,
    worst_case_sweep,
)
from .errorgen import ErrorModel, ShockScheme
from .errors import (
    AssessmentAbortError,
    ConfigurationError,
    DegenerateTestError,
    InferAssessError,
    ParseError,
    SchemaError,
    SingularDesignError,
    ValidationError,
)
from .matching import MatchSpec, MatchTestSpec
from .resampling import ResamplingTestSpec
from .variance import VarianceSpec

_ENV_THREADS = "INFERASSESS_THREADS"

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


# ---------------------------------------------------------------------------
# JSON with 17 significant digits (exact float round-trip)
# ---------------------------------------------------------------------------


def _dump_json(obj, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad}  {json.dumps(str(k))}: {_dump_json(v, indent + 1)}' for k, v in obj.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = ",\n".join(f"{pad}  {_dump_json(v, indent + 1)}" for v in obj)
        return "[\n" + items + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not math.isfinite(value):
            return json.dumps(None)
        return format(value, ".17g")
    return json.dumps(obj)


def write_report_json(path, payload: dict) -> None:
    Path(path).write_text(_dump_json(payload) + "\n", encoding="utf-8")


def write_pvalues_csv(path, pvalues: np.ndarray) -> None:
    lines = ["pvalue"]
    lines.extend(format(float(p), ".17g") for p in pvalues)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------


def _add_common_args(sub: argparse.ArgumentParser) -> None:
    data = sub.add_argument_group("data")
    data.add_argument("--data", help="delimited text file with a header row")
    data.add_argument("--tab", action="store_true", help="tab-delimited input")
    data.add_argument("--outcome", help="outcome column")
    data.add_argument("--x", help="comma-separated regressor columns")
    data.add_argument("--intercept", action="store_true", help="prepend an intercept column")
    data.add_argument("--absorb", help="fixed-effect column to absorb")
    data.add_argument("--cluster", help="primary cluster column")
    data.add_argument("--strata", help="coarse cluster column (must nest --cluster)")
    data.add_argument("--weight", help="sampling weight column")
    data.add_argument("--shares", help="comma-separated share columns")
    data.add_argument("--shares-sum-to-one", action="store_true")
    data.add_argument("--shocks-file", help="sector-level file with observed shifters")
    data.add_argument("--shocks-col", default="shock")
    data.add_argument("--shock-cluster-col", help="sector cluster column in the shocks file")
    data.add_argument("--preset", help="use a named preset design instead of --data")

    hyp = sub.add_argument_group("hypothesis")
    hyp.add_argument("--coef", help="tested coefficient (column name or index)")
    hyp.add_argument("--null", type=float, default=None, help="hypothesized value (default 0)")

    method = sub.add_argument_group("method")
    method.add_argument(
        "--method",
        choices=[
            "classical",
            "hc0",
            "hc1",
            "crve",
            "wild",
            "permutation",
            "akm",
            "akm0",
            "match-ai",
            "match-signs",
        ],
    )
    method.add_argument("--cluster-level", choices=["primary", "coarse"], default="primary")
    method.add_argument("--dof-convention", choices=["counted", "uncounted"], default="counted")
    method.add_argument("--ref", choices=["normal", "t"], default=None,
                        help="reference distribution (t = conventional degrees of freedom)")
    method.add_argument("--inner-reps", type=int, default=999)
    method.add_argument("--no-impose-null", action="store_true")
    method.add_argument("--perm-scheme", choices=["unit", "cluster", "strata"], default="cluster")
    method.add_argument("--match-neighbors", type=int, default=1)

    err = sub.add_argument_group("error model")
    err.add_argument(
        "--errors",
        default=None,
        help=(
            "iid-normal | cluster-normal[:rho] | residual-bootstrap[:restricted] | "
            "sign-flip[:restricted] | lognormal | two-group-hetero:ratio | "
            "fitted-scaled-normal | shocks | shocks-clustered"
        ),
    )

    eng = sub.add_argument_group("engine")
    eng.add_argument("--reps", type=int, default=None)
    eng.add_argument("--alphas", default=None, help="comma-separated levels, e.g. 0.05,0.10")
    eng.add_argument("--seed", type=int, default=None)
    eng.add_argument("--beta-tilde", choices=["zero", "restricted"], default="zero")
    eng.add_argument("--threads", type=int, default=None)

    out = sub.add_argument_group("output")
    out.add_argument("--out-dir", default=".")
    out.add_argument("--figures", action="store_true", help="render PNG figures next to the report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inferassess",
        description="Simulation-based assessment of inference methods",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_assess = sub.add_parser("assess", help="assess one inference method")
    p_assess.add_argument("--config", help="JSON file mirroring the flags")
    _add_common_args(p_assess)

    p_rep = sub.add_parser("replicate", help="run a named replication preset")
    p_rep.add_argument("name", nargs="?", help="preset name")
    p_rep.add_argument("--list", action="store_true", help="list presets and exit")
    p_rep.add_argument("--reps", type=int, default=None)
    p_rep.add_argument("--seed", type=int, default=None)
    p_rep.add_argument("--threads", type=int, default=None)
    p_rep.add_argument("--out-dir", default=".")
    p_rep.add_argument("--figures", action="store_true")

    p_sweep = sub.add_parser("sweep", help="worst case over group variance ratios")
    p_sweep.add_argument("--config", help="JSON file mirroring the flags")
    _add_common_args(p_sweep)
    p_sweep.add_argument("--ratios", help="comma-separated variance ratios")
    p_sweep.add_argument("--ratio-file", help="file with one ratio per line")

    p_power = sub.add_parser("power", help="rejection rate under an alternative")
    p_power.add_argument("--config", help="JSON file mirroring the flags")
    _add_common_args(p_power)
    p_power.add_argument("--alternative", type=float, required=True)

    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Expand a config file into flags placed before the explicit ones, so
    anything typed on the command line overrides the file."""
    args = parser.parse_args(argv)
    config_path = getattr(args, "config", None)
    if not config_path:
        return args
    try:
        raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {config_path}")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must hold a JSON object")
    tokens: list[str] = []
    for key, value in raw.items():
        dest = str(key).replace("-", "_")
        if not hasattr(args, dest):
            raise ConfigurationError(f"unknown config key: {key}")
        flag = "--" + str(key).replace("_", "-")
        if isinstance(value, bool):
            if value:
                tokens.append(flag)
        else:
            tokens.extend([flag, str(value)])
    return parser.parse_args([argv[0], *tokens, *argv[1:]])


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(_ENV_THREADS)
    return max(1, int(env)) if env else 1


def _parse_alphas(text: str | None) -> tuple[float, ...] | None:
    if text is None:
        return None
    try:
        return tuple(float(a) for a in text.split(","))
    except ValueError:
        raise ConfigurationError(f"could not parse alphas {text!r}")


def _parse_error_model(text: str) -> ErrorModel | ShockScheme:
    name, _, param = text.partition(":")
    if name == "iid-normal":
        return ErrorModel("iid_normal")
    if name == "cluster-normal":
        return ErrorModel("cluster_normal", rho=float(param) if param else 0.0)
    if name == "residual-bootstrap":
        return ErrorModel("residual_bootstrap", restricted_residuals=param == "restricted")
    if name == "sign-flip":
        return ErrorModel("sign_flip_residuals", restricted_residuals=param == "restricted")
    if name == "lognormal":
        return ErrorModel("lognormal_demeaned")
    if name == "two-group-hetero":
        if not param:
            raise ConfigurationError("two-group-hetero needs a variance ratio, e.g. :100")
        return ErrorModel("two_group_hetero", variance_ratio=float(param))
    if name == "fitted-scaled-normal":
        return ErrorModel("fitted_scaled_normal")
    if name == "shocks":
        return ShockScheme(cluster_draws=False)
    if name == "shocks-clustered":
        return ShockScheme(cluster_draws=True)
    raise ConfigurationError(f"unknown error model {text!r}")


def _load_cli_dataset(args) -> tuple[Dataset, list[str]]:
    if not args.data:
        raise ConfigurationError("either --data or --preset is required")
    if not args.outcome or not args.x:
        raise ConfigurationError("--outcome and --x are required with --data")
    x_names = [c.strip() for c in args.x.split(",") if c.strip()]
    ds = load_dataset(
        args.data,
        outcome=args.outcome,
        x=x_names,
        absorb=args.absorb,
        cluster=args.cluster,
        cluster_coarse=args.strata,
        weight=args.weight,
        shares=[c.strip() for c in args.shares.split(",")] if args.shares else None,
        intercept=args.intercept,
        shares_sum_to_one=args.shares_sum_to_one,
        delimiter="\t" if args.tab else ",",
    )
    if args.shocks_file:
        shocks, shock_cluster = load_shocks(
            args.shocks_file,
            value=args.shocks_col,
            cluster=args.shock_cluster_col,
            delimiter="\t" if args.tab else ",",
        )
        ds = ds.replace(shocks=shocks, shock_cluster=shock_cluster)
    column_names = (["(intercept)"] if args.intercept else []) + x_names
    return ds, column_names


def _tested_column(args, column_names: list[str], n_cols: int) -> int:
    if args.coef is None:
        return 1 if column_names and column_names[0] == "(intercept)" and n_cols > 1 else 0
    if args.coef in column_names:
        return column_names.index(args.coef)
    try:
        index = int(args.coef)
    except ValueError:
        raise ConfigurationError(f"--coef {args.coef!r} is neither a column name nor an index")
    if not 0 <= index < n_cols:
        raise ConfigurationError(f"--coef index {index} out of range")
    return index


def _build_method(args, tested_col: int):
    ref = None if args.ref in (None, "t") else "normal"
    dof = "absorb_counted" if args.dof_convention == "counted" else "absorb_uncounted"
    name = args.method
    if name in ("classical", "hc0", "hc1", "crve"):
        return VarianceSpec(
            kind=name, cluster_level=args.cluster_level, dof_convention=dof, reference=ref
        )
    if name == "wild":
        return ResamplingTestSpec(
            kind="wild_cluster",
            inner_reps=args.inner_reps,
            impose_null=not args.no_impose_null,
            cluster_level=args.cluster_level,
            variance=VarianceSpec(
                kind="crve", cluster_level=args.cluster_level, dof_convention=dof
            ),
        )
    if name == "permutation":
        scheme = {"unit": "unit_level", "cluster": "cluster_level", "strata": "within_strata"}[
            args.perm_scheme
        ]
        return ResamplingTestSpec(kind="permutation", scheme=scheme, inner_reps=args.inner_reps)
    if name in ("akm", "akm0"):
        return ResamplingTestSpec(kind=name, inner_reps=args.inner_reps)
    if name in ("match-ai", "match-signs"):
        return MatchTestSpec(
            kind="ai" if name == "match-ai" else "sign_change",
            match=MatchSpec(n_neighbors=args.match_neighbors),
            treat_col=tested_col,
            inner_reps=args.inner_reps,
        )
    raise ConfigurationError("--method is required")


def _method_echo(method) -> dict:
    echo = dataclasses.asdict(method)
    echo["type"] = type(method).__name__
    if isinstance(method, ResamplingTestSpec) and method.variance is None:
        echo.pop("variance", None)
    return echo


def _spec_payload(args, ds: Dataset, spec: AssessmentSpec, threads: int) -> dict:
    if isinstance(spec.error_model, ShockScheme):
        error_echo = {"kind": "shock_resampling", "cluster_draws": spec.error_model.cluster_draws}
    else:
        error_echo = {
            k: (v.tolist() if isinstance(v, np.ndarray) else v)
            for k, v in dataclasses.asdict(spec.error_model).items()
            if v is not None and v is not False
        }
    return {
        "data": getattr(args, "data", None),
        "preset": getattr(args, "preset", None),
        "n": ds.n,
        "k": ds.k,
        "hypothesis": {"R": spec.hypothesis.R.tolist(), "q": spec.hypothesis.q.tolist()},
        "method": _method_echo(spec.method),
        "error_model": error_echo,
        "beta_tilde_policy": spec.beta_tilde_policy,
        "reps": spec.reps,
        "alphas": list(spec.alphas),
        "seed": spec.seed,
        "threads": threads,
    }


def _resolve_assessment(args) -> tuple[Dataset, AssessmentSpec]:
    if args.preset:
        preset = presets.get_preset(args.preset)
        ds, spec = preset.dataset_and_spec()
        column_names: list[str] = []
        tested_col = spec.hypothesis.single_index()
        if args.coef is not None or args.null is not None:
            tested_col = _tested_column(args, column_names, ds.k)
            q = args.null if args.null is not None else 0.0
            spec = dataclasses.replace(
                spec, hypothesis=LinearHypothesis.coefficient(tested_col, ds.k, q)
            )
        if args.method:
            spec = dataclasses.replace(spec, method=_build_method(args, tested_col))
        if args.errors:
            spec = dataclasses.replace(spec, error_model=_parse_error_model(args.errors))
    else:
        ds, column_names = _load_cli_dataset(args)
        tested_col = _tested_column(args, column_names, ds.k)
        if not args.method:
            raise ConfigurationError("--method is required")
        if not args.errors:
            raise ConfigurationError("--errors is required")
        spec = AssessmentSpec(
            hypothesis=LinearHypothesis.coefficient(
                tested_col, ds.k, args.null if args.null is not None else 0.0
            ),
            method=_build_method(args, tested_col),
            error_model=_parse_error_model(args.errors),
        )
    overrides = {}
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.seed is not None:
        overrides["seed"] = args.seed
    alphas = _parse_alphas(args.alphas)
    if alphas is not None:
        overrides["alphas"] = alphas
    if args.beta_tilde != "zero":
        overrides["beta_tilde_policy"] = "restricted_fit"
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    return ds, spec


def _print_report(report: AssessmentReport) -> None:
    print(f"{'alpha':>8}  {'rejection':>10}  {'mc_se':>8}")
    for row in report.rejection_rates:
        print(f"{row.alpha:>8.3f}  {row.rate:>10.4f}  {row.mc_se:>8.4f}")
    print(f"max over-rejection: {report.max_over_rejection:.4f}")
    print(f"ks distance to uniform: {report.ks_uniform:.4f}")
    if report.replicate_failures.count:
        print(f"replicate failures: {report.replicate_failures.count}")
    for note in report.setup_warnings:
        print(f"note: {note}")


def _report_payload(report: AssessmentReport, spec_echo: dict, wall_time: float) -> dict:
    payload = {"spec": spec_echo, **report.to_dict()}
    payload["version"] = __version__
    payload["wall_time_s"] = wall_time
    return payload


def cmd_assess(args) -> int:
    ds, spec = _resolve_assessment(args)
    threads = _threads(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    report = run_assessment(ds, spec, threads=threads)
    wall = time.perf_counter() - start
    write_report_json(out_dir / "report.json", _report_payload(report, _spec_payload(args, ds, spec, threads), wall))
    write_pvalues_csv(out_dir / "pvalues.csv", report.pvalues)
    _print_report(report)
    written = ["report.json", "pvalues.csv"]
    if args.figures:
        from .figures import render_report_figures

        written += [p.name for p in render_report_figures(report, out_dir)]
    print(f"wrote {', '.join(written)} in {out_dir}")
    return 0


def cmd_replicate(args) -> int:
    if args.list or not args.name:
        if not args.list and not args.name:
            raise ConfigurationError(
                "replicate needs a preset name; available: " + ", ".join(presets.preset_names())
            )
        for preset in presets.all_presets():
            print(f"{preset.name:36s} {preset.description}")
        return 0
    preset = presets.get_preset(args.name)
    threads = _threads(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    result = preset.run(reps=args.reps, seed=args.seed, threads=threads)
    wall = time.perf_counter() - start
    payload = dict(result.payload)
    payload["version"] = __version__
    payload["wall_time_s"] = wall
    write_report_json(out_dir / "report.json", payload)
    if result.pvalues is not None:
        write_pvalues_csv(out_dir / "pvalues.csv", result.pvalues)
    if result.report is not None:
        _print_report(result.report)
        if args.figures:
            from .figures import render_report_figures

            render_report_figures(result.report, out_dir)
    for row in result.verdicts:
        flag = "PASS" if row.passed else "FAIL"
        print(f"{preset.name}: {row.quantity} = {row.value:.4f} (target {row.target}) {flag}")
    return 0


def _parse_ratio_grid(args) -> list[float]:
    if args.ratios:
        return [float(r) for r in args.ratios.split(",")]
    if args.ratio_file:
        text = Path(args.ratio_file).read_text(encoding="utf-8")
        return [float(line) for line in text.split() if line.strip()]
    raise ConfigurationError("sweep needs --ratios or --ratio-file")


def cmd_sweep(args) -> int:
    ds, spec = _resolve_assessment(args)
    grid = _parse_ratio_grid(args)
    threads = _threads(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    sweep = worst_case_sweep(ds, spec, grid, threads=threads)
    wall = time.perf_counter() - start
    worst_ratio, worst_rate = sweep.max_rejection(0.05)
    payload = {
        "spec": _spec_payload(args, ds, spec, threads),
        "ratio_grid": grid,
        "entries": [
            {"ratio": e.ratio, **e.report.to_dict()} for e in sweep.entries
        ],
        "max_rejection_at_0.05": {"ratio": worst_ratio, "rate": worst_rate},
        "version": __version__,
        "wall_time_s": wall,
    }
    write_report_json(out_dir / "report.json", payload)
    for i, entry in enumerate(sweep.entries):
        write_pvalues_csv(out_dir / f"pvalues_ratio{i}.csv", entry.report.pvalues)
    print(f"{'ratio':>10}  {'rejection@0.05':>14}")
    for entry in sweep.entries:
        mark = "  <- max" if entry.ratio == worst_ratio else ""
        print(f"{entry.ratio:>10.4g}  {entry.report.rejection_rate(0.05):>14.4f}{mark}")
    if args.figures:
        from .figures import plot_sweep

        plot_sweep(sweep, out_dir / "sweep.png")
    return 0


def cmd_power(args) -> int:
    ds, spec = _resolve_assessment(args)
    spec = dataclasses.replace(spec, power_alternative=float(args.alternative))
    threads = _threads(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    report = run_power(ds, spec, threads=threads)
    wall = time.perf_counter() - start
    echo = _spec_payload(args, ds, spec, threads)
    echo["power_alternative"] = float(args.alternative)
    write_report_json(out_dir / "report.json", _report_payload(report, echo, wall))
    write_pvalues_csv(out_dir / "pvalues.csv", report.pvalues)
    _print_report(report)
    if args.figures:
        from .figures import render_report_figures

        render_report_figures(report, out_dir)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, list(sys.argv[1:] if argv is None else argv))
        if args.command == "assess":
            return cmd_assess(args)
        if args.command == "replicate":
            return cmd_replicate(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "power":
            return cmd_power(args)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except (ConfigurationError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AssessmentAbortError, DegenerateTestError, SingularDesignError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InferAssessError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
