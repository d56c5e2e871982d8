"""Command-line interface.

Subcommands: measures, glm, meta, bglmm, corr, corpus analyze,
corpus simulate, and repro (embedded-fixture reproduction). Outputs are
written atomically; every JSON payload embeds the run configuration and
tool version. Exit codes: 2 usage, 3 data validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, bglmm, corpus, fixtures, glm, io, meta, rankcorr, svgplots
from .errors import (
    DataValidationError,
    EffectPortError,
    NUMERICAL_ERRORS,
    VALIDATION_ERRORS,
)
from .tables import EffectKind, correct_zero_cells, effect

MEASURES = tuple(k.value for k in EffectKind)
MECHANISMS = {
    "constant-or": EffectKind.OR,
    "constant-rr": EffectKind.RR,
    "constant-rd": EffectKind.RD,
}


def _config_of(args: argparse.Namespace) -> dict:
    config = {}
    for key, value in vars(args).items():
        if key in ("handler", "command", "corpus_command"):
            continue
        config[key] = str(value) if isinstance(value, Path) else value
    return config


def _emit(payload: dict, output: str | None) -> None:
    if output:
        io.write_json_atomic(payload, output)
    else:
        json.dump(payload, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def _single_meta(studies: list[meta.StudyRow], meta_id: str | None) -> list[meta.StudyRow]:
    if meta_id is not None:
        studies = [s for s in studies if s.meta_id == meta_id]
        if not studies:
            raise DataValidationError(f"no studies with meta_id {meta_id!r}")
        return studies
    ids = sorted({s.meta_id for s in studies})
    if len(ids) > 1:
        raise DataValidationError(
            f"input holds {len(ids)} meta-analyses ({', '.join(ids[:5])}...); "
            "pass --meta-id"
        )
    return studies


def _kinds(measure: str | None) -> list[EffectKind]:
    return [EffectKind(measure)] if measure else list(EffectKind)


def _cmd_measures(args: argparse.Namespace) -> int:
    studies = io.read_study_csv(args.input)
    estimates = []
    for study in studies:
        table = correct_zero_cells(study.to_table(), args.correction)
        for kind in _kinds(args.measure):
            est = effect(table, kind, args.level)
            estimates.append(
                {
                    "meta_id": study.meta_id,
                    "study_id": study.study_id,
                    "baseline_risk": table.baseline_risk,
                    **est.to_dict(),
                }
            )
    if args.format == "csv":
        fieldnames = (
            "meta_id", "study_id", "baseline_risk", "kind", "point",
            "se_transformed", "ci_low", "ci_high", "level", "method",
        )
        if not args.output:
            raise DataValidationError("--format csv requires --output")
        io.write_csv_atomic(estimates, fieldnames, args.output)
        return 0
    payload = io.result_payload(__version__, _config_of(args), {"estimates": estimates})
    _emit(payload, args.output)
    return 0


def _cmd_glm(args: argparse.Namespace) -> int:
    if args.study_input:
        data = io.dataset_from_studies(io.read_study_csv(args.study_input))
    elif args.input:
        data = io.read_aggregated_csv(args.input)
    else:
        raise DataValidationError("provide --input or --study-input")
    terms = tuple(t.strip() for t in args.terms.split(",") if t.strip())
    spec = glm.ModelSpec(args.link, terms)
    fit = glm.fit(data, spec)
    result = {"fit": fit.to_dict(args.level)}
    if args.standardize:
        standardized = glm.standardize(
            fit, data, args.standardize,
            n_resamples=args.resamples, seed=args.seed, level=args.level,
        )
        result["standardized"] = standardized.to_dict()
    payload = io.result_payload(__version__, _config_of(args), result)
    _emit(payload, args.output)
    return 0


def _cmd_meta(args: argparse.Namespace) -> int:
    studies = _single_meta(io.read_study_csv(args.input), args.meta_id)
    fit = meta.two_stage(
        studies,
        EffectKind(args.measure),
        meta.PoolingMethod(args.method),
        correction=args.correction,
        level=args.level,
    )
    if args.plot:
        labels = [s.study_id for s in studies]
        io.write_text_atomic(svgplots.forest_svg(fit, labels), args.plot)
    payload = io.result_payload(__version__, _config_of(args), fit.to_dict())
    _emit(payload, args.output)
    return 0


def _cmd_bglmm(args: argparse.Namespace) -> int:
    studies = _single_meta(io.read_study_csv(args.input), args.meta_id)
    fit = bglmm.fit(studies, order=args.quadrature)

    baselines = [
        correct_zero_cells(s.to_table(), args.correction).baseline_risk
        for s in studies
    ]
    lo = max(0.01, min(baselines))
    hi = min(0.99, max(baselines))
    if hi - lo < 1e-6:
        lo, hi = max(0.01, lo - 0.05), min(0.99, hi + 0.05)
    grid = np.linspace(lo, hi, args.grid_points)

    result = {"fit": fit.to_dict(), "marginal": {}, "curves": {}, "spearman": {}}
    curves = []
    observed: dict[EffectKind, list[tuple[float, float]]] = {}
    for kind in EffectKind:
        result["marginal"][kind.value] = bglmm.marginal(fit, kind, level=args.level).to_dict()
        curve = bglmm.conditional_curve(
            fit, kind, grid, level=args.level, draws=args.draws, seed=args.seed
        )
        curves.append(curve)
        result["curves"][kind.value] = curve.to_dict()
        observed[kind] = [
            (
                correct_zero_cells(s.to_table(), args.correction).baseline_risk,
                effect(correct_zero_cells(s.to_table(), args.correction), kind).point,
            )
            for s in studies
        ]
        try:
            result["spearman"][kind.value] = rankcorr.correlate_meta(
                studies, kind, args.correction, args.level
            ).to_dict()
        except EffectPortError as err:
            result["spearman"][kind.value] = {"degenerate": True, "reason": str(err)}
    if args.plot:
        io.write_text_atomic(svgplots.conditional_panels_svg(curves, observed), args.plot)
    payload = io.result_payload(__version__, _config_of(args), result)
    _emit(payload, args.output)
    return 0


def _cmd_corr(args: argparse.Namespace) -> int:
    studies = _single_meta(io.read_study_csv(args.input), args.meta_id)
    result = {}
    for kind in _kinds(args.measure):
        try:
            result[kind.value] = rankcorr.correlate_meta(
                studies, kind, args.correction, args.level
            ).to_dict()
        except EffectPortError as err:
            result[kind.value] = {"degenerate": True, "reason": str(err)}
    payload = io.result_payload(__version__, _config_of(args), result)
    _emit(payload, args.output)
    return 0


def _cmd_corpus_analyze(args: argparse.Namespace) -> int:
    studies = io.read_study_csv(args.input)
    analysis = corpus.analyze(
        studies,
        min_studies=args.min_studies,
        threshold=args.threshold,
        split_at=args.split_at,
        correction=args.correction,
        level=args.level,
    )
    if args.records:
        fieldnames = ("meta_id", "k", "rho_or", "rho_rr", "rho_rd")
        rows = []
        for record in analysis.records:
            rows.append(
                {
                    "meta_id": record.meta_id,
                    "k": record.k,
                    "rho_or": "" if record.rho_or is None else repr(record.rho_or.rho),
                    "rho_rr": "" if record.rho_rr is None else repr(record.rho_rr.rho),
                    "rho_rd": "" if record.rho_rd is None else repr(record.rho_rd.rho),
                }
            )
        io.write_csv_atomic(rows, fieldnames, args.records)
    if args.plot:
        io.write_text_atomic(svgplots.corpus_scatter_svg(analysis), args.plot)
    payload = io.result_payload(
        __version__,
        _config_of(args),
        {
            "summaries": [s.to_dict() for s in analysis.summaries],
            "n_records": len(analysis.records),
            "skipped": [{"meta_id": m, "k": k} for m, k in analysis.skipped],
        },
    )
    _emit(payload, args.output)
    return 0


def _cmd_corpus_simulate(args: argparse.Namespace) -> int:
    mechanism = corpus.SimMechanism(
        kind=MECHANISMS[args.mechanism],
        effect=args.effect,
        baseline_range=tuple(args.baseline),
        studies_range=tuple(args.studies),
        arm_size_range=tuple(args.arm_size),
        seed=args.seed,
    )
    rows = corpus.simulate(mechanism, args.n_meta)
    io.write_study_csv(rows, args.output)
    return 0


def _cmd_repro(args: argparse.Namespace) -> int:
    cells = (
        fixtures.reproduce_table1() if args.table == "table1"
        else fixtures.reproduce_table2()
    )
    print(fixtures.format_repro_report(cells))
    return 0 if all(c.ok for c in cells) else 1


def _add_common(parser: argparse.ArgumentParser, *, correction=True, level=True) -> None:
    if correction:
        parser.add_argument("--correction", type=float, default=0.5,
                            help="zero-cell increment (default 0.5)")
    if level:
        parser.add_argument("--level", type=float, default=0.95,
                            help="compatibility-interval level (default 0.95)")
    parser.add_argument("--output", help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="effectport",
        description="Effect-measure estimation, meta-analysis, and portability screening",
    )
    parser.add_argument("--version", action="version", version=f"effectport {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("measures", help="per-study OR/RR/RD from 2x2 counts")
    p.add_argument("--input", required=True, help="study CSV")
    p.add_argument("--measure", choices=MEASURES, help="default: all three")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    _add_common(p)
    p.set_defaults(handler=_cmd_measures)

    p = commands.add_parser("glm", help="binomial GLM fit")
    p.add_argument("--input", help="aggregated CSV (pattern_id,X,Z,events,trials)")
    p.add_argument("--study-input", help="study CSV, expanded to covariate form")
    p.add_argument("--link", choices=glm.LINKS, default=glm.LOGIT)
    p.add_argument("--terms", default="X,Z,X:Z", help="comma-separated, e.g. X,Z,X:Z")
    p.add_argument("--standardize", metavar="EXPOSURE",
                   help="add population-averaged measures for this exposure")
    p.add_argument("--resamples", type=int, default=2000, help="bootstrap resamples")
    p.add_argument("--seed", type=int, default=0)
    _add_common(p, correction=False)
    p.set_defaults(handler=_cmd_glm)

    p = commands.add_parser("meta", help="two-stage random-effects meta-analysis")
    p.add_argument("--input", required=True, help="study CSV")
    p.add_argument("--meta-id", help="select one meta-analysis from a corpus file")
    p.add_argument("--measure", choices=MEASURES, default="or")
    p.add_argument("--method", choices=tuple(m.value for m in meta.PoolingMethod),
                   default="reml")
    p.add_argument("--plot", help="write a forest plot SVG here")
    _add_common(p)
    p.set_defaults(handler=_cmd_meta)

    p = commands.add_parser("bglmm", help="bivariate binomial mixed model")
    p.add_argument("--input", required=True, help="study CSV")
    p.add_argument("--meta-id", help="select one meta-analysis from a corpus file")
    p.add_argument("--quadrature", type=int, default=bglmm.DEFAULT_ORDER,
                   help="Gauss-Hermite order (default 20)")
    p.add_argument("--grid-points", type=int, default=25)
    p.add_argument("--draws", type=int, default=4000, help="band Monte Carlo draws")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plot", help="write the three-panel SVG here")
    _add_common(p)
    p.set_defaults(handler=_cmd_bglmm)

    p = commands.add_parser("corr", help="Spearman correlation with baseline risk")
    p.add_argument("--input", required=True, help="study CSV")
    p.add_argument("--meta-id", help="select one meta-analysis from a corpus file")
    p.add_argument("--measure", choices=MEASURES, help="default: all three")
    _add_common(p)
    p.set_defaults(handler=_cmd_corr)

    corpus_parser = commands.add_parser("corpus", help="corpus-scale screening")
    corpus_commands = corpus_parser.add_subparsers(dest="corpus_command", required=True)

    p = corpus_commands.add_parser("analyze", help="per-meta correlations and summaries")
    p.add_argument("--input", required=True, help="corpus study CSV")
    p.add_argument("--min-studies", type=int, default=corpus.DEFAULT_MIN_STUDIES)
    p.add_argument("--threshold", type=float, default=corpus.DEFAULT_THRESHOLD)
    p.add_argument("--split-at", type=int, default=corpus.DEFAULT_SPLIT_AT)
    p.add_argument("--records", help="write per-meta records CSV here")
    p.add_argument("--plot", help="write the scatter SVG here")
    _add_common(p)
    p.set_defaults(handler=_cmd_corpus_analyze)

    p = corpus_commands.add_parser("simulate", help="generate a synthetic corpus")
    p.add_argument("--mechanism", choices=tuple(MECHANISMS), required=True)
    p.add_argument("--effect", type=float, required=True,
                   help="the constant measure value")
    p.add_argument("--baseline", type=float, nargs=2, default=(0.1, 0.7),
                   metavar=("LO", "HI"))
    p.add_argument("--studies", type=int, nargs=2, default=(5, 25),
                   metavar=("KMIN", "KMAX"))
    p.add_argument("--arm-size", type=int, nargs=2, default=(100, 400),
                   metavar=("NMIN", "NMAX"))
    p.add_argument("--n-meta", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, help="corpus CSV path")
    p.set_defaults(handler=_cmd_corpus_simulate)

    p = commands.add_parser("repro", help="reproduce the embedded reference tables")
    p.add_argument("table", choices=("table1", "table2"))
    p.set_defaults(handler=_cmd_repro)

    return parser


def _emit_error(err: Exception) -> None:
    payload = {"error": {"type": type(err).__name__, "message": str(err)}}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except NUMERICAL_ERRORS as err:
        _emit_error(err)
        return 4
    except VALIDATION_ERRORS as err:
        _emit_error(err)
        return 3
    except EffectPortError as err:
        _emit_error(err)
        return 3
    except OSError as err:
        _emit_error(err)
        return 3


if __name__ == "__main__":
    sys.exit(main())
