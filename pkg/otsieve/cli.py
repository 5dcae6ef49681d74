"""
Batch command surface: `otsieve <command> [options]`.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure. On
failure one JSON line describing the error is written to stderr.
"""
import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from otsieve import (
    cli_io,
    dgp_simulation,
    diagnostics,
    estimators,
    ot_solver,
)
from otsieve.common import configure_logging, print_table, seconds_elapsed
from otsieve.errors import NumericalError, OtsieveError, UsageError
from otsieve.settings import settings

log = logging.getLogger(__name__)

RUN_SETTINGS = (
    "seed",
    "output_dir",
    "degrees",
    "convexity",
    "parallelism",
    "n_starts",
    "max_iter",
    "tol",
    "float_format",
)
NOT_FLAGS = ("settings", "preset", "config", "command", "handler")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, usage=self.format_usage().strip())


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _float_list(text):
    try:
        return [float(v) for v in _str_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated numbers")


def _out(cfg, name):
    return os.path.join(cfg.output_dir, name)


def cmd_simulate(cfg):
    dgp = cfg.dgp_config()
    sample, _ = dgp_simulation.simulate(dgp)
    return [cli_io.write_matched_csv(sample, _out(cfg, "sample.csv"))]


def cmd_solve_ot(cfg):
    sample = cli_io.parse_matched_csv(cfg.input)
    tech = cfg.dgp_config().tech
    S = ot_solver.build_surplus_matrix(sample.X, sample.Y, tech)
    coupling = ot_solver.solve_assignment(S)
    if cfg.normalization == "anchor_first":
        norm = ot_solver.AnchorAtIndex(0)
    elif cfg.normalization == "zero_mean":
        norm = ot_solver.ZeroMean()
    else:
        raise UsageError("unknown normalization %r" % cfg.normalization)
    coupling = ot_solver.normalize_duals(coupling, norm)
    check = ot_solver.verify_coupling(S, coupling)
    log.info(
        "Total surplus %.6f, duality gap %.3g",
        coupling.total_surplus,
        check.duality_gap,
    )
    frame = ot_solver.coupling_to_frame(coupling)
    return [
        cli_io.write_frame_csv(
            frame, _out(cfg, "coupling.csv"), cfg.float_format
        )
    ]


def _estimate(cfg, sample):
    report = estimators.fit(sample, cfg.method, cfg.estimator_options())
    if cfg.standard_errors:
        report = estimators.attach_variance(report, sample)
    return report


def cmd_estimate(cfg):
    sample = cli_io.parse_matched_csv(cfg.input)
    report = _estimate(cfg, sample)
    print_table(
        "%s estimates" % report.method.upper(),
        ["parameter", "estimate", "se"],
        [
            [name, float(val), float((report.se or {}).get(name, np.nan))]
            for name, val in zip(dgp_simulation.PARAMETERS, report.estimates)
        ],
    )
    return [
        cli_io.write_report_json(report, _out(cfg, "report.json")),
        cli_io.write_gamma_csv(report, _out(cfg, "gamma.csv")),
    ]


def cmd_mc(cfg):
    dgp = cfg.dgp_config()
    mc = dgp_simulation.run_monte_carlo(
        dgp,
        cfg.estimators,
        int(cfg.reps),
        parallelism=int(cfg.parallelism),
        options=cfg.estimator_options(),
    )
    table = mc.to_frame()
    print_table(
        "Finite sample performance (%s, %d reps)" % (dgp.name, mc.reps),
        list(table.columns),
        table.values.tolist(),
    )
    if any(mc.failures.values()):
        log.warning("Failed replications: %s", mc.failures)
    return [
        cli_io.write_frame_csv(
            table, _out(cfg, "mc_table.csv"), cfg.float_format
        ),
        cli_io.write_frame_csv(
            mc.replications_frame(),
            _out(cfg, "replications.csv"),
            cfg.float_format,
        ),
    ]


def cmd_diagnose(cfg):
    sample = cli_io.parse_matched_csv(cfg.input)
    if cfg.diagnostic == "mardia":
        data = sample.X if cfg.columns == "x" else sample.Y
        frame = diagnostics.mardia_test(data).to_frame()
        return [
            cli_io.write_frame_csv(frame, _out(cfg, "mardia.csv"), "%.4f")
        ]
    if cfg.diagnostic == "summary":
        frame = diagnostics.summary_stats(sample).to_frame()
        return [
            cli_io.write_frame_csv(
                frame, _out(cfg, "summary.csv"), cfg.float_format
            )
        ]
    if cfg.diagnostic == "polarization":
        if cfg.input_t1 is None:
            raise UsageError("polarization needs --input-t1")
        later = cli_io.parse_matched_csv(cfg.input_t1)
        curve = diagnostics.polarization_curve(
            sample.w, later.w, mode=cfg.scale
        )
        return [
            cli_io.write_frame_csv(
                curve.to_frame(),
                _out(cfg, "polarization.csv"),
                cfg.float_format,
            )
        ]
    raise UsageError("unknown diagnostic %r" % cfg.diagnostic)


def cmd_sweep(cfg):
    dgp = cfg.dgp_config()
    grid = dgp_simulation.alpha_grid_from_values(cfg.alpha_values)
    frame = dgp_simulation.technology_sweep(dgp, grid)
    return [
        cli_io.write_frame_csv(
            frame, _out(cfg, "sweep.csv"), cfg.float_format
        )
    ]


def cmd_decompose(cfg):
    if cfg.input_t1 is None:
        raise UsageError("decompose needs --input-t1")
    sample_t0 = cli_io.parse_matched_csv(cfg.input)
    sample_t1 = cli_io.parse_matched_csv(cfg.input_t1)
    opts = cfg.estimator_options()
    report_t0 = estimators.fit(sample_t0, cfg.method, opts)
    report_t1 = estimators.fit(sample_t1, cfg.method, opts)
    curve = diagnostics.decompose_counterfactual(
        report_t0, report_t1, sample_t0, sample_t1, cfg.mode, cfg.scale
    )
    return [
        cli_io.write_report_json(report_t0, _out(cfg, "report_t0.json")),
        cli_io.write_report_json(report_t1, _out(cfg, "report_t1.json")),
        cli_io.write_frame_csv(
            curve.to_frame(), _out(cfg, "decompose.csv"), cfg.float_format
        ),
    ]


def _common_parser():
    common = _Parser(add_help=False)
    settings.register_argparse_options(common)
    common.add_argument("--preset", default=None)
    common.add_argument("--config", default=None)
    return common


def _add_dgp_options(parser):
    parser.add_argument("--n", type=int, default=None)
    parser.add_argument(
        "--family", choices=dgp_simulation.FAMILIES, default=None
    )
    parser.add_argument(
        "--error-family",
        dest="error_family",
        choices=dgp_simulation.ERROR_FAMILIES,
        default=None,
    )


def _add_tech_options(parser):
    for name in ("alpha_CC", "alpha_MM", "beta_C", "beta_M"):
        parser.add_argument(
            "--%s" % name.replace("_", "-").lower(),
            dest="dgp_" + name,
            type=float,
            default=None,
        )


def build_parser():
    parser = _Parser(
        prog="otsieve",
        description="Sieve estimation of multidimensional matching models",
    )
    sub = parser.add_subparsers(dest="command")
    sub.required = True
    common = _common_parser()

    p = sub.add_parser("simulate", parents=[common])
    _add_dgp_options(p)
    _add_tech_options(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("solve-ot", parents=[common])
    p.add_argument("--input", required=True)
    p.add_argument(
        "--normalization",
        choices=("zero_mean", "anchor_first"),
        default=None,
    )
    _add_tech_options(p)
    p.set_defaults(handler=cmd_solve_ot)

    p = sub.add_parser("estimate", parents=[common])
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=estimators.METHODS, default=None)
    p.add_argument(
        "--no-se",
        dest="standard_errors",
        action="store_const",
        const=False,
        default=None,
    )
    p.set_defaults(handler=cmd_estimate)

    p = sub.add_parser("mc", parents=[common])
    _add_dgp_options(p)
    _add_tech_options(p)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--estimators", type=_str_list, default=None)
    p.set_defaults(handler=cmd_mc)

    p = sub.add_parser("diagnose", parents=[common])
    p.add_argument("diagnostic", choices=("mardia", "summary", "polarization"))
    p.add_argument("--input", required=True)
    p.add_argument("--input-t1", dest="input_t1", default=None)
    p.add_argument("--columns", choices=("x", "y"), default=None)
    p.add_argument("--scale", choices=("log", "level"), default=None)
    p.set_defaults(handler=cmd_diagnose)

    p = sub.add_parser("sweep", parents=[common])
    _add_dgp_options(p)
    _add_tech_options(p)
    p.add_argument(
        "--alpha-values", dest="alpha_values", type=_float_list, default=None
    )
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("decompose", parents=[common])
    p.add_argument("--input", required=True)
    p.add_argument("--input-t1", dest="input_t1", required=True)
    p.add_argument("--method", choices=estimators.METHODS, default=None)
    p.add_argument(
        "--mode", choices=diagnostics.DECOMPOSITION_MODES, default=None
    )
    p.add_argument("--scale", choices=("log", "level"), default=None)
    p.set_defaults(handler=cmd_decompose)
    return parser


def _flags(args, run_settings):
    flags = {}
    for key, val in vars(args).items():
        if val is None or key in NOT_FLAGS or key == "log_level":
            continue
        if key in RUN_SETTINGS:
            val = getattr(run_settings, key)
        flags[key] = val
    return flags


def _run(argv):
    args = build_parser().parse_args(argv)
    run_settings = settings.copy()
    try:
        run_settings.load_from_namespace(args)
    except (OSError, ValueError) as err:
        raise UsageError("cannot read settings file: %s" % err)
    configure_logging(run_settings.log_level)
    cfg = cli_io.RunConfig.build(
        args.command,
        preset=args.preset,
        config_path=args.config,
        run_settings=run_settings,
        **_flags(args, run_settings),
    )
    start = time.time()
    outputs = args.handler(cfg)
    cli_io.write_manifest(
        cfg.output_dir,
        args.command,
        cfg.to_dict(),
        cfg.seed,
        seconds_elapsed(start),
        outputs=[os.path.basename(p) for p in outputs],
    )


def main(argv=None):
    try:
        try:
            _run(argv)
        except (np.linalg.LinAlgError, FloatingPointError) as err:
            raise NumericalError(
                "numerical failure: %s" % err, cause=type(err).__name__
            )
    except OtsieveError as err:
        sys.stderr.write(json.dumps(err.to_dict(), sort_keys=True) + "\n")
        return err.exit_code
    return 0
