#!/usr/bin/env python3

import argparse
from pathlib import Path
import sys
import warnings

from sham_meta import classical, linear_adjust, report, simulation, study_data, util
from sham_meta.model import PRIORS, VARIANTS, WEAK_PRIOR_BELOW, ModelSpec
from sham_meta.sampler import TRANSFORMS, FitSummary, SamplerConfig, fit
from sham_meta.util import ValidationError

FORMATS = ["csv", "json", "svg"]
EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_NOT_CONVERGED = 4


def _wants(args, fmt):
    return fmt in args.format


def _output(args, name):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


def _load_dataset(args, keep_counts=False):
    """ Ingest --input; count data is log-odds transformed unless keep_counts. """
    if args.input is None:
        raise ValidationError("Please specify an input dataset with --input.")
    d = study_data.ingest(args.input, args.input_format)
    if d.kind == "count" and not keep_counts:
        d = study_data.transform_counts(d, args.log_odds)
    if args.rescale_sham_se is not None:
        if d.kind == "count":
            raise ValidationError("--rescale-sham-se needs standard errors, "
                                  "the binomial model works on the raw counts")
        d = study_data.rescale_sham_ses(d, args.rescale_sham_se)
    return d


def _model_spec(args):
    obj = util.read_json_config(args.model).copy() if args.model else {}
    if args.variant is not None:
        obj["variant"] = args.variant
    if args.prior is not None:
        obj["prior"] = args.prior
    return ModelSpec(obj)


def _sampler_config(args):
    config = SamplerConfig.from_json(args.sampler) if args.sampler else SamplerConfig()
    return config.replace(
        chains=args.chains, warmup=args.warmup, draws=args.draws,
        target_accept=args.target_accept, max_leapfrog=args.max_leapfrog, seed=args.seed)


def _parse_transforms(items):
    transforms = {}
    for item in items or []:
        if '=' not in item:
            raise ValidationError(f"transform {item!r}: expected NAME=KIND")
        name, kind = [s.strip() for s in item.split('=', 1)]
        if kind not in TRANSFORMS:
            raise ValidationError(f"transform {item!r}: choose KIND from {list(TRANSFORMS)}")
        transforms[name] = kind
    return transforms


def cmd_estimate(args):
    """ Exposed-only and difference estimates with significance bands.

    :param args: command line options
    :type args: argparse.Namespace
    :return: exit code
    :rtype: int
    """

    d = _load_dataset(args)
    sets = [classical.exposed_only(d), classical.difference(d)]
    tables = [classical.classify_significance(e, args.dist) for e in sets]
    pooled = classical.dersimonian_laird(sets[1]) if args.pooled else None

    if _wants(args, "csv"):
        for e, table in zip(sets, tables):
            suffix = e.method.replace('-', '_')
            report.write_estimates(e, _output(args, f"estimates_{suffix}.csv"))
            report.write_significance(table, _output(args, f"significance_{suffix}.csv"))
            report.write_intervals(classical.confidence_intervals(e),
                                   _output(args, f"intervals_{suffix}.csv"))
        if pooled is not None:
            report.write_rows([pooled.to_dict()], _output(args, "pooled.csv"))
    if _wants(args, "json"):
        content = {
            "schema_version": 1,
            "dist": args.dist,
            "estimates": {e.method: e.rows() for e in sets},
            "significance": {e.method: t.rows() for e, t in zip(sets, tables)},
        }
        if pooled is not None:
            content["pooled"] = pooled.to_dict()
        report.write_json(content, _output(args, "estimates.json"))
    if _wants(args, "svg"):
        report.plot_estimates(sets, _output(args, "estimates.svg"), tables)

    for e, table in zip(sets, tables):
        n_sig = sum(1 for b in table.band if b != classical.BANDS[-1])
        print(f"{e.method}: {n_sig} of {len(e)} studies with p < 0.05")
    if pooled is not None:
        print(f"pooled difference: {pooled.estimate:.4f} (se {pooled.se:.4f}, "
              f"tau2 {pooled.tau2:.4g})")
    return EXIT_OK


def cmd_fit(args):
    """ Fit a hierarchical model, write summary, draws and shrinkage plot.

    :param args: command line options
    :type args: argparse.Namespace
    :return: exit code, EXIT_NOT_CONVERGED if the fit is flagged
    :rtype: int
    """

    spec = _model_spec(args)
    d = _load_dataset(args, keep_counts=spec.variant == "binomial")
    if spec.prior is None and d.J < WEAK_PRIOR_BELOW:
        warnings.warn(f"only {d.J} studies: using weak priors on the hyperparameters")
    config = _sampler_config(args)
    transforms = _parse_transforms(args.transform)
    draws, summary = fit(spec, d, config, threads=args.threads, transforms=transforms,
                         verbose=args.verbose)

    if _wants(args, "json"):
        summary.write_json(_output(args, "fit.json"))
    if _wants(args, "csv"):
        draws.write_csv(_output(args, "draws.csv"))
        report.write_estimates(summary.estimate_set(), _output(args, "estimates_bayes.csv"))
    if _wants(args, "svg"):
        raw = classical.difference(study_data.as_summary(d, args.log_odds))
        report.plot_shrinkage(raw, summary, _output(args, "shrinkage.svg"))

    for name in summary.parameters:
        if '[' not in name:
            entry = summary.parameters[name]
            print(f"{name}: {entry['mean']:.4f} (sd {entry['sd']:.4f}, R-hat {entry['rhat']:.3f})")
    if not summary.converged:
        print(f"Fit not converged: {'; '.join(summary.reasons)}")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_adjust(args):
    """ Closed-form sham adjustment for given or fitted bias parameters.

    :param args: command line options
    :type args: argparse.Namespace
    :return: exit code
    :rtype: int
    """

    d = _load_dataset(args)
    if args.from_fit:
        summary = FitSummary.from_json(args.from_fit)
        mu_b, sigma_b = summary.mean("mu_b"), summary.mean("sigma_b")
    else:
        if args.mu_b is None or args.sigma_b is None:
            raise ValidationError("adjust needs --mu-b and --sigma-b, or --from-fit")
        mu_b, sigma_b = args.mu_b, args.sigma_b
    result = linear_adjust.linear_adjust(d, mu_b, sigma_b)

    if _wants(args, "csv"):
        report.write_adjustment(result, _output(args, "adjustment.csv"))
        report.write_estimates(result.to_estimate_set(),
                               _output(args, "estimates_linear_adjust.csv"))
    if _wants(args, "json"):
        report.write_json({"schema_version": 1, "mu_b": mu_b, "sigma_b": sigma_b,
                           "studies": result.rows()}, _output(args, "adjustment.json"))
    if _wants(args, "svg"):
        report.plot_estimates([classical.exposed_only(d), result.to_estimate_set(),
                               classical.difference(d)], _output(args, "adjustment.svg"))
    print(f"Adjusted {len(result.ids)} studies with mu_b = {mu_b:.4g}, sigma_b = {sigma_b:.4g}")
    return EXIT_OK


def _sim_config(args):
    obj = util.read_json_config(args.sim).copy() if args.sim else {}
    overrides = {
        "sigma_b_grid": args.sigma_b_grid,
        "replicates": args.replicates,
        "sigma_y": args.sigma_y,
        "mu_b": args.mu_b,
        "theta_source": args.theta_source,
        "theta_draws": args.theta_draws,
        "dataset": args.input,
        "noise": args.noise,
        "estimators": args.estimators,
        "protocol": args.protocol,
        "prior": args.prior,
        "seed": args.seed,
    }
    obj.update({k: v for k, v in overrides.items() if v is not None})
    if args.model:
        obj["model"] = util.read_json_config(args.model)
    if args.variant is not None:
        obj["model"] = dict(obj.get("model", {}), variant=args.variant)
    sampler = dict(obj.get("sampler", simulation.DEFAULT_BAYES_SAMPLER))
    if args.sampler:
        sampler = util.read_json_config(args.sampler)
    for name in ["chains", "warmup", "draws", "target_accept", "max_leapfrog"]:
        if vars(args)[name] is not None:
            sampler[name] = vars(args)[name]
    obj["sampler"] = sampler
    return simulation.SimConfig(obj)


def cmd_simulate(args):
    """ Metrics grid (and figure) per study count.

    :param args: command line options
    :type args: argparse.Namespace
    :return: exit code
    :rtype: int
    """

    cfg = _sim_config(args)
    sizes = args.sizes or [cfg.size]
    for size in sizes:
        sized = cfg if size == cfg.size else cfg.replace(size=size)
        grid = simulation.run_grid(sized, threads=args.threads, verbose=args.verbose)
        name = "metrics" if size is None else f"metrics_M{size}"
        if _wants(args, "csv"):
            grid.write_csv(_output(args, f"{name}.csv"))
        if _wants(args, "json"):
            report.write_json({"schema_version": 1, "size": grid.size, "config": sized.to_dict(),
                               "rows": grid.rows()}, _output(args, f"{name}.json"))
        if _wants(args, "svg"):
            report.plot_metrics(grid, _output(args, f"{name}.svg"))
        print(f"Simulated {len(sized.sigma_b_grid)} x {sized.replicates} replicates "
              f"with M = {grid.size}")
    return EXIT_OK


def cmd_diagnose(args):
    """ Check the sham measurements against their standard errors.

    :param args: command line options
    :type args: argparse.Namespace
    :return: exit code
    :rtype: int
    """

    d = _load_dataset(args)
    stat, df, cdf = study_data.sham_chi_square(d)
    mean, se, z, p = study_data.sham_mean_test(d)
    r, p_r = study_data.sham_exposed_correlation(d)
    result = {
        "schema_version": 1,
        "chi_square": {"stat": stat, "df": df, "cdf": cdf},
        "sham_mean": {"mean": mean, "se": se, "z": z, "p": p},
        "correlation": {"r": r, "p": p_r},
    }
    if _wants(args, "json"):
        report.write_json(result, _output(args, "diagnose.json"))
    if _wants(args, "csv"):
        report.write_rows([{"stat": stat, "df": df, "cdf": cdf, "sham_mean": mean,
                            "sham_mean_se": se, "sham_mean_p": p, "r": r, "r_p": p_r}],
                          _output(args, "diagnose.csv"))
        scatter = [{"id": rec.id, "y0": rec.y0, "s0": rec.s0, "y1": rec.y1, "s1": rec.s1}
                   for rec in d.records]
        report.write_rows(scatter, _output(args, "sham_scatter.csv"),
                          ["id", "y0", "s0", "y1", "s1"])
    if _wants(args, "svg"):
        report.plot_sham_scatter(d, _output(args, "sham_scatter.svg"))

    print(f"Sham chi-square: {stat:.3f} on {df} degrees of freedom (CDF {cdf:.3f})")
    if cdf < 0.05:
        print("Sham estimates vary less than their standard errors suggest.")
    elif cdf > 0.95:
        print("Sham estimates vary more than their standard errors suggest.")
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "fit": cmd_fit,
    "adjust": cmd_adjust,
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
}


def _int_list(value):
    if isinstance(value, list):
        return [util.to_int(v) for v in value]
    return [util.to_int(v) for v in str(value).split(',') if v.strip()]


def _float_list(value):
    if isinstance(value, list):
        return [util.to_float(v) for v in value]
    return [util.to_float(v) for v in str(value).split(',') if v.strip()]


def _str_list(value):
    if isinstance(value, list):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(',') if v.strip()]


def build_parser():
    parser = argparse.ArgumentParser(
        description='ShamMeta - hierarchical analysis of repeated sham-controlled experiments. '
                    'Estimate, fit, adjust, simulate or diagnose.')
    parser.add_argument('command', nargs='?', choices=COMMANDS,
                        help='analysis to run: {}'.format(', '.join(COMMANDS)))

    # global options
    parser.add_argument('--input', '-i', help='dataset file (summary CSV, count CSV or JSON)')
    parser.add_argument('--input-format', choices=study_data.FORMATS, default=None,
                        help='dataset format, guessed from the file if not given')
    parser.add_argument('--seed', type=int, default=None,
                        help=f'random seed (default: {util.DEFAULT_SEED})')
    parser.add_argument('--threads', '-j', type=int, default=1,
                        help='number of worker processes')
    parser.add_argument('--out-dir', '-o', default='.', help='directory for output files')
    parser.add_argument('--format', nargs='+', choices=FORMATS, default=list(FORMATS),
                        help='output formats to write')
    parser.add_argument('--verbose', '-v', action='count', default=0,
                        help='set verbosity level. Use this multiple times for more output. '
                             '1: progress bars, 2: echo options')
    parser.add_argument('--config', help='use config file to set arguments')

    # data options
    parser.add_argument('--rescale-sham-se', type=util.to_float, default=None,
                        help='multiply every sham standard error by this factor')
    parser.add_argument('--log-odds', choices=study_data.LOG_ODDS_CONVENTIONS, default='total',
                        help='log odds convention for count data')

    # estimate options
    parser.add_argument('--dist', choices=['normal', 't'], default='normal',
                        help='reference distribution for significance')
    parser.add_argument('--pooled', action='store_true',
                        help='add random-effects pooled difference estimate')

    # model and sampler options
    parser.add_argument('--model', help='model spec JSON file')
    parser.add_argument('--variant', choices=VARIANTS, default=None, help='model variant')
    parser.add_argument('--prior', choices=PRIORS, default=None,
                        help='prior on hyperparameters (default: weak below 15 studies)')
    parser.add_argument('--sampler', help='sampler config JSON file')
    parser.add_argument('--chains', type=int, default=None)
    parser.add_argument('--warmup', type=int, default=None)
    parser.add_argument('--draws', type=int, default=None)
    parser.add_argument('--target-accept', type=float, default=None)
    parser.add_argument('--max-leapfrog', type=int, default=None)
    parser.add_argument('--transform', action='append', default=None, metavar='NAME=KIND',
                        help='add transformed summary of a parameter, KIND one of {}'.format(
                            ', '.join(TRANSFORMS)))

    # adjust options
    parser.add_argument('--mu-b', type=util.to_float, default=None, help='population bias mean')
    parser.add_argument('--sigma-b', type=util.to_float, default=None,
                        help='population bias sd (inf allowed)')
    parser.add_argument('--from-fit', help='take mu_b and sigma_b from a fit summary JSON')

    # simulate options
    parser.add_argument('--sim', help='simulation config JSON file')
    parser.add_argument('--sigma-b-grid', type=_float_list, default=None,
                        help='comma separated sigma_b values')
    parser.add_argument('--replicates', type=int, default=None)
    parser.add_argument('--sigma-y', type=util.to_float, default=None,
                        help='measurement sd of simulated estimates')
    parser.add_argument('--sizes', type=_int_list, default=None,
                        help='comma separated study counts, one grid each')
    parser.add_argument('--theta-source', choices=simulation.THETA_SOURCES, default=None)
    parser.add_argument('--theta-draws', help='draws CSV holding theta[j] columns')
    parser.add_argument('--noise', choices=simulation.NOISES, default=None)
    parser.add_argument('--estimators', type=_str_list, default=None,
                        help='comma separated estimators: {}'.format(
                            ', '.join(simulation.ESTIMATORS)))
    parser.add_argument('--protocol', choices=simulation.PROTOCOLS, default=None,
                        help='prior choice per study count if --prior is not given')
    return parser


def main(argv=None):
    """ Run one command and map the outcome to an exit code.

    :param argv: command line (default: sys.argv)
    :type argv: list
    :return: 0 success, 2 invalid input, 3 runtime failure, 4 non-converged fit
    :rtype: int
    """

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        set_verbose = args.verbose > 1
        util.set_options_from_config(args, check=parser, verbose=set_verbose)
        if args.command is None:
            raise ValidationError(f"Please choose a command: {', '.join(COMMANDS)}")
        if args.threads < 1:
            raise ValidationError("threads: must be positive")
        if isinstance(args.format, str):
            args.format = [args.format]
        return COMMANDS[args.command](args)
    except ValidationError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
