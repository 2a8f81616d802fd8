"""Command line entry point: ``chaosfilt <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical
failure, 3 a verification check failed.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, theory
from .errors import ConfigError, NumericalError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3

log = logging.getLogger("chaosfilt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2, which is reserved for numerical failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON or key = value config file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="base seed (monte_carlo.base_seed)")
    p.add_argument("--out", metavar="DIR", help="output directory (output.path)")
    p.add_argument("--realizations", type=int, metavar="I", help="Monte Carlo size (monte_carlo.I)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG output")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="chaosfilt", description="Filtering experiments for the Lorenz '96 model.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="truth trajectory after spin-up")
    _common(p)

    p = sub.add_parser("lyapunov", help="Lyapunov spectrum")
    _common(p)

    p = sub.add_parser("filter", help="one filtered realization with per-step diagnostics")
    _common(p)
    p.add_argument("--realization", type=int, default=0)

    p = sub.add_parser("experiment", help="Monte Carlo twin experiment")
    _common(p)

    p = sub.add_parser("verify", help="numerical checks of the accuracy theorems")
    _common(p)
    p.add_argument("--theorem", default="all", choices=sorted(theory.THEOREMS) + ["all"])

    p = sub.add_parser("sweep", help="averaged RMSE over a grid of adaptive ranks M")
    _common(p)
    p.add_argument("--M", dest="M_list", default="5,7,9,12,20,40,60",
                   help="comma-separated ranks (default %(default)s)")
    p.add_argument("--filters", default=None,
                   help="comma-separated filter kinds (default: filter.kind of the config)")
    return parser


def _parse_set(items):
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = harness._parse_scalar(value)
    return out


def load_experiment_config(args):
    data = harness.load_config(args.config) if args.config else {}
    data.update(_parse_set(args.set))
    if args.seed is not None:
        data["monte_carlo.base_seed"] = args.seed
    if args.realizations is not None:
        data["monte_carlo.I"] = args.realizations
    if args.out is not None:
        data["output.path"] = args.out
    return harness.ExperimentConfig.from_dict(data)


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _write_json(path, obj):
    harness._write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def cmd_simulate(args, cfg):
    truth = harness.make_truth(cfg)
    summary = {"J": cfg.J, "F": cfg.F, "steps": cfg.n_steps(), "h": cfg.h,
               "seed": cfg.base_seed, "config_hash": cfg.config_hash()}
    if cfg.output:
        out = Path(cfg.output)
        header = ["t"] + [f"v{j}" for j in range(cfg.J)]
        harness.write_csv(out / "truth.csv", header, [truth.t, *truth.v.T])
        _write_json(out / "summary.json", summary)
        if not args.no_figures:
            from . import plotting
            plotting.truth_figure(truth.t, truth.v, out / "truth.png")
    _emit(summary)
    return EXIT_OK


def cmd_lyapunov(args, cfg):
    from .lyapunov import lyapunov_spectrum
    res = lyapunov_spectrum(cfg.model, t_total=cfg.lyap_t_total,
                            renorm_interval=cfg.lyap_renorm_interval,
                            transient=cfg.lyap_transient, dt=cfg.dt, seed=cfg.base_seed)
    summary = res.summary({"J": cfg.J, "F": cfg.F, "dt": cfg.dt, "seed": cfg.base_seed})
    if cfg.output:
        out = Path(cfg.output)
        harness.write_csv(out / "exponents.csv", ["index", "value"],
                          [np.arange(1, res.exponents.size + 1), res.exponents])
        _write_json(out / "lyapunov.json", summary)
        if not args.no_figures:
            from . import plotting
            plotting.lyapunov_figure(res, out / "lyapunov.png")
    _emit(summary)
    return EXIT_OK


def cmd_filter(args, cfg):
    truth = harness.make_truth(cfg)
    trace = harness.run_filter(cfg, truth, args.realization)
    e = trace.error / np.sqrt(cfg.J)
    avg = harness.time_average(trace.t, e) if not trace.diverged else float("nan")
    avg = avg if np.isfinite(avg) else None
    summary = {"realization": args.realization, "avg_rmse": avg, "diverged": trace.diverged,
               "message": trace.message, "config": cfg.to_dict(),
               "config_hash": cfg.config_hash()}
    if cfg.output:
        out = Path(cfg.output)
        trace.to_csv(out / "trace.csv", cfg.J)
        _write_json(out / "summary.json", summary)
        if not args.no_figures:
            from . import plotting
            plotting.trace_figure(trace, cfg.J, out / "trace.png")
    _emit(summary)
    return EXIT_NUMERICAL if trace.diverged else EXIT_OK


def _progress(done, total):
    log.info("realization %d/%d", done, total)


def cmd_experiment(args, cfg):
    result = harness.run_twin_experiment(cfg, progress=_progress)
    if cfg.output:
        harness.export_results(result, cfg.output, figures=not args.no_figures)
    _emit(result.summary())
    return EXIT_NUMERICAL if result.diverged and len(result.diverged) == cfg.I else EXIT_OK


def _strip_arrays(report):
    return {k: v for k, v in report.items() if not isinstance(v, np.ndarray)}


def cmd_verify(args, cfg):
    names = sorted(theory.THEOREMS) if args.theorem == "all" else [args.theorem]
    reports = []
    for name in names:
        log.info("checking %s", name)
        report = theory.THEOREMS[name]()
        if cfg.output and not args.no_figures and name == "continuous-3dvar":
            from . import plotting
            plotting.envelope_figure(report, Path(cfg.output) / "continuous-3dvar.png")
        reports.append(_strip_arrays(report))
    if cfg.output:
        for rep in reports:
            _write_json(Path(cfg.output) / f"verify-{rep['name']}.json", rep)
    _emit(reports if len(reports) > 1 else reports[0])
    return EXIT_OK if all(r["pass"] for r in reports) else EXIT_VERIFY


def cmd_sweep(args, cfg):
    try:
        Ms = [int(x) for x in args.M_list.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--M expects comma-separated integers, got {args.M_list!r}") from None
    kinds = args.filters.split(",") if args.filters else [cfg.filter_kind]
    rows = []
    for kind in kinds:
        for M in Ms:
            run_cfg = cfg.replace(obs_kind="adaptive", M=M, filter_kind=kind.strip())
            log.info("sweep %s M=%d", kind, M)
            res = harness.run_twin_experiment(run_cfg)
            avg = res.average
            rows.append({"filter": run_cfg.filter_kind, "M": M,
                         "avg_rmse": avg if np.isfinite(avg) else None,
                         "divergences": len(res.diverged), "I": run_cfg.I})
    if cfg.output:
        out = Path(cfg.output)
        lines = ["filter,M,avg_rmse,divergences,I"]
        for r in rows:
            val = "inf" if r["avg_rmse"] is None else f"{r['avg_rmse']:.17g}"
            lines.append(f"{r['filter']},{r['M']},{val},{r['divergences']},{r['I']}")
        harness._write_text(out / "sweep.csv", "\n".join(lines) + "\n")
        if not args.no_figures:
            from . import plotting
            plotting.sweep_figure(rows, out / "sweep.png")
    _emit(rows)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "lyapunov": cmd_lyapunov, "filter": cmd_filter,
            "experiment": cmd_experiment, "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_experiment_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"chaosfilt: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"chaosfilt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"chaosfilt: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
