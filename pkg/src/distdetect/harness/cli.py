"""Command line entry point.

Exit status: 0 when no sensor raised H1, 2 when at least one did, 1 on
any error.
"""

import argparse
import json
import logging
import os
import sys

from ..errors import DistDetectError, InfeasibleGainError, LemmaCheckError
from ..gainsynth import save_gain
from .config import load_config
from .presets import PRESETS, get_preset
from .run import (
    build_instance,
    check_report,
    default_out_dir,
    detect_offline,
    detection_summary,
    far_calibrate,
    obtain_gain,
    run_algorithm1,
)

EXIT_OK, EXIT_ERROR, EXIT_H1 = 0, 1, 2
log = logging.getLogger("distdetect")


def _load(args):
    if getattr(args, "preset", None):
        cfg = get_preset(args.preset)
    elif getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        raise DistDetectError("pass --config FILE or --preset NAME")
    if getattr(args, "seed", None) is not None:
        cfg.run.seed = args.seed
    if getattr(args, "replications", None) is not None:
        cfg.run.replications = args.replications
    if getattr(args, "steps", None) is not None:
        cfg.run.steps = args.steps
    return cfg.validate()


def _print(obj):
    print(json.dumps(obj, indent=2, default=float))


def cmd_check(args):
    report = check_report(build_instance(_load(args)))
    _print(report)
    return EXIT_OK if report["passed"] else EXIT_ERROR


def cmd_synth_gain(args):
    cfg = _load(args)
    inst = build_instance(cfg)
    require = check_report(inst)
    if not require["passed"]:
        raise LemmaCheckError("instance fails the structural checks", require)
    gains = obtain_gain(cfg, inst)
    save_gain(gains, args.out)
    _print({"out": args.out, "achieved_rho": gains.achieved_rho, "margins": gains.margins.tolist(),
            "evaluations": gains.evaluations})
    return EXIT_OK


def _run(cfg, out_dir):
    art = run_algorithm1(cfg, out_dir=out_dir)
    _print({"out_dir": art.out_dir, "any_h1": art.any_h1,
            "achieved_rho": art.metadata["gain"]["achieved_rho"],
            "variance": art.metadata["variance"]})
    return art


def cmd_simulate(args):
    art = _run(_load(args), args.out_dir or default_out_dir())
    return EXIT_H1 if art.any_h1 else EXIT_OK


def cmd_far_calibrate(args):
    table = far_calibrate(args.lam, args.window, args.fars, windows=args.windows, seed=args.seed,
                          true_variance=args.true_variance)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(table, fh, indent=2)
    _print(table)
    return EXIT_OK


def cmd_detect(args):
    rows = detect_offline(args.residuals, args.lambdas, args.window, args.fars, args.out)
    any_h1 = any(any(fl) for *_, fl in rows)
    _print({"out": args.out, "verdicts": len(rows), "any_h1": any_h1})
    return EXIT_H1 if any_h1 else EXIT_OK


def cmd_reproduce(args):
    kw = {"seed": args.seed if args.seed is not None else 0}
    if args.replications is not None:
        kw["replications"] = args.replications
    if args.steps is not None:
        kw["steps"] = args.steps
    cfg = get_preset(args.name, **kw)
    out_dir = args.out_dir or os.path.join(default_out_dir(), args.name)
    art = run_algorithm1(cfg, out_dir=out_dir)
    base = run_algorithm1(cfg, out_dir=os.path.join(out_dir, "attack_free"), attacks=False)
    summary = detection_summary(cfg, art.replications, baseline=base.replications)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    _print(summary)
    return EXIT_H1 if art.any_h1 else EXIT_OK


def _fars(text):
    return [float(p) for p in text.split(",")]


def build_parser():
    ap = argparse.ArgumentParser(prog="distdetect", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def scenario(p):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="scenario JSON file")
        src.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--seed", type=int)
        p.add_argument("--replications", type=int)
        p.add_argument("--steps", type=int)

    p = sub.add_parser("check", help="structural and numeric observability checks")
    scenario(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("synth-gain", help="design a gain and write it to JSON")
    scenario(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_gain)

    p = sub.add_parser("simulate", help="run the full pipeline and write traces")
    scenario(p)
    p.add_argument("--out-dir", help="defaults to $DISTDETECT_OUT_DIR or ./distdetect-out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("far-calibrate", help="empirical false-alarm rates on synthetic residuals")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="variance used for normalising")
    p.add_argument("--true-variance", type=float, help="variance of the synthetic residuals")
    p.add_argument("--window", type=int, default=12)
    p.add_argument("--fars", type=_fars, default=[0.05, 0.35], help="comma separated")
    p.add_argument("--windows", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_far_calibrate)

    p = sub.add_parser("detect", help="run the detector over a residual trace")
    p.add_argument("--residuals", required=True, help="CSV with step,sensor,value")
    p.add_argument("--lambdas", required=True, help="metadata.json of a run, or comma separated values")
    p.add_argument("--window", type=int, default=12)
    p.add_argument("--fars", type=_fars, default=[0.05, 0.35])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("reproduce", help="run a built-in scenario with an attack-free baseline")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InfeasibleGainError, LemmaCheckError) as exc:
        report = getattr(exc, "report", None)
        print(f"error: {exc}", file=sys.stderr)
        if report is not None:
            print(json.dumps(report, indent=2, default=float), file=sys.stderr)
        return EXIT_ERROR
    except (DistDetectError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
