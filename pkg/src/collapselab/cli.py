"""``collapselab`` command line.

Exit codes: 0 success, 2 configuration error, 3 table integrity error,
4 invariant violation (a failed experiment check or a simplex violation).
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .complexity import BdmConfig, Perturbation, TableMissError, bdm, rank_perturbations
from .dist import DistributionError, SampleSet, SupportMismatchError
from .harness import (
    ConfigError,
    ExperimentConfig,
    InvariantViolation,
    RunManifest,
    emit_plot_data,
    format_float,
    load_config,
    run_experiment,
)
from .neurosym import ProgramPool, program_score, select_program
from .tm import (
    SpaceTooLargeError,
    TableIntegrityError,
    build_frequency_table,
    load_table,
    persist_table,
    table_checksum,
)

EXIT_OK, EXIT_CONFIG, EXIT_INTEGRITY, EXIT_INVARIANT = 0, 2, 3, 4

_SUBCOMMAND_EXPERIMENTS = {
    "simulate": ("thm1-entropy", "prop1-convergence", "lemma-tv"),
    "ensemble": ("thm4-ensemble",),
    "drift": ("thm3-drift",),
    "dpi": ("dpi-demo",),
    "recover": ("support-recovery",),
    "pipeline": ("pipeline-contraction",),
}


def _experiment_config(args, allowed):
    if args.config:
        cfg = load_config(args.config)
        if cfg.experiment not in allowed:
            raise ConfigError(f"config experiment {cfg.experiment!r} is not one of {allowed}")
    else:
        cfg = ExperimentConfig(getattr(args, "experiment", None) or allowed[0])
    if args.seed is not None:
        cfg.master_seed = args.seed
    return cfg


def _run(args, allowed):
    cfg = _experiment_config(args, allowed)
    manifest = run_experiment(cfg, args.out)
    checks = manifest.summary.get("checks", {})
    for name, ok in sorted(checks.items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"wrote {manifest.output_dir}")
    if not manifest.checks_passed:
        raise InvariantViolation(f"{cfg.experiment}: failed checks")
    return EXIT_OK


def _read_input(spec):
    if spec.startswith("@"):
        text = Path(spec[1:]).read_text(encoding="utf-8")
        return [line.strip() for line in text.splitlines() if line.strip()]
    return [spec]


def cmd_ctm_build(args):
    mode = "sampled" if args.sample else "exhaustive"
    table = build_frequency_table(args.states, args.symbols, args.budget, mode=mode,
                                  k=args.sample, seed=args.seed, workers=args.workers)
    persist_table(table, args.out)
    digest = table_checksum(table)
    print(f"{args.out}: {table.total_machines} machines, {table.halted_machines} halted, "
          f"{len(table.counts)} outputs, sha256:{digest}")
    return EXIT_OK


def cmd_bdm_score(args):
    table = load_table(args.table)
    cfg = BdmConfig(args.k, args.boundary, args.miss_policy)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["object", "bdm_bits", "miss_flag"])
    for o in _read_input(args.input):
        est = bdm(o, cfg, table)
        w.writerow([o, format_float(est.value), int(est.miss_policy_applied)])
    return EXIT_OK


def cmd_aid_rank(args):
    table = load_table(args.table)
    cfg = BdmConfig(args.k, args.boundary, args.miss_policy)
    o = args.object
    if args.perturbations == "all-flips":
        taus = [Perturbation("flip", i) for i in range(len(o))]
    else:
        taus = [Perturbation.parse(s) for s in args.perturbations.split(",") if s]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["perturbation", "delta_bits", "perturbed"])
    for tau, d in rank_perturbations(o, taus, cfg, table):
        w.writerow([str(tau), format_float(d), tau.apply(o)])
    return EXIT_OK


def cmd_program_select(args):
    pool = ProgramPool.from_json(Path(args.pool).read_text(encoding="utf-8"))
    data = _read_input(args.data)
    if len(data) == 1 and "," in data[0]:
        data = data[0].split(",")
    prog = select_program(SampleSet(tuple(data), None), pool, args.lam)
    score = program_score(SampleSet(tuple(data), None), prog, args.lam)
    print(json.dumps({"name": prog.name, "complexity_bits": prog.complexity_bits,
                      "score_bits": score}))
    return EXIT_OK


def cmd_report(args):
    manifest = RunManifest.load(args.run)
    if args.series:
        print(emit_plot_data(manifest, args.series, args.out))
        return EXIT_OK
    print(f"experiment {manifest.experiment} (config {manifest.config_hash[:12]})")
    for name, ok in sorted(manifest.summary.get("checks", {}).items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print("series: " + ", ".join(sorted(manifest.series())))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="collapselab")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    for name, allowed in _SUBCOMMAND_EXPERIMENTS.items():
        sp = sub.add_parser(name, help=f"run {' / '.join(allowed)}")
        if name == "pipeline":
            sp.add_argument("action", choices=["run"])
        if len(allowed) > 1:
            sp.add_argument("--experiment", choices=allowed)
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default=None)
        sp.set_defaults(func=lambda a, allowed=allowed: _run(a, allowed))

    run = sub.add_parser("run", help="run any registered experiment from a config")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", default=None)
    run.set_defaults(func=lambda a: _run(a, tuple(_all_experiments())))

    ctm_p = sub.add_parser("ctm").add_subparsers(dest="action", required=True)
    b = ctm_p.add_parser("build")
    b.add_argument("--states", type=int, required=True)
    b.add_argument("--symbols", type=int, required=True)
    b.add_argument("--budget", type=int, default=1000)
    b.add_argument("--sample", type=int)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_ctm_build)

    def complexity_args(sp):
        sp.add_argument("--table", required=True)
        sp.add_argument("--k", type=int, default=4)
        sp.add_argument("--boundary", default="short-final-block",
                        choices=["short-final-block", "drop-remainder"])
        sp.add_argument("--miss-policy", default="max-plus-one",
                        choices=["max-plus-one", "error"])

    bdm_p = sub.add_parser("bdm").add_subparsers(dest="action", required=True)
    s = bdm_p.add_parser("score")
    complexity_args(s)
    s.add_argument("--input", required=True, help="STRING or @file with one object per line")
    s.set_defaults(func=cmd_bdm_score)

    aid_p = sub.add_parser("aid").add_subparsers(dest="action", required=True)
    r = aid_p.add_parser("rank")
    complexity_args(r)
    r.add_argument("--object", required=True)
    r.add_argument("--perturbations", default="all-flips",
                   help="'all-flips' or comma list such as flip:0,sub:2:1,del:0:2,ins:4:01")
    r.set_defaults(func=cmd_aid_rank)

    prog_p = sub.add_parser("program").add_subparsers(dest="action", required=True)
    ps = prog_p.add_parser("select")
    ps.add_argument("--pool", required=True)
    ps.add_argument("--data", required=True, help="comma list, or @file one draw per line")
    ps.add_argument("--lambda", dest="lam", type=float, default=1.0)
    ps.set_defaults(func=cmd_program_select)

    rep = sub.add_parser("report")
    rep.add_argument("run", help="run directory or manifest.json")
    rep.add_argument("--series")
    rep.add_argument("--out")
    rep.set_defaults(func=cmd_report)
    return p


def _all_experiments():
    from .harness import EXPERIMENTS
    return EXPERIMENTS


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TableIntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except (InvariantViolation, DistributionError, SupportMismatchError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, SpaceTooLargeError, TableMissError, ValueError, KeyError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
