"""Command-line interface.

One executable with subcommands for theory construction, training,
evaluation, projection, constraint-selection inspection, the reduction
sweep, the verification suites, and the kernel benchmark.  Exit codes:
0 success, 1 usage or validation error, 2 internal error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import checks
from .errors import NgpkitError, ValidationError
from .harness import (SweepConfig, TrainConfig, build_train_config, evaluate,
                      generate_dataset, load_model, load_samples,
                      parse_config_file, predicate_recalls, rank_predictions,
                      run_reduction_sweep, save_dataset, save_model, train)
from .logic import load_vocabulary
from .losses import LossKind
from .ngp import (SelectionConfig, exhaustive_select, greedy_select,
                  itr_project, random_select)
from .theory import (DEFAULT_KAPPA, build_complement_of_facts,
                     build_from_kg_complement, load_theory, read_kg_triples,
                     save_theory, theory_file_stats)


def _resolve_seed(value):
    if value is not None:
        return value
    env = os.environ.get("NGPKIT_SEED")
    return int(env) if env else 0


def _check_out(path, force):
    if path and os.path.exists(path) and not force:
        raise ValidationError(
            f"{path} exists; pass --force to overwrite")


def _format_value(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows, columns):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_format_value(row[c]) for c in columns) + "\n")


# --- subcommands --------------------------------------------------------------

def _cmd_theory(args):
    if args.theory_cmd == "build":
        _check_out(args.out, args.force)
        vocab = load_vocabulary(args.vocab)
        if args.mode == "fact-complement":
            triples = read_kg_triples(args.infile)
            facts = [vocab.fact(*t) for t in triples]
            store = build_complement_of_facts(vocab, facts)
        else:
            triples = read_kg_triples(args.infile)
            store = build_from_kg_complement(triples, vocab, args.kappa)
            rep = store.build_report
            print(f"restricted {rep.input_triples} triples -> "
                  f"{rep.kept_triples} kept, {rep.dropped_triples} dropped")
        save_theory(store, args.out)
        print(f"wrote {store.representation} theory with "
              f"{store.ic_count()} ICs to {args.out}")
        return 0
    # stats
    vocab = load_vocabulary(args.vocab) if args.vocab else None
    stats = theory_file_stats(args.file, vocab)
    print(f"representation: {stats.representation}")
    print(f"ic_count: {stats.ic_count}")
    for name in sorted(stats.per_predicate):
        print(f"per-predicate {name}: {stats.per_predicate[name]}")
    return 0


def _load_train_config(args) -> TrainConfig:
    mapping = parse_config_file(args.config) if args.config else {}
    config = build_train_config(mapping)
    if getattr(args, "regularizer", None):
        config = replace(config, regularizer=args.regularizer)
    if getattr(args, "rho", None):
        config = replace(config,
                         selection=replace(config.selection, rho=args.rho))
    if getattr(args, "lr", None):
        config = replace(config, lr=args.lr)
    if getattr(args, "epochs", None):
        config = replace(config, epochs=args.epochs)
    seed = args.seed
    if seed is None and os.environ.get("NGPKIT_SEED"):
        seed = int(os.environ["NGPKIT_SEED"])
    if seed is not None:
        config = replace(config, seed=seed,
                         world=replace(config.world, seed=seed))
    return config


def _cmd_train(args):
    config = _load_train_config(args)
    _check_out(args.out_log, args.force)
    _check_out(args.out_model, args.force)
    _check_out(args.out_data, args.force)
    result = train(config)
    columns = list(result.rows[0].keys())
    if args.out_log:
        write_csv(args.out_log, result.rows, columns)
        print(f"wrote training log to {args.out_log}")
    if args.out_model:
        save_model(result.model, args.out_model)
        print(f"wrote model to {args.out_model}")
    if args.out_data:
        save_dataset(result.dataset, args.out_data)
        print(f"wrote dataset to {args.out_data}")
    last = result.rows[-1]
    summary = " ".join(f"{k}={_format_value(v)}" for k, v in last.items())
    print(f"final: {summary}")
    return 0


def _cmd_eval(args):
    config = _load_train_config(args)
    model = load_model(args.model)
    dataset = generate_dataset(config.world)
    ks = tuple(int(k) for k in args.ks.split(","))
    metrics = evaluate(model, dataset, args.split, ks)
    rows = [{"metric": k, "value": v} for k, v in sorted(metrics.items())]
    for row in rows:
        print(f"{row['metric']}: {_format_value(row['value'])}")
    if args.out:
        _check_out(args.out, args.force)
        write_csv(args.out, rows, ["metric", "value"])
    if args.out_per_predicate:
        _check_out(args.out_per_predicate, args.force)
        samples = dataset.split(args.split)
        predictions = rank_predictions(model, samples, max(ks))
        truths = [list(s.fact_set()) for s in samples]
        pred_rows = []
        for k in ks:
            recalls = predicate_recalls(predictions, truths, k)
            for p in sorted(recalls):
                pred_rows.append({"predicate": dataset.vocab.name_of("p", p),
                                  "k": k, "recall": recalls[p]})
        write_csv(args.out_per_predicate, pred_rows,
                  ["predicate", "k", "recall"])
    return 0


def _cmd_project(args):
    model = load_model(args.weights)
    store = load_theory(args.theory, model.vocab)
    samples = load_samples(args.input, model.vocab)
    lines = []
    for sample in samples:
        w = model.forward(sample.features)
        fact = itr_project(w, store, slot=None)
        if fact is None:
            lines.append(f"{sample.sample_id}\t-")
        else:
            vocab = model.vocab
            lines.append(f"{sample.sample_id}\t{vocab.name_of('s', fact.s)}"
                         f"\t{vocab.name_of('p', fact.p)}"
                         f"\t{vocab.name_of('o', fact.o)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        _check_out(args.out, args.force)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_select(args):
    model = load_model(args.weights)
    store = load_theory(args.theory, model.vocab)
    samples = load_samples(args.input, model.vocab)
    kind = LossKind.SL if args.loss == "sl" else LossKind.DL2
    cfg = SelectionConfig(rho=args.rho, loss_kind=kind,
                          strategy=args.strategy)
    rng = np.random.default_rng(_resolve_seed(args.seed))
    vocab = model.vocab
    for sample in samples:
        w = model.forward(sample.features)
        if args.strategy == "greedy":
            ics = greedy_select(w, store, cfg, slot=None)
        elif args.strategy == "random":
            ics = random_select(store, args.rho, rng)
        else:
            ics = exhaustive_select(w, 0, list(store.iter_ics()), args.rho,
                                    kind)
        for rank, ic in enumerate(ics, start=1):
            f = ic.fact
            print(f"{sample.sample_id}\t{rank}\t{vocab.name_of('s', f.s)}"
                  f"\t{vocab.name_of('p', f.p)}\t{vocab.name_of('o', f.o)}")
    return 0


def _cmd_sweep(args):
    config = _load_train_config(args)
    retentions = tuple(float(x) for x in args.retentions.split(","))
    seeds = tuple(int(x) for x in args.seeds.split(","))
    regs = tuple(args.regularizers.split(","))
    ks = tuple(int(x) for x in args.ks.split(","))
    sweep = SweepConfig(base=config, retentions=retentions, seeds=seeds,
                        regularizers=regs, eval_ks=ks)
    _check_out(args.out, args.force)
    rows = run_reduction_sweep(sweep, jobs=args.jobs)
    columns = ["retention", "seed", "regularizer"]
    for k in ks:
        columns.extend([f"mr_at_{k}", f"zsr_at_{k}"])
    write_csv(args.out, rows, columns)
    print(f"wrote {len(rows)} sweep rows to {args.out}")
    return 0


def _cmd_check(args):
    results = checks.run_suite(args.suite, args.cases,
                               _resolve_seed(args.seed))
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        detail = " ".join(f"{k}={_format_value(v)}"
                          for k, v in sorted(r.detail.items()))
        print(f"[{status}] {r.name}: {r.cases} cases, {r.failures} failures,"
              f" {r.elapsed:.2f}s {detail}")
        failed = failed or not r.passed
    return 1 if failed else 0


def _cmd_bench(args):
    from .bench import run_bench
    report = run_bench(samples=args.samples, queries=args.queries,
                       seed=_resolve_seed(args.seed), scale=args.scale,
                       jobs=args.jobs)
    missed = False
    for line in report.lines:
        print(line)
    for name, ok in report.targets.items():
        print(f"[{'PASS' if ok else 'WARN'}] {name}")
        missed = missed or not ok
    if missed and args.strict:
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ngpkit")
    sub = parser.add_subparsers(dest="command", required=True)

    theory = sub.add_parser("theory", help="build or inspect theories")
    tsub = theory.add_subparsers(dest="theory_cmd", required=True)
    tbuild = tsub.add_parser("build")
    tbuild.add_argument("--mode", required=True,
                        choices=["kg-complement", "fact-complement"])
    tbuild.add_argument("--kappa", type=int, default=DEFAULT_KAPPA)
    tbuild.add_argument("--vocab", required=True)
    tbuild.add_argument("--in", dest="infile", required=True)
    tbuild.add_argument("--out", required=True)
    tbuild.add_argument("--force", action="store_true")
    tstats = tsub.add_parser("stats")
    tstats.add_argument("file")
    tstats.add_argument("--vocab")

    tr = sub.add_parser("train", help="train on the synthetic world")
    tr.add_argument("--config")
    tr.add_argument("--regularizer", choices=["none", "ngp-sl", "ngp-dl2"])
    tr.add_argument("--rho", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--out-log", default="train-log.csv")
    tr.add_argument("--out-model")
    tr.add_argument("--out-data")
    tr.add_argument("--force", action="store_true")

    ev = sub.add_parser("eval", help="score a trained model")
    ev.add_argument("--model", required=True)
    ev.add_argument("--config")
    ev.add_argument("--split", default="test")
    ev.add_argument("--ks", default="20,100")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--out")
    ev.add_argument("--out-per-predicate")
    ev.add_argument("--force", action="store_true")

    pr = sub.add_parser("project", help="inference-time rectification")
    pr.add_argument("--theory", required=True)
    pr.add_argument("--weights", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--out")
    pr.add_argument("--force", action="store_true")

    se = sub.add_parser("select", help="inspect constraint selection")
    se.add_argument("--theory", required=True)
    se.add_argument("--weights", required=True)
    se.add_argument("--input", required=True)
    se.add_argument("--rho", type=int, default=3)
    se.add_argument("--loss", choices=["sl", "dl2"], default="sl")
    se.add_argument("--strategy", default="greedy",
                    choices=["greedy", "random", "exhaustive"])
    se.add_argument("--seed", type=int)

    sw = sub.add_parser("sweep", help="label-reduction sweep")
    sw.add_argument("--config")
    sw.add_argument("--retentions", default="1.0,0.9,0.8,0.7,0.6,0.5")
    sw.add_argument("--seeds", default="0,1,2,3,4")
    sw.add_argument("--regularizers", default="none,ngp-sl")
    sw.add_argument("--ks", default="100")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--seed", type=int)
    sw.add_argument("--out", required=True)
    sw.add_argument("--force", action="store_true")

    ch = sub.add_parser("check", help="run the verification suites")
    ch.add_argument("--suite", default="all",
                    choices=["all", *checks.SUITE_NAMES])
    ch.add_argument("--cases", type=int)
    ch.add_argument("--seed", type=int)

    be = sub.add_parser("bench", help="kernel benchmark (both backends)")
    be.add_argument("--scale", default="vg", choices=["small", "vg"])
    be.add_argument("--samples", type=int, default=10000)
    be.add_argument("--queries", type=int, default=200000)
    be.add_argument("--jobs", type=int, default=1)
    be.add_argument("--seed", type=int)
    be.add_argument("--strict", action="store_true")
    return parser


_DISPATCH = {
    "theory": _cmd_theory,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "project": _cmd_project,
    "select": _cmd_select,
    "sweep": _cmd_sweep,
    "check": _cmd_check,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad flags; map usage problems to 1
        return 0 if exc.code == 0 else 1
    try:
        return _DISPATCH[args.command](args)
    except (NgpkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report and exit 2
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
