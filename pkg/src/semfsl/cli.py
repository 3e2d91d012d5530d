"""Command line entry point.

Exit codes: 0 success, 1 usage/validation/configuration error, 2 I/O or
file-format error.
"""

from __future__ import annotations

import argparse
import logging
import sys


from .databank import SynthSpec, load_bank, save_bank, split_view, synth_generate
from .episodes import NoiseConfig
from .errors import FormatError, SemFSLError, UsageError
from .evaluation import attention_report, evaluate, report_lines, write_report
from .gradsuite import gradient_suite, summarize
from .model import VARIANTS, HeadConfig, HeadParams, load_checkpoint
from .semstore import build_table, coverage_check, load_word_vectors, write_word_vectors
from .trainer import TrainConfig, train

log = logging.getLogger("semfsl")

CI_NOTE = "ci95 = 1.96 * population std of per-task accuracies / sqrt(n_tasks)"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _add_episode_args(p, shots=1, noise=False):
    p.add_argument("--ways", type=int, default=5)
    p.add_argument("--shots", type=int, default=shots)
    p.add_argument("--queries", type=int, default=15)
    if noise:
        p.set_defaults(noise=True)
    else:
        p.add_argument("--noise", action="store_true", help="inject support label noise")
    p.add_argument("--min-clean", type=int, default=3)
    p.add_argument("--noise-prob", type=float, default=0.5)


def _add_data_args(p, bank_required=True):
    p.add_argument("--bank", required=bank_required, help="feature bank file")
    p.add_argument("--embeddings", help="word-vector text file")
    p.add_argument("--unit-norm", action="store_true", help="L2-normalize class embeddings")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semfsl", description="Semantics-driven attentive few-shot learning on precomputed features.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    bank = sub.add_parser("bank", help="feature bank utilities")
    bank_sub = bank.add_subparsers(dest="bank_command", parser_class=_Parser)
    bank_sub.required = True
    synth = bank_sub.add_parser("synth", help="generate a synthetic bank and class embeddings")
    synth.add_argument("--out", required=True)
    synth.add_argument("--embeddings-out", help="defaults to <out>.vec")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--classes", type=int, default=30)
    synth.add_argument("--samples", type=int, default=100)
    synth.add_argument("--dv", type=int, default=32)
    synth.add_argument("--de", type=int, default=32)
    synth.add_argument("--mean-scale", type=float, default=0.25)
    synth.add_argument("--within-std", type=float, default=0.25)
    synth.add_argument("--semantic-noise", type=float, default=0.05)
    synth.add_argument("--outlier-fraction", type=float, default=0.0)
    synth.add_argument("--outlier-std", type=float, default=0.0)
    synth.add_argument("--split-counts", help="train,val,test class counts (default 60/20/20)")
    synth.add_argument("--report")

    tr = sub.add_parser("train", help="episodic meta-training")
    _add_data_args(tr)
    tr.add_argument("--variant", choices=VARIANTS, default="combined")
    _add_episode_args(tr)
    tr.add_argument("--alpha", type=float, default=0.5)
    tr.add_argument("--dist-scale", type=float, default=32.0)
    tr.add_argument("--epochs", type=int, default=200)
    tr.add_argument("--episodes-per-epoch", type=int, default=100)
    tr.add_argument("--val-episodes", type=int, default=600)
    tr.add_argument("--lr", type=float, default=0.02)
    tr.add_argument("--momentum", type=float, default=0.9)
    tr.add_argument("--weight-decay", type=float, default=0.0005)
    tr.add_argument("--lr-period", type=int, default=40, help="halve lr every N epochs")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--out", required=True, help="checkpoint path")
    tr.add_argument("--config", help="key=value file; its values override flags")
    tr.add_argument("--log", help="write the per-epoch log here")
    tr.add_argument("--report")

    for name, noise, shots, help_text in (
        ("eval", False, 1, "accuracy and 95%% CI over sampled tasks"),
        ("noisy-eval", True, 5, "evaluation with support label noise"),
    ):
        ev = sub.add_parser(name, help=help_text)
        _add_data_args(ev)
        ev.add_argument("--checkpoint")
        ev.add_argument("--variant", choices=VARIANTS, help="defaults to the checkpoint's variant")
        ev.add_argument("--dist-scale", type=float, default=32.0, help="used only without a checkpoint")
        ev.add_argument("--split", choices=("train", "val", "test"), default="test")
        _add_episode_args(ev, shots=shots, noise=noise)
        ev.add_argument("--tasks", type=int, default=10000)
        ev.add_argument("--seed", type=int, default=0)
        ev.add_argument("--report")

    at = sub.add_parser("attention-report", help="sample attention weights of clean vs noisy support")
    _add_data_args(at)
    at.add_argument("--checkpoint", required=True)
    at.add_argument("--split", choices=("train", "val", "test"), default="test")
    _add_episode_args(at, shots=5, noise=True)
    at.add_argument("--clean", action="store_true", help="disable noise injection")
    at.add_argument("--tasks", type=int, default=100)
    at.add_argument("--seed", type=int, default=0)
    at.add_argument("--bin-width", type=float, default=0.05)
    at.add_argument("--records", help="write per-slot records as CSV")
    at.add_argument("--report")

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--instances", type=int, default=10)
    gc.add_argument("--eps", type=float, default=1e-5)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--report")
    return parser


def _apply_config(parser: argparse.ArgumentParser, args, path: str):
    """Override parsed options with ``key=value`` lines from ``path``."""
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            dest = key.strip().lstrip("-").replace("-", "_")
            if not sep or dest not in actions or dest == "config":
                raise UsageError(f"{path}:{lineno}: unknown config entry {key.strip()!r}")
            action = actions[dest]
            raw = raw.strip()
            if isinstance(action, argparse._StoreTrueAction):
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    value = action.type(raw) if action.type else raw
                except ValueError as exc:
                    raise UsageError(f"{path}:{lineno}: bad value for {dest}: {exc}") from None
                if action.choices is not None and value not in action.choices:
                    raise UsageError(f"{path}:{lineno}: {dest} must be one of {list(action.choices)}")
            setattr(args, dest, value)


def _noise(args) -> NoiseConfig:
    return NoiseConfig(bool(args.noise), args.min_clean, args.noise_prob)


def _load_data(args):
    bank = load_bank(args.bank)
    table = None
    if args.embeddings:
        first = None
        with open(args.embeddings, encoding="utf-8") as fh:
            for line in fh:
                if line.split():
                    first = line.split()
                    break
        d_e = len(first) - 1 if first else 1
        tokens = load_word_vectors(args.embeddings, d_e)
        missing = coverage_check(tokens, bank)
        if missing:
            raise UsageError(f"no embedding for {len(missing)} classes, e.g. {missing[:5]}")
        table = build_table(tokens, bank.names, d_e, unit_norm=args.unit_norm)
    return bank, table


def _emit(items: dict, report: str | None, header: str | None = None):
    for line in report_lines(items):
        print(line)
    if report:
        write_report(report, items, header)


def cmd_bank_synth(args):
    counts = None
    if args.split_counts:
        counts = tuple(int(x) for x in args.split_counts.split(","))
        if len(counts) != 3:
            raise UsageError("--split-counts needs three comma-separated integers")
    spec = SynthSpec(
        n_classes=args.classes, samples_per_class=args.samples, d_v=args.dv, d_e=args.de,
        class_mean_scale=args.mean_scale, within_class_std=args.within_std,
        semantic_noise_std=args.semantic_noise, outlier_fraction=args.outlier_fraction,
        outlier_std=args.outlier_std, seed=args.seed, split_counts=counts,
    )
    bank, table = synth_generate(spec)
    save_bank(bank, args.out)
    emb_path = args.embeddings_out or f"{args.out}.vec"
    write_word_vectors(emb_path, table)
    splits = [c.split for c in bank.classes]
    _emit(
        {
            "bank.path": args.out,
            "bank.embeddings": emb_path,
            "bank.classes": len(bank),
            "bank.train_classes": splits.count("train"),
            "bank.val_classes": splits.count("val"),
            "bank.test_classes": splits.count("test"),
        },
        args.report,
    )


def cmd_train(args):
    if args.config:
        _apply_config(build_parser(), args, args.config)
    bank, table = _load_data(args)
    if table is None and args.variant != "pn":
        raise UsageError(f"variant {args.variant!r} needs --embeddings")
    cfg = TrainConfig(
        epochs=args.epochs, episodes_per_epoch=args.episodes_per_epoch, val_episodes=args.val_episodes,
        lr=args.lr, momentum=args.momentum, weight_decay=args.weight_decay,
        lr_halving_period_epochs=args.lr_period, ways=args.ways, shots=args.shots, queries=args.queries,
        variant=args.variant, noise=_noise(args), seed=args.seed, alpha=args.alpha,
        dist_scale=args.dist_scale, checkpoint_path=args.out,
    )
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        def on_epoch(record):
            print(record.line(), flush=True)
            if log_fh:
                log_fh.write(record.line() + "\n")

        params, tlog = train(bank, table, cfg, callback=on_epoch)
    finally:
        if log_fh:
            log_fh.close()
    if tlog.best_checkpoint is None:
        from .model import save_checkpoint

        save_checkpoint(args.out, params, args.variant)
    items = {"train.epochs": len(tlog.epochs), "train.checkpoint": args.out}
    if tlog.best_epoch is not None:
        items["train.best_epoch"] = tlog.best_epoch
        items["train.best_val_acc"] = tlog.best_val_accuracy
    _emit(items, args.report)


def _params_for_eval(args, bank, table):
    if args.checkpoint:
        params, variant = load_checkpoint(args.checkpoint)
        variant = getattr(args, "variant", None) or variant
        if params.config.d_v != bank.d_v:
            raise UsageError(f"checkpoint expects d_v={params.config.d_v}, bank has {bank.d_v}")
    else:
        variant = getattr(args, "variant", None) or "pn"
        if variant != "pn":
            raise UsageError(f"variant {variant!r} needs --checkpoint")
        params = HeadParams.init(HeadConfig(bank.d_v, table.d_e if table else 1, alpha=1.0, dist_scale=args.dist_scale))
    if variant != "pn" and table is None:
        raise UsageError(f"variant {variant!r} needs --embeddings")
    return params, variant


def cmd_eval(args):
    bank, table = _load_data(args)
    params, variant = _params_for_eval(args, bank, table)
    view = split_view(bank, args.split)
    res = evaluate(view, table, params, variant, args.ways, args.shots, args.queries, args.tasks, _noise(args), args.seed)
    items = {"eval.variant": variant, "eval.split": args.split, "eval.noise": bool(args.noise), **res.report_items()}
    items["eval.ci_estimator"] = "population"
    _emit(items, args.report, CI_NOTE)


def cmd_attention(args):
    bank, table = _load_data(args)
    params, variant = _params_for_eval(args, bank, table)
    view = split_view(bank, args.split)
    noise = NoiseConfig(not args.clean, args.min_clean, args.noise_prob)
    rep = attention_report(
        view, table, params, args.ways, args.shots, args.queries, args.tasks, noise, args.seed,
        variant=variant, bin_width=args.bin_width,
    )
    if args.records:
        with open(args.records, "w", encoding="utf-8") as fh:
            fh.write("task,class,slot,weight,noisy\n")
            for r in rep.records:
                fh.write(f"{r.task},{r.class_index},{r.slot},{r.weight!r},{int(r.is_noisy)}\n")
    _emit({"attn.variant": variant, "attn.tasks": args.tasks, **rep.report_items()}, args.report)


def cmd_gradcheck(args):
    results = gradient_suite(seed=args.seed, instances=args.instances, eps=args.eps, tol=args.tol)
    for r in results:
        if not r.passed:
            print(f"FAIL instance={r.instance} {r.target}: {r.detail}", file=sys.stderr)
    summary = summarize(results)
    _emit(summary, args.report)
    if not summary["gradcheck.passed"]:
        raise SemFSLError("finite-difference check failed")


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "noisy-eval": cmd_eval,
    "attention-report": cmd_attention,
    "gradcheck": cmd_gradcheck,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        if args.command == "bank":
            cmd_bank_synth(args)
        else:
            COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if "usage:" not in str(exc):
            print(parser.format_usage(), file=sys.stderr, end="")
        return 1
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SemFSLError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
