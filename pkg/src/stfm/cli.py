"""Command-line entry point: ``stfm {synth,train,transfer,eval,ablate}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError
from .config import ABLATIONS, ConfigError, RunConfig, load
from .data import SyntheticTaskSpec, Vocabulary, read_token_lines
from .discriminator import VARIANTS

EXIT_USAGE = 2
EXIT_FAILURE = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one-line diagnostics
        raise _UsageError(f"{self.prog}: {message}")


class _UsageError(Exception):
    pass


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="key = value run configuration")
    p.add_argument("--seed", type=int, help="override the training seed")
    p.add_argument("--variant", choices=VARIANTS, help="discriminator variant")
    p.add_argument("--iters", type=int, help="override max_iters")
    for a in ABLATIONS:
        p.add_argument(f"--{a.replace('_', '-')}", dest=a, action="store_true", help=f"ablation: {a}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stfm", description="Style-token transformer for unpaired text style transfer.")
    parser.add_argument("--version", action="version", version=f"stfm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write the synthetic two-style corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--dev-size", type=int, default=200)
    p.add_argument("--test-size", type=int, default=200)
    p.add_argument("--styles", default="positive,negative", help="two comma-separated style names")

    p = sub.add_parser("train", help="train a model")
    _add_run_flags(p)
    p.add_argument("--out", help="run directory (default: out_dir from the config)")
    p.add_argument("--checkpoint", help="resume from this checkpoint")

    p = sub.add_parser("transfer", help="rewrite sentences into a target style")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="one whitespace-tokenised sentence per line")
    p.add_argument("--style", required=True, help="target style name")
    p.add_argument("--out", required=True, help="output file, aligned with the input")

    p = sub.add_parser("eval", help="score a checkpoint on the test split, or score an output file")
    p.add_argument("--config", required=True, help="run configuration naming the data")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--outputs", help="transferred sentences, aligned with --input")
    p.add_argument("--input", help="source sentences (with --outputs)")
    p.add_argument("--style", help="target style name (with --outputs)")
    p.add_argument("--split", default="test", choices=("dev", "test"))
    p.add_argument("--out", help="also write the report as JSON here")

    p = sub.add_parser("ablate", help="train and report the ablation grid")
    _add_run_flags(p)
    p.add_argument("--out", help="directory for per-row runs (default: out_dir/ablation)")
    p.add_argument("--rows", help="comma-separated subset of rows (default: all)")
    return parser


def _run_config(args) -> RunConfig:
    cfg = load(args.config)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.variant is not None:
        updates["variant"] = args.variant
    if args.iters is not None:
        updates["max_iters"] = args.iters
    for a in ABLATIONS:
        if getattr(args, a):
            updates[a] = True
    return cfg.replace(**updates) if updates else cfg


def cmd_synth(args) -> int:
    from .workflow import write_synthetic

    styles = tuple(s.strip() for s in args.styles.split(","))
    if len(styles) != 2 or not all(styles):
        raise ConfigError("--styles: expected exactly two comma-separated names")
    spec = SyntheticTaskSpec(args.seed, args.train_size, args.dev_size, args.test_size, styles)
    task = write_synthetic(spec, args.out)
    for c in task.corpora:
        print(f"{c.name}: train={len(c.train)} dev={len(c.dev)} test={len(c.test)}")
    print(f"vocab={len(task.vocab)} dir={args.out}")
    return 0


def cmd_train(args) -> int:
    from .workflow import stderr_progress, train_run

    cfg = _run_config(args)
    out = args.out or cfg.out_dir
    trainer, _ = train_run(cfg, out, resume=args.checkpoint, progress=stderr_progress)
    print(f"trained {trainer.iteration} iterations; checkpoint={Path(out) / 'checkpoint.stfm'}")
    return 0


def _encode_file(path: str, vocab: Vocabulary, max_len: int):
    return [vocab.encode(toks[: max_len - 2]) for toks in read_token_lines(path)]


def cmd_transfer(args) -> int:
    from .workflow import batched_transfer, load_for_inference

    gen, vocab, styles, _ = load_for_inference(args.checkpoint)
    if args.style not in styles:
        raise ConfigError(f"--style: unknown style {args.style!r}; checkpoint styles are {', '.join(styles)}")
    target = styles.index(args.style) + 1
    sources = _encode_file(args.input, vocab, gen.cfg.max_len)
    outputs = batched_transfer(gen, sources, [target] * len(sources))
    Path(args.out).write_text("".join(vocab.decode(s) + "\n" for s in outputs), encoding="utf-8")
    print(f"transferred {len(outputs)} sentences to {args.style!r}: {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .workflow import evaluate_generator, evaluate_outputs, load_for_inference, prepare_data

    cfg = load(args.config)
    if args.checkpoint:
        gen, vocab, styles, _ = load_for_inference(args.checkpoint)
        if list(styles) != list(cfg.styles):
            raise ConfigError(f"checkpoint styles {styles} differ from config styles {list(cfg.styles)}")
        data = prepare_data(cfg, vocab)
        report, *_ = evaluate_generator(gen, data, cfg, args.split)
    else:
        if not (args.input and args.style):
            raise ConfigError("--outputs needs --input and --style")
        data = prepare_data(cfg)
        sources = _encode_file(args.input, data.vocab, cfg.max_len)
        outputs = _encode_file(args.outputs, data.vocab, cfg.max_len)
        if len(sources) != len(outputs):
            raise ConfigError(f"--outputs has {len(outputs)} lines but --input has {len(sources)}")
        report = evaluate_outputs(data, cfg, sources, outputs, cfg.style_id(args.style))
    sys.stdout.write(report.to_text())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_ablate(args) -> int:
    from .workflow import ABLATION_ROWS, run_ablations, stderr_progress

    cfg = _run_config(args)
    rows = ABLATION_ROWS if not args.rows else tuple(r.strip() for r in args.rows.split(","))
    out = args.out or str(Path(cfg.out_dir) / "ablation")
    reports = run_ablations(cfg, out, rows, progress=stderr_progress)
    for row, rep in reports.items():
        print(f"{row}: acc={rep.accuracy:.2f} self_bleu={rep.self_bleu:.2f} ppl={rep.perplexity:.2f}")
    print(f"table: {Path(out) / 'ablation.tsv'}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "transfer": cmd_transfer, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {_one_line(exc)}", file=sys.stderr)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


if __name__ == "__main__":
    sys.exit(main())
