"""Command line entry point: gen-data, train, infer, eval, gradcheck."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import GroundingConfig, load_config, save_config
from .data import make_synthetic_corpus, read_corpus, write_corpus
from .errors import GroundingError
from .inference import predict, read_predictions, write_predictions
from .metrics import evaluate, format_report, random_interval_predictions, write_report
from .model import PPSModel


def _config(path: str | None) -> GroundingConfig:
    return load_config(path) if path else GroundingConfig()


def _figure_dir(path: str | None) -> Path | None:
    if path is None:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    config = _config(args.config)
    samples = make_synthetic_corpus(config, args.size, split=args.split, noise=args.noise,
                                    interleave=args.interleave)
    write_corpus(args.out, samples, config.vocab_size)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .training import train

    config = _config(args.config)
    _, corpus = read_corpus(args.corpus)
    result = train(config, corpus)
    result.model.save(args.checkpoint)
    Path(args.trace).write_text(result.trace_lines())
    if args.save_config:
        save_config(config, args.save_config)
    figs = _figure_dir(args.figure_dir)
    if figs is not None and result.trace:
        from .plotting import plot_trace
        plot_trace(result.trace, figs / "loss_trace.png")
    print(f"trained {len(result.trace)} epochs; checkpoint {args.checkpoint}; trace {args.trace}")
    return 0


def cmd_infer(args) -> int:
    model = PPSModel.load(args.checkpoint)
    _, corpus = read_corpus(args.corpus)
    write_predictions(args.out, predict(model, corpus))
    print(f"wrote {len(corpus)} predictions to {args.out}")
    return 0


def cmd_eval(args) -> int:
    config = PPSModel.load(args.checkpoint).config if args.checkpoint else _config(args.config)
    _, corpus = read_corpus(args.corpus)
    table = evaluate(read_predictions(args.predictions), corpus)
    text = format_report(table, seed=config.seed, config_hash=config.config_hash(), samples=len(corpus))
    if args.out:
        write_report(args.out, text)
    sys.stdout.write(text)
    figs = _figure_dir(args.figure_dir)
    if figs is not None:
        from .plotting import plot_metrics
        baseline = evaluate(random_interval_predictions([s.sample_id for s in corpus], config.K, config.seed),
                            corpus)
        plot_metrics(table, figs / "metrics.png", baseline)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(args.trials, args.seed)
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pps", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic corpus file")
    p.add_argument("--config", help="flat JSON config (desk defaults if omitted)")
    p.add_argument("--size", type=int, default=500)
    p.add_argument("--split", default="train")
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--interleave", action="store_true", help="shuffle event frames within the planted span")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a model; write checkpoint and JSON-lines loss trace")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--save-config", help="also write the resolved config here")
    p.add_argument("--figure-dir", help="render loss_trace.png here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="write ranked proposals, one JSON record per line")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions; print the metrics report")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--checkpoint", help="take seed and config hash from this checkpoint")
    group.add_argument("--config")
    p.add_argument("--out", help="also write the report here")
    p.add_argument("--figure-dir", help="render metrics.png (model beside random baseline) here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite; exit 1 on failure")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (GroundingError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
