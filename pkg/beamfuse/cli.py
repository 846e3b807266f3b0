"""Command-line surface: genmodel, gencorpus, decode and bench."""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from .bench import (
    bench_fused_decode,
    bench_kernels,
    bench_precision,
    bench_step_timing,
    bench_sweep_batch,
    bench_time_share,
    write_csv,
    write_report,
)
from .corpus import (
    MAX_LENGTH,
    MEAN_LENGTH,
    format_sentence,
    generate_corpus,
    read_corpus,
    read_vocab,
    write_corpus,
    write_vocab,
)
from .db import ResultStore, resolve_sqlite_path
from .errors import DataError
from .models import BeamConfig, ModelDims, PrecisionMode
from .outlayer import KERNELS
from .scheduler import STRATEGIES, BeamSearchRunner
from .seqmodel import ModelBackend, generate_model, load_model, save_model

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3

BENCHMARKS = ("steps", "batch", "kernels", "precision", "fused", "profile")


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )


def default_threads() -> int:
    raw = os.getenv("BEAMFUSE_THREADS")
    if raw:
        try:
            threads = int(raw)
        except ValueError as exc:
            raise ValueError(f"BEAMFUSE_THREADS must be an integer, got {raw!r}") from exc
        if threads < 1:
            raise ValueError(f"BEAMFUSE_THREADS must be >= 1, got {threads}")
        return threads
    return os.cpu_count() or 1


def int_list(raw: str) -> List[int]:
    try:
        values = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {raw!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--verbose",
                        action="store_true",
                        help="enable debug logging")


def _add_threads(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker threads (falls back to BEAMFUSE_THREADS, then the core count)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Batched beam-search inference engine for a GRU encoder-decoder")
    subparsers = parser.add_subparsers(dest="command", required=True)
    formatter = argparse.ArgumentDefaultsHelpFormatter

    genmodel = subparsers.add_parser("genmodel",
                                     help="write a seeded random BFM1 model",
                                     formatter_class=formatter)
    genmodel.add_argument("--vocab", type=int, default=30000,
                          help="source and target vocabulary size")
    genmodel.add_argument("--src-vocab", type=int, default=None,
                          help="source vocabulary size (overrides --vocab)")
    genmodel.add_argument("--tgt-vocab", type=int, default=None,
                          help="target vocabulary size (overrides --vocab)")
    genmodel.add_argument("--state", type=int, default=256, help="hidden state size")
    genmodel.add_argument("--embed", type=int, default=None,
                          help="embedding size (defaults to --state)")
    genmodel.add_argument("--seed", type=int, default=0, help="weight seed")
    genmodel.add_argument("-o", "--output", type=Path, required=True,
                          help="model file to write")
    genmodel.add_argument("--vocab-out", type=Path, default=None,
                          help="also write the target vocab file")
    _add_common(genmodel)
    genmodel.set_defaults(handler=cmd_genmodel)

    gencorpus = subparsers.add_parser("gencorpus",
                                      help="write a seeded token-id corpus",
                                      formatter_class=formatter)
    gencorpus.add_argument("--n", type=int, default=256, help="sentence count")
    gencorpus.add_argument("--seed", type=int, default=0, help="corpus seed")
    gencorpus.add_argument("--vocab", type=int, default=30000,
                           help="source vocabulary size")
    gencorpus.add_argument("--mean-length", type=float, default=MEAN_LENGTH,
                           help="mean sentence length")
    gencorpus.add_argument("--max-length", type=int, default=MAX_LENGTH,
                           help="length cap")
    gencorpus.add_argument("-o", "--output", type=Path, required=True,
                           help="corpus file to write")
    _add_common(gencorpus)
    gencorpus.set_defaults(handler=cmd_gencorpus)

    decode = subparsers.add_parser("decode",
                                   help="translate a token-id corpus",
                                   formatter_class=formatter)
    decode.add_argument("-m", "--model", type=Path, required=True, help="BFM1 model")
    decode.add_argument("-i", "--input", type=Path, required=True, help="corpus file")
    decode.add_argument("-o", "--output", type=Path, default=None,
                        help="translations file (stdout when omitted)")
    decode.add_argument("--beam", type=int, default=1, help="beam size")
    decode.add_argument("--strategy", choices=STRATEGIES, default="dynamic")
    decode.add_argument("--kernel", choices=KERNELS, default="fused")
    decode.add_argument("--precision",
                        choices=[mode.value for mode in PrecisionMode],
                        default=PrecisionMode.FULL32.value)
    decode.add_argument("--shards", type=int, default=1,
                        help="shards for the argmax1 kernel")
    decode.add_argument("--batch-size", type=int, default=None,
                        help="sentences per mini-batch (whole corpus when omitted)")
    decode.add_argument("--length-norm", action="store_true",
                        help="rank finished hypotheses by mean log-probability")
    decode.add_argument("--max-steps", type=int, default=None,
                        help="step limit (2 * source length + 10 when omitted)")
    decode.add_argument("--stats", type=Path, default=None,
                        help="write per-step stats CSV here")
    decode.add_argument("--vocab-file", type=Path, default=None,
                        help="render translations with this target vocab")
    _add_threads(decode)
    _add_common(decode)
    decode.set_defaults(handler=cmd_decode)

    bench = subparsers.add_parser("bench",
                                  help="run a benchmark and write CSV/SVG",
                                  formatter_class=formatter)
    bench.add_argument("name", choices=BENCHMARKS, help="benchmark to run")
    bench.add_argument("--model", type=Path, default=None,
                       help="BFM1 model (generated from --vocab/--state/--seed when omitted)")
    bench.add_argument("--corpus", type=Path, default=None,
                       help="corpus file (generated from --n/--seed when omitted)")
    bench.add_argument("--n", type=int, default=256, help="generated corpus size")
    bench.add_argument("--vocab", type=int_list, default=[1000],
                       help="vocab size(s); decode benchmarks use the first")
    bench.add_argument("--state", type=int, default=64, help="hidden state size")
    bench.add_argument("--seed", type=int, default=0, help="model and corpus seed")
    bench.add_argument("--sizes", type=int_list, default=[1, 4, 16, 64],
                       help="batch sizes for the batch benchmark")
    bench.add_argument("--batch-size", type=int, default=None,
                       help="batch size for the steps benchmark (whole corpus when omitted)")
    bench.add_argument("--k", type=int_list, default=[1, 3, 9],
                       help="k values for the kernels benchmark")
    bench.add_argument("--beams", type=int_list, default=[1, 3, 5, 9],
                       help="beam sizes for the fused benchmark")
    bench.add_argument("--beam", type=int, default=1, help="beam size")
    bench.add_argument("--strategy", choices=[*STRATEGIES, "both"], default="both")
    bench.add_argument("--kernel", choices=KERNELS, default="fused")
    bench.add_argument("--repetitions", type=int, default=3, help="timed repetitions")
    bench.add_argument("--warmup", type=int, default=1, help="discarded repetitions")
    bench.add_argument("--out-dir", type=Path, default=Path("results"),
                       help="directory for CSV and SVG output")
    bench.add_argument(
        "--db",
        default=os.getenv("BEAMFUSE_DATABASE_URL"),
        help="SQLite ledger URL (overrides BEAMFUSE_DATABASE_URL env var)",
    )
    bench.add_argument("--xlsx", type=Path, default=None,
                       help="export the ledger to this XLSX file after the run")
    _add_threads(bench)
    _add_common(bench)
    bench.set_defaults(handler=cmd_bench)
    return parser


def resolved_config(args: argparse.Namespace) -> Dict[str, object]:
    config = {}
    for key, value in sorted(vars(args).items()):
        if key in ("handler", "verbose"):
            continue
        config[key] = str(value) if isinstance(value, Path) else value
    return config


def cmd_genmodel(args: argparse.Namespace) -> int:
    dims = ModelDims(
        vocab_src=args.src_vocab if args.src_vocab is not None else args.vocab,
        vocab_tgt=args.tgt_vocab if args.tgt_vocab is not None else args.vocab,
        embed_dim=args.embed if args.embed is not None else args.state,
        state_dim=args.state,
    )
    model = generate_model(dims, args.seed)
    save_model(model, args.output)
    if args.vocab_out is not None:
        write_vocab(args.vocab_out, dims.vocab_tgt)
        logger.info("Wrote target vocab to %s", args.vocab_out)
    return EXIT_OK


def cmd_gencorpus(args: argparse.Namespace) -> int:
    sentences = generate_corpus(args.n,
                                args.vocab,
                                args.seed,
                                mean_length=args.mean_length,
                                max_length=args.max_length)
    write_corpus(args.output, sentences)
    logger.info("Wrote %d sentences to %s", len(sentences), args.output)
    return EXIT_OK


def cmd_decode(args: argparse.Namespace) -> int:
    if args.kernel == "argmax1" and args.beam != 1:
        raise ValueError("--kernel argmax1 requires --beam 1")
    config = BeamConfig(beam_size=args.beam,
                        max_steps=args.max_steps,
                        length_normalize=args.length_norm)
    model = load_model(args.model)
    sentences = read_corpus(args.input)
    vocab = read_vocab(args.vocab_file) if args.vocab_file is not None else None
    if vocab is not None and len(vocab) != model.dims.vocab_tgt:
        raise DataError(
            f"vocab file has {len(vocab)} tokens but the model targets {model.dims.vocab_tgt}")

    backend = ModelBackend(model=model,
                           precision=PrecisionMode(args.precision),
                           threads=args.threads)
    runner = BeamSearchRunner(backend=backend,
                              config=config,
                              strategy=args.strategy,
                              kernel=args.kernel,
                              shards=args.shards,
                              workers=args.threads)
    result = runner.decode(sentences, batch_size=args.batch_size)

    if vocab is not None:
        lines = [" ".join(vocab[token] for token in tokens) for tokens in result.translations]
    else:
        lines = [format_sentence(tokens) for tokens in result.translations]
    text = "".join(line + "\n" for line in lines)
    if args.output is not None:
        args.output.parent.mkdir(parents=True, exist_ok=True)
        args.output.write_text(text, encoding="utf-8")
        logger.info("Wrote %d translations to %s", len(lines), args.output)
    else:
        sys.stdout.write(text)

    if args.stats is not None:
        rows = [{
            "batch": record.batch,
            "step": record.step,
            "active_slots": record.active_slots,
            "seconds": record.seconds,
        } for record in result.stats.steps]
        if rows:
            write_csv(args.stats, rows, resolved_config(args))
            logger.info("Wrote per-step stats to %s", args.stats)
    logger.info("Hypothesis decodes: %d; forced EOS on %d sentence(s)",
                result.stats.hypothesis_decodes, len(result.stats.forced_eos))
    return EXIT_OK


def _bench_inputs(args: argparse.Namespace):
    if args.model is not None:
        model = load_model(args.model)
    else:
        dims = ModelDims(vocab_src=args.vocab[0],
                         vocab_tgt=args.vocab[0],
                         embed_dim=args.state,
                         state_dim=args.state)
        model = generate_model(dims, args.seed)
    if args.corpus is not None:
        corpus = read_corpus(args.corpus)
    else:
        corpus = generate_corpus(args.n, model.dims.vocab_src, args.seed)
    return model, corpus


def _strategies(args: argparse.Namespace) -> List[str]:
    return list(STRATEGIES) if args.strategy == "both" else [args.strategy]


def _run_benchmark(args: argparse.Namespace) -> List[Dict[str, object]]:
    if args.name == "kernels":
        return bench_kernels(args.vocab,
                             args.k,
                             args.repetitions,
                             warmup=args.warmup,
                             state_dim=args.state,
                             seed=args.seed)

    model, corpus = _bench_inputs(args)
    config = BeamConfig(beam_size=args.beam)
    runners: Dict[str, Callable[[], List[Dict[str, object]]]] = {
        "steps": lambda: bench_step_timing(
            model, corpus, args.batch_size or len(corpus), _strategies(args),
            config, kernel=args.kernel, threads=args.threads),
        "batch": lambda: bench_sweep_batch(
            model, corpus, args.sizes, _strategies(args), config,
            kernel=args.kernel, repetitions=args.repetitions,
            warmup=args.warmup, threads=args.threads),
        "precision": lambda: bench_precision(
            model, corpus, list(PrecisionMode), config, kernel=args.kernel,
            repetitions=args.repetitions, warmup=args.warmup,
            threads=args.threads),
        "fused": lambda: bench_fused_decode(
            model, corpus, args.beams, strategy=_strategies(args)[-1],
            repetitions=args.repetitions, warmup=args.warmup,
            threads=args.threads),
        "profile": lambda: bench_time_share(
            model, corpus, config, strategy=_strategies(args)[-1],
            kernel=args.kernel, threads=args.threads),
    }
    return runners[args.name]()


def _run_status(rows: List[Dict[str, object]]) -> str:
    checks = {row.get("check") for row in rows}
    if "fail" in checks:
        return "fail"
    if "warn" in checks:
        return "warn"
    return "ok"


def cmd_bench(args: argparse.Namespace) -> int:
    if args.xlsx is not None and not args.db:
        raise ValueError("--xlsx requires --db or BEAMFUSE_DATABASE_URL")
    config = resolved_config(args)
    rows = _run_benchmark(args)
    write_report(args.out_dir, args.name, rows, config)

    if args.db:
        store = ResultStore(path=resolve_sqlite_path(args.db))
        store.initialize()
        run_id = store.add_run(
            executed_at=dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
            benchmark=args.name,
            status=_run_status(rows),
            notes=json.dumps(config),
            rows=rows,
        )
        logger.info("Recorded run %d in %s", run_id, store.path)
        if args.xlsx is not None:
            store.export_to_xlsx(args.xlsx)
            logger.info("Exported run ledger to %s", args.xlsx)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    configure_logging(args.verbose)

    try:
        if hasattr(args, "threads"):
            if args.threads is None:
                args.threads = default_threads()
            elif args.threads < 1:
                raise ValueError(f"--threads must be >= 1, got {args.threads}")
        logger.info("Resolved configuration (%s): %s", args.command,
                    resolved_config(args))
        return args.handler(args)
    except DataError as exc:
        logger.error("Data error: %s", exc)
        return EXIT_DATA
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_DATA
    except ValueError as exc:
        logger.error("Invalid arguments: %s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
