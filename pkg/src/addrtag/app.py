"""User-facing surfaces: the ``addrtag`` CLI and the JSON parse service.

Both are thin adapters over the library: identical inputs against the same
checkpoint produce identical results to direct ``parse`` calls.

Exit codes: 0 success, 1 input/usage error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .core import AddrTagError, EmptyAddress, TagVocabulary
from .train import TrainingConfig, render_training_figure, retrain

MODEL_ENV_VAR = "ADDRTAG_MODEL"
DEFAULT_MAX_ADDRESSES = 10_000


class UsageError(Exception):
    def __init__(self, parser: argparse.ArgumentParser, message: str):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); the contract is exit 1
        raise UsageError(self, message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="addrtag", description="Multinational address tagger")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("parse", help="tag addresses from a file or stdin")
    p.add_argument("--model", default=os.environ.get(MODEL_ENV_VAR),
                   help=f"checkpoint path (default ${MODEL_ENV_VAR})")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--input", default="-", help="file with one address per line, - for stdin")
    p.add_argument("--output", default="-", help="output file, - for stdout")
    p.add_argument("--format", choices=("json", "tsv"), default="json")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("retrain", help="fine-tune a checkpoint on a dataset")
    p.add_argument("--model", default=os.environ.get(MODEL_ENV_VAR), help="input checkpoint")
    p.add_argument("--dataset", required=True, help="JSON-lines dataset file")
    p.add_argument("--train-ratio", type=float, default=0.8)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--teacher-forcing", type=float, default=0.5)
    p.add_argument("--tags", help="JSON file mapping tag names to indices (must include EOS)")
    p.add_argument("--encoder-hidden", type=int)
    p.add_argument("--decoder-hidden", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="where to write the best checkpoint")
    p.add_argument("--report", help="write the per-epoch report (JSON lines) and a PNG figure")
    p.set_defaults(func=_cmd_retrain)

    p = sub.add_parser("bench", help="run the inference benchmark")
    p.add_argument("--corpus", required=True, help="one address per line")
    p.add_argument("--models", required=True, help="comma-separated checkpoint paths")
    p.add_argument("--batch-sizes", default=",".join(str(2 ** k) for k in range(10)))
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--warmup", type=int, default=100)
    p.add_argument("--report", required=True, help="CSV output path; figures go alongside")
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("bpe-learn", help="learn a BPE merge table from an address corpus")
    p.add_argument("--corpus", required=True, help="one address per line")
    p.add_argument("--merges", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_bpe_learn)

    p = sub.add_parser("serve", help="serve POST /parse over HTTP")
    p.add_argument("--model", default=os.environ.get(MODEL_ENV_VAR))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-addresses", type=int, default=DEFAULT_MAX_ADDRESSES)
    p.set_defaults(func=_cmd_serve)
    return parser


def _require_model(args) -> str:
    if not args.model:
        raise AddrTagError(f"no checkpoint given: pass --model or set ${MODEL_ENV_VAR}")
    return args.model


def _read_lines(path: str) -> list[str]:
    if path == "-":
        return [line.strip() for line in sys.stdin if line.strip()]
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def _open_out(path: str):
    if path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _cmd_parse(args) -> int:
    from .io import load_checkpoint

    tagger = load_checkpoint(_require_model(args))
    addresses = _read_lines(args.input)
    results = tagger.parse(addresses, batch_size=args.batch_size)
    out, close = _open_out(args.output)
    try:
        if args.format == "json":
            for raw, parsed in zip(addresses, results):
                out.write(json.dumps({
                    "address": raw,
                    "tokens": list(parsed.tokens),
                    "tags": list(parsed.tags),
                    "probabilities": [float(p) for p in parsed.probabilities],
                }) + "\n")
        else:
            for idx, parsed in enumerate(results):
                for token, tag, prob in parsed:
                    out.write(f"{idx}\t{token}\t{tag}\t{prob:.6f}\n")
    finally:
        if close:
            out.close()
    return 0


def _load_tags_file(path) -> TagVocabulary:
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    return TagVocabulary({str(k): int(v) for k, v in entries.items()})


def _cmd_retrain(args) -> int:
    from .io import load_checkpoint, load_dataset

    tagger = load_checkpoint(_require_model(args))
    prediction_tags = _load_tags_file(args.tags) if args.tags else None
    seq2seq_params = None
    if args.encoder_hidden is not None or args.decoder_hidden is not None:
        if args.encoder_hidden is None or args.decoder_hidden is None:
            raise AddrTagError("--encoder-hidden and --decoder-hidden must be given together")
        seq2seq_params = {"encoder_hidden_size": args.encoder_hidden,
                          "decoder_hidden_size": args.decoder_hidden}
    vocab = prediction_tags or tagger.model.config.tag_vocab
    dataset = load_dataset(args.dataset, vocab=vocab, preprocessor=tagger.preprocessor)
    config = TrainingConfig(
        train_ratio=args.train_ratio,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        teacher_forcing_ratio=args.teacher_forcing,
        seed=args.seed,
        prediction_tags=prediction_tags,
        seq2seq_params=seq2seq_params,
        checkpoint_path=args.out,
    )
    _, report = retrain(tagger, dataset, config)
    for row in report.rows:
        print(f"epoch {row.epoch}: loss={row.train_loss:.4f} "
              f"train_seq={row.train_seq_accuracy:.4f} eval_seq={row.eval_seq_accuracy:.4f} "
              f"eval_full={row.eval_full_parse:.4f} ({row.seconds:.1f}s)")
    if args.report:
        Path(args.report).write_text(report.to_jsonl(), encoding="utf-8")
        figure = Path(args.report).with_suffix(".png")
        render_training_figure(report, figure)
        print(f"report written to {args.report}, figure to {figure}")
    print(f"best checkpoint written to {args.out}")
    return 0


def _cmd_bench(args) -> int:
    from .bench import BenchConfig, render_figures, render_report, run_benchmark

    config = BenchConfig(
        corpus_path=args.corpus,
        model_paths=tuple(p for p in args.models.split(",") if p),
        batch_sizes=tuple(int(b) for b in args.batch_sizes.split(",") if b),
        repetitions=args.repetitions,
        warmup=args.warmup,
    )
    report = run_benchmark(config)
    Path(args.report).write_text(render_report(report, "csv"), encoding="utf-8")
    figures = render_figures(report, Path(args.report).with_suffix(""))
    print(render_report(report, "table"), end="")
    print(f"CSV written to {args.report}; figures: {', '.join(str(f) for f in figures)}")
    return 0


def _cmd_bpe_learn(args) -> int:
    from .bench import read_corpus
    from .bpe import digits_to_zero, learn_bpe, save_merge_table
    from .preprocess import Preprocessor

    pre = Preprocessor()
    tokens = [digits_to_zero(tok)
              for raw in read_corpus(args.corpus)
              for tok in pre.tokenize(raw).tokens]
    table = learn_bpe(tokens, num_merges=args.merges)
    save_merge_table(table, args.out)
    print(f"{len(table.merges)} merges, {table.size} subwords written to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    app = create_app(checkpoint_path=_require_model(args), max_addresses=args.max_addresses)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        exc.parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (AddrTagError, OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal failure
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


# -- HTTP service -------------------------------------------------------------

def create_app(checkpoint_path: str | None = None, tagger=None,
               max_addresses: int = DEFAULT_MAX_ADDRESSES, batch_size: int = 64):
    """FastAPI app serving POST /parse and GET /health.

    The checkpoint loads during startup; until then endpoints answer 503.
    A preloaded ``tagger`` may be passed instead of a path.
    """
    from contextlib import asynccontextmanager

    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse

    @asynccontextmanager
    async def lifespan(app_):
        if app_.state.tagger is None and checkpoint_path is not None:
            from .io import load_checkpoint
            app_.state.tagger = load_checkpoint(checkpoint_path)
        yield

    app = FastAPI(title="addrtag", lifespan=lifespan)
    app.state.tagger = tagger

    @app.get("/health")
    async def health():
        current = app.state.tagger
        if current is None:
            return JSONResponse({"status": "loading"}, status_code=503)
        return {"status": "ok", "model": current.flavor}

    @app.post("/parse")
    async def parse_addresses(request: Request):
        current = app.state.tagger
        if current is None:
            return JSONResponse({"error": "model not loaded"}, status_code=503)
        try:
            body = await request.json()
        except Exception:
            return JSONResponse({"error": "malformed JSON body"}, status_code=400)
        if not isinstance(body, dict):
            return JSONResponse({"error": "body must be an object"}, status_code=400)
        addresses = body.get("addresses")
        if (not isinstance(addresses, list) or not addresses
                or not all(isinstance(a, str) for a in addresses)):
            return JSONResponse({"error": "addresses must be a non-empty list of strings"},
                                status_code=400)
        if len(addresses) > max_addresses:
            return JSONResponse({"error": f"at most {max_addresses} addresses per request"},
                                status_code=413)
        results: list[dict | None] = [None] * len(addresses)
        parseable: list[tuple[int, str]] = []
        for i, raw in enumerate(addresses):
            try:
                current.preprocessor.tokenize(raw)
                parseable.append((i, raw))
            except EmptyAddress:
                results[i] = {"error": "empty_address"}
        if parseable:
            parsed = current.parse([raw for _, raw in parseable], batch_size=batch_size)
            for (i, _), p in zip(parseable, parsed):
                results[i] = {"tokens": list(p.tokens), "tags": list(p.tags),
                              "probabilities": [float(x) for x in p.probabilities]}
        return {"results": results}

    return app
