"""Command-line interface.

Subcommands mirror the pipeline stages (extract, build-index, retrieve,
generate, make-finetune, lm-train, lm-ppl, filter), plus `augment` for the
whole run, `stats` for corpus summaries, and `serve` to expose a reference
backend over the wire protocol. Errors exit nonzero with a one-line JSON
object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import ngram, pipeline
from .backends.connect import build_reference, connect
from .backends.wire import serve_backend
from .data import LabelSet, load_corpus, save_corpus, tokenize
from .errors import BackendError, CheckpointError
from .extractor import ExtractorConfig, annotate_corpus
from .filtering import QualityCriteria, filter_batch
from .generator import load_candidates, make_finetune_pairs, save_finetune_pairs
from .retriever import (
    EmbeddingVector,
    RetrievalMode,
    build_index,
    load_index,
    retrieve_topk,
    save_index,
)

logger = logging.getLogger(__name__)


def _parse_modes(value: str) -> list[RetrievalMode]:
    return [RetrievalMode(m.strip()) for m in value.split(",") if m.strip()]


def _label_set(args) -> LabelSet:
    styles = tuple(s.strip() for s in args.labels.split(",") if s.strip())
    return LabelSet(styles=styles, factual=getattr(args, "factual_label", None) or None)


def _write_jsonl(records, path: str | None):
    out = sys.stdout if path in (None, "-") else open(path, "w", encoding="utf-8")
    try:
        for record in records:
            out.write(json.dumps(record, ensure_ascii=False) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_extract(args) -> int:
    label_set = _label_set(args)
    corpus = load_corpus(args.input, "stylized", label_set)
    classifier = connect(args.classifier, expect_kind="classifier", expected_labels=label_set.styles)
    cfg = ExtractorConfig(
        epsilon=args.epsilon,
        min_phrase_len=args.min_phrase_len,
        denominator_excludes=(label_set.factual,) if label_set.factual else (),
    )
    try:
        result = annotate_corpus(corpus, classifier, cfg)
    finally:
        classifier.close()
    save_corpus(result.annotated, args.output)
    if args.report:
        _write_jsonl(
            (
                {
                    "head": r.head_layer.head,
                    "layer": r.head_layer.layer,
                    "mean_confidence": r.mean_confidence,
                }
                for r in result.report
            ),
            args.report,
        )
    print(
        json.dumps(
            {
                "annotated": len(result.annotated),
                "skipped": len(result.skipped),
                "head": result.head_layer.head,
                "layer": result.head_layer.layer,
            }
        )
    )
    return 0


def cmd_build_index(args) -> int:
    corpus = load_corpus(args.annotated, "annotated")
    embedder = connect(args.embedder, expect_kind="embedder", expected_dimension=args.dimension)
    try:
        index = build_index(corpus, embedder)
    finally:
        embedder.close()
    save_index(index, args.output)
    print(json.dumps({"entries": len(index), "dimension": index.dimension}))
    return 0


def cmd_retrieve(args) -> int:
    index = load_index(args.index)
    embedder = connect(args.embedder, expect_kind="embedder", expected_dimension=index.dimension)
    modes = _parse_modes(args.modes)
    records = []
    try:
        if args.text:
            queries = [("query-0", None, args.text)]
        else:
            corpus = load_corpus(args.factual, "factual")
            queries = [(p.image.id, p.image, p.caption.raw_text) for p in corpus]
        for qid, image, text in queries:
            for mode in modes:
                if mode.query_is_image:
                    if image is None:
                        continue
                    query = embedder.embed_image(image)
                else:
                    query = embedder.embed_text(tokenize(text))
                for neighbor in retrieve_topk(index, query, mode, args.k):
                    if neighbor.similarity <= args.threshold:
                        continue
                    records.append(
                        {
                            "query_id": qid,
                            "mode": mode.value,
                            "neighbor_id": neighbor.sample_id,
                            "similarity": neighbor.similarity,
                            "style": neighbor.style,
                            "style_phrase": list(neighbor.style_phrase),
                        }
                    )
    finally:
        embedder.close()
    _write_jsonl(records, args.output)
    return 0


def cmd_generate(args) -> int:
    import hashlib

    from .generator import candidate_record, iter_generation

    factual = load_corpus(args.factual, "factual")
    index = load_index(args.index)
    embedder = connect(args.embedder, expect_kind="embedder", expected_dimension=index.dimension)
    generator = connect(args.generator, expect_kind="generator")
    modes = _parse_modes(args.modes)
    seed_root = pipeline.derive_seed(args.seed, "generate")

    # The checkpoint guards the input enumeration (offsets, per-item seeds),
    # not the backend identity, so a replacement backend can finish a run.
    args_hash = hashlib.sha256(
        json.dumps(
            {
                "factual": str(args.factual),
                "index": str(args.index),
                "modes": [m.value for m in modes],
                "threshold": args.threshold,
                "seed": args.seed,
                "output": str(args.output),
            },
            sort_keys=True,
        ).encode("utf-8")
    ).hexdigest()

    checkpoint_path = Path(args.checkpoint) if args.checkpoint else None
    start = 0
    output_path = Path(args.output)
    if checkpoint_path and checkpoint_path.exists():
        state = json.loads(checkpoint_path.read_text(encoding="utf-8"))
        if state.get("args_hash") != args_hash:
            raise CheckpointError(
                f"checkpoint {checkpoint_path} belongs to a different generate invocation"
            )
        start = int(state["next_offset"])
        with output_path.open("r+", encoding="utf-8") as fh:
            fh.truncate(int(state["bytes"]))
        out = output_path.open("a", encoding="utf-8")
    else:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        out = output_path.open("w", encoding="utf-8")

    written = 0
    try:
        for offset, pair_candidates in iter_generation(
            factual,
            index,
            embedder,
            generator,
            modes,
            args.threshold,
            seed_for=lambda off: pipeline.derive_seed(seed_root, off),
            start=start,
        ):
            for candidate in pair_candidates:
                out.write(json.dumps(candidate_record(candidate), ensure_ascii=False) + "\n")
                written += 1
            out.flush()
            if checkpoint_path:
                tmp = checkpoint_path.with_suffix(".tmp")
                tmp.write_text(
                    json.dumps(
                        {"args_hash": args_hash, "next_offset": offset + 1, "bytes": out.tell()}
                    ),
                    encoding="utf-8",
                )
                tmp.replace(checkpoint_path)
    finally:
        out.close()
        embedder.close()
        generator.close()
    if checkpoint_path:
        checkpoint_path.unlink(missing_ok=True)
    print(json.dumps({"written": written, "factual": len(factual), "resumed_from": start}))
    return 0


def cmd_make_finetune(args) -> int:
    corpus = load_corpus(args.annotated, "annotated")
    pairs = make_finetune_pairs(corpus)
    save_finetune_pairs(pairs, args.output)
    print(json.dumps({"pairs": len(pairs)}))
    return 0


def cmd_lm_train(args) -> int:
    sentences = _sentences_from_args(args)
    lambdas = tuple(float(x) for x in args.lambdas.split(","))
    model = ngram.train(sentences, lambdas, args.unk_threshold)
    ngram.save_model(model, args.output)
    print(json.dumps({"sentences": len(sentences), "vocab": len(model.vocab)}))
    return 0


def cmd_lm_ppl(args) -> int:
    model = ngram.load_model(args.model)
    sentences = _sentences_from_args(args)
    value = ngram.perplexity(model, sentences)
    print(json.dumps({"perplexity": value, "sentences": len(sentences)}))
    return 0


def _sentences_from_args(args) -> list[list[str]]:
    if args.corpus:
        kind = args.corpus_kind
        records = load_corpus(args.corpus, kind)
        if kind == "stylized":
            if args.style:
                records = [r for r in records if r.style == args.style]
            return [list(r.caption.tokens) for r in records]
        if kind == "factual":
            return [list(r.caption.tokens) for r in records]
        if kind == "augmented":
            if args.style:
                records = [r for r in records if r.style == args.style]
            return [list(r.generated_caption.tokens) for r in records]
        raise ValueError(f"unsupported corpus kind for language modeling: {kind}")
    sentences = []
    for line in Path(args.text_file).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            sentences.append(tokenize(line))
    return sentences


def cmd_filter(args) -> int:
    candidates = load_candidates(args.candidates)
    classifier = connect(args.classifier, expect_kind="classifier")
    lms = {}
    for spec in args.lm:
        style, _, path = spec.partition("=")
        if not path:
            raise ValueError(f"--lm expects STYLE=MODEL_PATH, got {spec!r}")
        lms[style] = ngram.load_model(path)
    criteria = QualityCriteria(
        target_style=args.target_style or None,
        max_perplexity=args.max_ppl,
        min_similarity=args.min_sim,
        dedupe=not args.no_dedupe,
    )
    try:
        outcome = filter_batch(candidates, classifier, lms, criteria)
    finally:
        classifier.close()
    save_corpus(outcome.accepted, args.output)
    if args.rejections:
        _write_jsonl(
            (
                {
                    "image_id": c.image.id,
                    "style": c.style,
                    "text": c.text.raw_text,
                    "mode": c.neighbor.mode.value,
                    "reasons": report.reasons(),
                    "ppl": report.ppl,
                    "sim": report.sim,
                }
                for c, report in outcome.rejected
            ),
            args.rejections,
        )
    per_mode: dict[str, int] = {}
    for pair in outcome.accepted:
        per_mode[pair.provenance.mode] = per_mode.get(pair.provenance.mode, 0) + 1
    print(
        json.dumps(
            {
                "candidates": len(candidates),
                "accepted": len(outcome.accepted),
                "accepted_per_mode": dict(sorted(per_mode.items())),
                "rejected": len(outcome.rejected),
                "rejected_per_reason": dict(sorted(outcome.reason_counts.items())),
                "deduped": outcome.deduped,
                "unevaluated": len(outcome.unevaluated),
            }
        )
    )
    return 0


def cmd_augment(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if args.out_dir is not None:
        overrides["out_dir"] = Path(args.out_dir)
    if args.modes is not None:
        overrides["modes"] = tuple(m.value for m in _parse_modes(args.modes))
    config = pipeline.config_from_toml(args.config, overrides)
    result = pipeline.augment(config)
    print(json.dumps({"accepted": result.accepted, "report": str(result.report_path)}))
    return 0


def cmd_stats(args) -> int:
    corpus = load_corpus(args.input, "augmented")
    print(json.dumps(pipeline.stats(corpus), indent=2))
    return 0


def cmd_serve(args) -> int:
    descriptor = args.descriptor
    if not descriptor.startswith("ref:"):
        raise ValueError("serve only hosts reference backends (ref:...)")
    rest = descriptor[len("ref:") :]
    kind, _, spec = rest.partition(":")
    backend = build_reference(kind, spec)
    serve_backend(backend, kind)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="styleaug",
        description="Augment a small stylized image-caption corpus from a large factual one.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="annotate stylized captions with style phrases")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--epsilon", type=float, default=0.25)
    p.add_argument("--min-phrase-len", type=int, default=1)
    p.add_argument("--labels", required=True, help="comma-separated style labels")
    p.add_argument("--factual-label", default=None)
    p.add_argument("--classifier", required=True, help="backend descriptor")
    p.add_argument("--report", default=None, help="confidence report JSONL path")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("build-index", help="embed an annotated corpus into a scene index")
    p.add_argument("--annotated", required=True)
    p.add_argument("--embedder", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dimension", type=int, default=768)
    p.set_defaults(func=cmd_build_index)

    p = sub.add_parser("retrieve", help="query the scene index")
    p.add_argument("--index", required=True)
    p.add_argument("--embedder", required=True)
    p.add_argument("--modes", default="i2i,t2t,i2t,t2i")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--threshold", type=float, default=-1.0, help="keep similarities above this")
    p.add_argument("--factual", help="factual corpus to use as queries")
    p.add_argument("--text", help="single text query instead of a corpus")
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("generate", help="generate stylized candidates for a factual corpus")
    p.add_argument("--factual", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--embedder", required=True)
    p.add_argument("--generator", required=True)
    p.add_argument("--modes", default="i2i,t2t,i2t,t2i")
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--checkpoint", default=None, help="resume file (last completed input offset)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("make-finetune", help="emit reconstruction pairs for generator tuning")
    p.add_argument("--annotated", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_make_finetune)

    p = sub.add_parser("lm-train", help="train a trigram language model")
    p.add_argument("--corpus", help="corpus JSONL to read sentences from")
    p.add_argument("--corpus-kind", default="stylized", choices=["stylized", "factual", "augmented"])
    p.add_argument("--style", default=None, help="restrict to one style label")
    p.add_argument("--text-file", help="plain text, one sentence per line")
    p.add_argument("--lambdas", default="0.6,0.3,0.1")
    p.add_argument("--unk-threshold", type=int, default=1)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_lm_train)

    p = sub.add_parser("lm-ppl", help="perplexity of sentences under a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", help="corpus JSONL to score")
    p.add_argument("--corpus-kind", default="stylized", choices=["stylized", "factual", "augmented"])
    p.add_argument("--style", default=None)
    p.add_argument("--text-file", help="plain text, one sentence per line")
    p.set_defaults(func=cmd_lm_ppl)

    p = sub.add_parser("filter", help="apply the three quality criteria to candidates")
    p.add_argument("--candidates", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--lm", action="append", required=True, help="STYLE=MODEL_PATH (repeatable)")
    p.add_argument("--target-style", default=None)
    p.add_argument("--max-ppl", type=float, default=80.0)
    p.add_argument("--min-sim", type=float, default=0.6)
    p.add_argument("--no-dedupe", action="store_true")
    p.add_argument("--output", required=True)
    p.add_argument("--rejections", default=None)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("augment", help="run the full pipeline from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--modes", default=None)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("stats", help="summarize an augmented corpus")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("serve", help="serve a reference backend over stdio")
    p.add_argument("descriptor", help="ref:<kind>:<params> descriptor to host")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (
        ValueError,
        FileNotFoundError,
        BackendError,
        CheckpointError,
        pipeline.PipelineAborted,
    ) as exc:
        code = type(exc).__name__
        sys.stderr.write(json.dumps({"error": {"code": code, "message": str(exc)}}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
