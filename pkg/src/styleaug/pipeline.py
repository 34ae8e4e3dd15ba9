"""End-to-end augmentation: extract, retrieve, generate, filter.

The run is checkpointed so a killed process resumes without recomputing
finished stages, and the generate stage restarts at the exact factual-pair
offset (the candidates file is truncated to the last durable byte first).
Given the same inputs, config, seed, and deterministic backends, the
augmented corpus is byte-identical whether or not the run was interrupted.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import ngram
from .backends.connect import connect
from .backends.reference import ReferenceClassifier, ReferenceEmbedder, ReferenceGenerator
from .data import LabelSet, load_corpus, save_corpus
from .errors import BackendUnavailableError, CheckpointError
from .extractor import ExtractorConfig, annotate_corpus
from .filtering import QualityCriteria, filter_batch
from .generator import candidate_record, load_candidates
from .generator import iter_generation as _iter_generation
from .retriever import RetrievalMode, build_index, load_index, save_index

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = "styleaug-checkpoint/1"
REPORT_SCHEMA = "styleaug-run-report/1"

SIM_HIST_EDGES = [round(-1.0 + i * 0.1, 1) for i in range(21)]
PPL_HIST_EDGES = [0, 1, 2, 5, 10, 20, 40, 80, 160, 320]


class PipelineAborted(RuntimeError):
    """A stage-fatal failure; the checkpoint allows resuming the run."""

    def __init__(self, message: str, checkpoint_path: Path):
        super().__init__(f"{message} (resume by re-running; checkpoint: {checkpoint_path})")
        self.checkpoint_path = checkpoint_path


@dataclass(frozen=True)
class PipelineConfig:
    stylized_path: Path
    factual_path: Path
    out_dir: Path
    labels: tuple[str, ...]
    classifier: str
    embedder: str
    generator: str
    factual_label: str | None = None
    epsilon: float = 0.25
    min_phrase_len: int = 1
    modes: tuple[str, ...] = ("i2i", "t2t", "i2t", "t2i")
    min_similarity: float = 0.6
    max_perplexity: float = 80.0
    dedupe: bool = True
    lm_lambdas: tuple[float, float, float] = (0.6, 0.3, 0.1)
    lm_unk_threshold: int = 1
    dimension: int = 768
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")
        if not self.modes:
            raise ValueError("at least one retrieval mode is required")
        for mode in self.modes:
            RetrievalMode(mode)
        if not self.labels:
            raise ValueError("label set must be non-empty")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")

    @property
    def label_set(self) -> LabelSet:
        return LabelSet(styles=tuple(self.labels), factual=self.factual_label or None)

    @property
    def retrieval_modes(self) -> tuple[RetrievalMode, ...]:
        return tuple(RetrievalMode(m) for m in self.modes)

    def paths(self) -> dict[str, Path]:
        out = Path(self.out_dir)
        return {
            "annotated": out / "annotated.jsonl",
            "confidence_report": out / "confidence_report.jsonl",
            "index": out / "index.jsonl",
            "lm_dir": out / "lm",
            "candidates": out / "candidates.jsonl",
            "augmented": out / "augmented.jsonl",
            "rejections": out / "rejections.jsonl",
            "report": out / "report.json",
            "checkpoint": out / "checkpoint.json",
        }

    def fingerprint(self) -> str:
        """Hash of every knob that can change the run's data outputs."""
        payload = {
            "stylized": str(self.stylized_path),
            "factual": str(self.factual_path),
            "labels": list(self.labels),
            "factual_label": self.factual_label,
            "epsilon": self.epsilon,
            "min_phrase_len": self.min_phrase_len,
            "modes": list(self.modes),
            "min_similarity": self.min_similarity,
            "max_perplexity": self.max_perplexity,
            "dedupe": self.dedupe,
            "lm_lambdas": list(self.lm_lambdas),
            "lm_unk_threshold": self.lm_unk_threshold,
            "classifier": self.classifier,
            "embedder": self.embedder,
            "generator": self.generator,
            "dimension": self.dimension,
            "seed": self.seed,
        }
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8"))
        return digest.hexdigest()

    def echo(self) -> dict:
        payload = {k: v for k, v in self.__dict__.items()}
        for key in ("stylized_path", "factual_path", "out_dir"):
            payload[key] = str(payload[key])
        for key in ("labels", "modes", "lm_lambdas"):
            payload[key] = list(payload[key])
        return payload


def _resolve_descriptor(descriptor: str, base: Path) -> str:
    """Make file references inside a ref: descriptor relative to the config."""
    if not descriptor.startswith("ref:"):
        return descriptor
    prefix, _, spec = descriptor.partition(":")
    kind, _, params = spec.partition(":")
    resolved = []
    for chunk in params.split(","):
        key, sep, value = chunk.partition("=")
        if sep and key.strip() in ("config", "anchors") and value and not Path(value).is_absolute():
            chunk = f"{key}={base / value}"
        resolved.append(chunk)
    return f"{prefix}:{kind}:{','.join(resolved)}"


def config_from_toml(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    base = Path(path).parent

    def resolve(p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    paths = raw.get("paths", {})
    labels = raw.get("labels", {})
    extract = raw.get("extract", {})
    retrieve = raw.get("retrieve", {})
    filt = raw.get("filter", {})
    lm = raw.get("lm", {})
    backends = raw.get("backends", {})
    run = raw.get("run", {})
    config = PipelineConfig(
        stylized_path=resolve(paths["stylized"]),
        factual_path=resolve(paths["factual"]),
        out_dir=resolve(paths.get("out_dir", "out")),
        labels=tuple(labels["styles"]),
        factual_label=labels.get("factual") or None,
        epsilon=float(extract.get("epsilon", 0.25)),
        min_phrase_len=int(extract.get("min_phrase_len", 1)),
        modes=tuple(retrieve.get("modes", ("i2i", "t2t", "i2t", "t2i"))),
        min_similarity=float(filt.get("min_similarity", 0.6)),
        max_perplexity=float(filt.get("max_perplexity", 80.0)),
        dedupe=bool(filt.get("dedupe", True)),
        lm_lambdas=tuple(lm.get("lambdas", (0.6, 0.3, 0.1))),
        lm_unk_threshold=int(lm.get("unk_threshold", 1)),
        classifier=_resolve_descriptor(backends["classifier"], base),
        embedder=_resolve_descriptor(backends["embedder"], base),
        generator=_resolve_descriptor(backends["generator"], base),
        dimension=int(backends.get("dimension", 768)),
        seed=int(run.get("seed", 0)),
        workers=int(run.get("workers", 1)),
    )
    if overrides:
        config = replace(config, **overrides)
    return config


def derive_seed(global_seed: int, *parts) -> int:
    """Stable per-stage / per-item seed derivation from the global seed."""
    text = ":".join([str(global_seed), *[str(p) for p in parts]])
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


@dataclass
class BackendSet:
    classifier: object
    embedder: object
    generator: object

    def close(self):
        for backend in (self.classifier, self.embedder, self.generator):
            try:
                backend.close()
            except Exception:  # pragma: no cover
                pass


def connect_backends(config: PipelineConfig) -> BackendSet:
    classifier = connect(
        config.classifier, expect_kind="classifier", expected_labels=tuple(config.labels)
    )
    embedder = connect(
        config.embedder, expect_kind="embedder", expected_dimension=config.dimension
    )
    generator = connect(config.generator, expect_kind="generator")
    return BackendSet(classifier=classifier, embedder=embedder, generator=generator)


# ---------------------------------------------------------------------------
# Checkpointing


@dataclass
class Checkpoint:
    config_hash: str
    extract_done: bool = False
    lm_done: bool = False
    index_done: bool = False
    generate_next: int = 0
    candidates_bytes: int = 0
    generate_done: bool = False

    def save(self, path: Path):
        payload = {"schema": CHECKPOINT_SCHEMA, **self.__dict__}
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload), encoding="utf-8")
        tmp.replace(path)

    @classmethod
    def load(cls, path: Path) -> "Checkpoint":
        payload = json.loads(path.read_text(encoding="utf-8"))
        if payload.pop("schema", None) != CHECKPOINT_SCHEMA:
            raise CheckpointError(f"not a {CHECKPOINT_SCHEMA} file: {path}")
        return cls(**payload)


def _load_or_init_checkpoint(config: PipelineConfig, path: Path) -> Checkpoint:
    if path.exists():
        checkpoint = Checkpoint.load(path)
        if checkpoint.config_hash != config.fingerprint():
            raise CheckpointError(
                f"checkpoint {path} belongs to a different configuration; "
                "remove it (or the output directory) to start fresh"
            )
        logger.info("resuming from checkpoint %s", path)
        return checkpoint
    return Checkpoint(config_hash=config.fingerprint())


# ---------------------------------------------------------------------------
# The full run


@dataclass
class AugmentResult:
    report: dict
    augmented_path: Path
    report_path: Path
    accepted: int


def augment(config: PipelineConfig, backends: BackendSet | None = None) -> AugmentResult:
    """Run Extract -> Retrieve -> Generate -> Filter end to end."""
    paths = config.paths()
    Path(config.out_dir).mkdir(parents=True, exist_ok=True)
    checkpoint = _load_or_init_checkpoint(config, paths["checkpoint"])
    owns_backends = backends is None
    if backends is None:
        backends = connect_backends(config)
    timings: dict[str, float] = {}
    started = time.monotonic()
    try:
        stylized = load_corpus(config.stylized_path, "stylized", config.label_set)
        if not stylized:
            raise ValueError(f"stylized corpus is empty: {config.stylized_path}")
        factual = load_corpus(config.factual_path, "factual")

        # Extract
        t0 = time.monotonic()
        extractor_cfg = ExtractorConfig(
            epsilon=config.epsilon,
            min_phrase_len=config.min_phrase_len,
            denominator_excludes=(config.factual_label,) if config.factual_label else (),
        )
        if checkpoint.extract_done and paths["annotated"].exists():
            annotated = load_corpus(paths["annotated"], "annotated", config.label_set)
            head_layer = _head_layer_from_report(paths["confidence_report"])
            skipped_short = len(stylized) - len(annotated)
        else:
            result = annotate_corpus(stylized, backends.classifier, extractor_cfg)
            annotated = result.annotated
            head_layer = {"head": result.head_layer.head, "layer": result.head_layer.layer}
            skipped_short = len(result.skipped)
            save_corpus(annotated, paths["annotated"])
            with paths["confidence_report"].open("w", encoding="utf-8") as fh:
                for rec in result.report:
                    fh.write(
                        json.dumps(
                            {
                                "head": rec.head_layer.head,
                                "layer": rec.head_layer.layer,
                                "mean_confidence": rec.mean_confidence,
                            }
                        )
                        + "\n"
                    )
            checkpoint.extract_done = True
            checkpoint.save(paths["checkpoint"])
        if not annotated:
            raise ValueError("no stylized caption was long enough to annotate")
        timings["extract"] = time.monotonic() - t0

        # Style language models
        t0 = time.monotonic()
        lm_dir = paths["lm_dir"]
        models: dict[str, ngram.TrigramModel] = {}
        by_style: dict[str, list] = {}
        for sample in stylized:
            by_style.setdefault(sample.style, []).append(list(sample.caption.tokens))
        for style, sentences in sorted(by_style.items()):
            model_path = lm_dir / f"{style}.json"
            if checkpoint.lm_done and model_path.exists():
                models[style] = ngram.load_model(model_path)
            else:
                models[style] = ngram.train(sentences, config.lm_lambdas, config.lm_unk_threshold)
                ngram.save_model(models[style], model_path)
        checkpoint.lm_done = True
        checkpoint.save(paths["checkpoint"])
        timings["lm"] = time.monotonic() - t0

        # Index
        t0 = time.monotonic()
        if checkpoint.index_done and paths["index"].exists():
            index = load_index(paths["index"])
        else:
            index = build_index(annotated, backends.embedder)
            save_index(index, paths["index"])
            checkpoint.index_done = True
            checkpoint.save(paths["checkpoint"])
        timings["index"] = time.monotonic() - t0

        # Generate (checkpointed per factual pair)
        t0 = time.monotonic()
        if not checkpoint.generate_done:
            _run_generation(config, backends, factual, index, checkpoint, paths)
        timings["generate"] = time.monotonic() - t0

        # Filter
        t0 = time.monotonic()
        candidates = load_candidates(paths["candidates"])
        criteria = QualityCriteria(
            target_style=None,
            max_perplexity=config.max_perplexity,
            min_similarity=config.min_similarity,
            dedupe=config.dedupe,
        )
        outcome = filter_batch(candidates, backends.classifier, models, criteria)
        save_corpus(outcome.accepted, paths["augmented"])
        with paths["rejections"].open("w", encoding="utf-8") as fh:
            for candidate, report in outcome.rejected:
                fh.write(
                    json.dumps(
                        {
                            "image_id": candidate.image.id,
                            "style": candidate.style,
                            "text": candidate.text.raw_text,
                            "mode": candidate.neighbor.mode.value,
                            "reasons": report.reasons(),
                            "report": {
                                "cls_probs": report.cls_probs,
                                "cls_pass": report.cls_pass,
                                "ppl": report.ppl,
                                "ppl_pass": report.ppl_pass,
                                "sim": report.sim,
                                "sim_pass": report.sim_pass,
                            },
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
            for candidate, reason in outcome.unevaluated:
                fh.write(
                    json.dumps(
                        {
                            "image_id": candidate.image.id,
                            "style": candidate.style,
                            "text": candidate.text.raw_text,
                            "mode": candidate.neighbor.mode.value,
                            "reasons": ["unevaluated"],
                            "report": {"error": reason},
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )
        timings["filter"] = time.monotonic() - t0

        timings["total"] = time.monotonic() - started
        report = _build_report(
            config,
            paths,
            stylized_count=len(stylized),
            factual_count=len(factual),
            annotated_count=len(annotated),
            skipped_short=skipped_short,
            head_layer=head_layer,
            candidates=candidates,
            outcome=outcome,
            timings=timings,
        )
        paths["report"].write_text(
            json.dumps(report, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        # The run is complete; a later invocation starts fresh.
        paths["checkpoint"].unlink(missing_ok=True)
        return AugmentResult(
            report=report,
            augmented_path=paths["augmented"],
            report_path=paths["report"],
            accepted=len(outcome.accepted),
        )
    finally:
        if owns_backends:
            backends.close()


def _head_layer_from_report(path: Path) -> dict | None:
    if not path.exists():
        return None
    rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]
    if not rows:
        return None
    best = min(rows, key=lambda r: (r["mean_confidence"], r["layer"], r["head"]))
    return {"head": best["head"], "layer": best["layer"]}


def _run_generation(config, backends, factual, index, checkpoint: Checkpoint, paths):
    candidates_path: Path = paths["candidates"]
    start = checkpoint.generate_next
    if start and candidates_path.exists():
        # Drop any partial tail written after the last durable checkpoint.
        with candidates_path.open("r+", encoding="utf-8") as fh:
            fh.truncate(checkpoint.candidates_bytes)
        out = candidates_path.open("a", encoding="utf-8")
    else:
        start = 0
        out = candidates_path.open("w", encoding="utf-8")
    modes = config.retrieval_modes
    generate_seed = derive_seed(config.seed, "generate")

    def seed_for(offset: int) -> int:
        return derive_seed(generate_seed, offset)

    def handle_pair(offset: int, pair_candidates) -> None:
        for candidate in pair_candidates:
            out.write(json.dumps(candidate_record(candidate), ensure_ascii=False) + "\n")
        out.flush()
        checkpoint.generate_next = offset + 1
        checkpoint.candidates_bytes = out.tell()
        checkpoint.save(paths["checkpoint"])

    in_process = all(
        isinstance(b, (ReferenceClassifier, ReferenceEmbedder, ReferenceGenerator))
        for b in (backends.embedder, backends.generator)
    )
    try:
        if config.workers > 1 and in_process:
            _parallel_generation(
                config, backends, factual, index, modes, seed_for, start, handle_pair
            )
        else:
            if config.workers > 1:
                logger.warning(
                    "workers=%d requested but a wire backend is connected; running sequentially",
                    config.workers,
                )
            for offset, pair_candidates in _iter_generation(
                factual,
                index,
                backends.embedder,
                backends.generator,
                modes,
                config.min_similarity,
                seed_for,
                start=start,
            ):
                handle_pair(offset, pair_candidates)
    except BackendUnavailableError as exc:
        out.close()
        checkpoint.save(paths["checkpoint"])
        raise PipelineAborted(f"generation stopped: {exc}", paths["checkpoint"]) from exc
    out.close()
    checkpoint.generate_done = True
    checkpoint.save(paths["checkpoint"])


def _parallel_generation(config, backends, factual, index, modes, seed_for, start, handle_pair):
    """In-order parallel map over factual pairs (in-process backends only)."""
    from .generator import GenerationCandidate  # noqa: F401  (typing aid)

    def work(offset: int):
        results = list(
            _iter_generation(
                factual[offset : offset + 1],
                index,
                backends.embedder,
                backends.generator,
                modes,
                config.min_similarity,
                lambda _off: seed_for(offset),
            )
        )
        return offset, results[0][1] if results else []

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        for offset, pair_candidates in pool.map(work, range(start, len(factual))):
            handle_pair(offset, pair_candidates)


def _build_report(
    config,
    paths,
    stylized_count,
    factual_count,
    annotated_count,
    skipped_short,
    head_layer,
    candidates,
    outcome,
    timings,
) -> dict:
    per_mode_generated: dict[str, int] = {}
    for candidate in candidates:
        mode = candidate.neighbor.mode.value
        per_mode_generated[mode] = per_mode_generated.get(mode, 0) + 1
    per_mode_accepted: dict[str, int] = {}
    per_style_accepted: dict[str, int] = {}
    for pair in outcome.accepted:
        per_mode_accepted[pair.provenance.mode] = per_mode_accepted.get(pair.provenance.mode, 0) + 1
        per_style_accepted[pair.style] = per_style_accepted.get(pair.style, 0) + 1
    content_hash = hashlib.sha256(paths["augmented"].read_bytes()).hexdigest()
    return {
        "schema": REPORT_SCHEMA,
        "config": config.echo(),
        "head_layer": head_layer,
        "counts": {
            "stylized": stylized_count,
            "factual": factual_count,
            "annotated": annotated_count,
            "skipped_short": skipped_short,
            "candidates": len(candidates),
            "generated_per_mode": per_mode_generated,
            "accepted": len(outcome.accepted),
            "accepted_per_mode": per_mode_accepted,
            "accepted_per_style": per_style_accepted,
            "deduped": outcome.deduped,
            "rejected": len(outcome.rejected),
            "rejected_per_reason": dict(sorted(outcome.reason_counts.items())),
            "unevaluated": len(outcome.unevaluated),
        },
        "timings_s": {k: round(v, 3) for k, v in timings.items()},
        "outputs": {k: str(v) for k, v in paths.items() if k != "lm_dir"},
        "content_hash": f"sha256:{content_hash}",
    }


# ---------------------------------------------------------------------------
# Statistics over an augmented corpus


def _histogram(values, edges) -> dict[str, int]:
    # Final regular bin is right-inclusive so an exact top edge (sim = 1.0)
    # does not spill into the overflow bucket.
    counts = {f"[{edges[i]}, {edges[i + 1]})": 0 for i in range(len(edges) - 1)}
    overflow_key = f"> {edges[-1]}"
    counts[overflow_key] = 0
    for value in values:
        placed = False
        for i in range(len(edges) - 1):
            upper_ok = value < edges[i + 1] or (i == len(edges) - 2 and value == edges[i + 1])
            if edges[i] <= value and upper_ok:
                counts[f"[{edges[i]}, {edges[i + 1]})"] += 1
                placed = True
                break
        if not placed:
            counts[overflow_key] += 1
    return counts


def stats(augmented: Sequence) -> dict:
    """Per-mode/per-style counts plus similarity and perplexity histograms."""
    per_mode: dict[str, int] = {}
    per_style: dict[str, int] = {}
    sims, ppls = [], []
    for pair in augmented:
        per_mode[pair.provenance.mode] = per_mode.get(pair.provenance.mode, 0) + 1
        per_style[pair.style] = per_style.get(pair.style, 0) + 1
        sims.append(pair.provenance.similarity)
        ppls.append(pair.provenance.ppl)
    return {
        "total": len(augmented),
        "per_mode": dict(sorted(per_mode.items())),
        "per_style": dict(sorted(per_style.items())),
        "similarity_histogram": _histogram(sims, SIM_HIST_EDGES),
        "perplexity_histogram": _histogram(ppls, PPL_HIST_EDGES),
    }
