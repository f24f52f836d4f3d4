"""Experiment specs, multi-seed runs, and the canned recipes.

An experiment is described by an INI file with these sections (all optional
except where a recipe needs them):

``[experiment]``
    ``name``, ``recipe`` (single | kappa_ablation | scaling | transfer_demo),
    ``method``, ``seeds`` (comma list), ``out``, ``checkpoint`` (an original
    model to load instead of pretraining), ``corpus_seed``.
``[corpus]``
    ``path`` to a corpus directory, or any :class:`SynthSpec` field.
``[model]``, ``[pretrain]``, ``[unlearn]``
    Fields of :class:`ModelConfig` (``vocab_size`` comes from the corpus),
    :class:`PretrainConfig` and :class:`UnlearnConfig`.
``[kappa_ablation]``
    ``kappas`` (comma list of fixed values).
``[scaling]``
    ``multipliers`` (comma list) and ``chunk_size``.

Results land in ``<out>/<name>/<seed>/{history.jsonl, report.csv, checkpoint}``
and ``<out>/<name>/summary.{csv,md}``.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
import types
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .baselines import ga_kl, grad_ascent_plus, neg_task_vector_plus
from .corpus import ParallelCorpus, SynthSpec, generate_synthetic_corpus, load_parallel_corpus
from .errors import CheckpointError, ConfigError
from .metrics import EvalReport, evaluate, to_markdown, write_csv
from .model import ModelConfig, ModelParams, load_checkpoint, save_checkpoint
from .trainer import (
    PretrainConfig,
    RunHistory,
    UnlearnConfig,
    oracle_unlearn,
    pretrain,
    sequential_unlearn,
    unlearn,
)

log = logging.getLogger(__name__)

RECIPES = ("single", "kappa_ablation", "scaling", "transfer_demo")
METHODS = ("lingtea", "grad_ascent_plus", "neg_task_vector_plus", "ga_kl", "oracle")
METHOD_LABELS = {"lingtea": "LingTea", "grad_ascent_plus": "GradAscent+", "neg_task_vector_plus": "NegTaskVector+",
                 "ga_kl": "GA+KL", "oracle": "Oracle"}
DEFAULT_SEEDS = (0, 1, 2)
DEFAULT_KAPPAS = (0.0, 0.25, 0.5, 0.75, 1.0)
DEFAULT_MULTIPLIERS = (1, 2, 4)


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    recipe: str = "single"
    method: str = "lingtea"
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    out: str = "out"
    checkpoint: str | None = None
    corpus_path: str | None = None
    corpus_seed: int = 0
    synth: SynthSpec = field(default_factory=SynthSpec)
    model: dict = field(default_factory=dict)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    unlearn: UnlearnConfig = field(default_factory=UnlearnConfig)
    kappas: tuple[float, ...] = DEFAULT_KAPPAS
    multipliers: tuple[int, ...] = DEFAULT_MULTIPLIERS
    chunk_size: int = 32

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("experiment.seeds must list at least one seed")
        if self.recipe not in RECIPES:
            raise ConfigError(f"experiment.recipe must be one of {RECIPES}, got {self.recipe!r}")
        if self.method not in METHODS:
            raise ConfigError(f"experiment.method must be one of {METHODS}, got {self.method!r}")
        if self.recipe == "kappa_ablation" and not self.kappas:
            raise ConfigError("kappa_ablation.kappas must list at least one value")
        if self.recipe == "scaling":
            if not self.multipliers or min(self.multipliers) < 1:
                raise ConfigError("scaling.multipliers must be positive integers")
            if self.chunk_size < 1:
                raise ConfigError("scaling.chunk_size must be positive")
        derived = {"vocab_size", "seed"}
        bad = (set(self.model) - {f.name for f in fields(ModelConfig)}) | (derived & set(self.model))
        if bad:
            raise ConfigError(f"unknown or derived model field {sorted(bad)[0]!r}")

    @property
    def directory(self) -> Path:
        return Path(self.out) / self.name


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def _split_list(raw: str) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()]


def _convert(raw: str, hint, where: str):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    try:
        if origin in (typing.Union, types.UnionType):
            if raw.lower() in ("none", "") and type(None) in args:
                return None
            for t in (int, float, str):
                if t in args:
                    try:
                        return t(raw)
                    except ValueError:
                        continue
            raise ValueError(raw)
        if origin is tuple:
            item = args[0] if args else str
            return tuple(item(x) for x in _split_list(raw))
        if origin is dict:
            return {k.strip(): float(v) for k, v in (p.split(":") for p in _split_list(raw))}
        if hint is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return hint(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None


def _section_kwargs(parser: configparser.ConfigParser, section: str, cls, skip=()) -> dict:
    if not parser.has_section(section):
        return {}
    hints = typing.get_type_hints(cls)
    out = {}
    for key, raw in parser[section].items():
        if key in skip:
            continue
        if key not in hints:
            raise ConfigError(f"unknown field {section}.{key}")
        out[key] = _convert(raw, hints[key], f"{section}.{key}")
    return out


def parse_spec(text: str, overrides: dict[str, str] | None = None) -> ExperimentSpec:
    """Build a spec from INI text; ``overrides`` maps ``section.key`` to raw values."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for dotted, raw in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser[section][key] = str(raw)
    known = {"experiment", "corpus", "model", "pretrain", "unlearn", "kappa_ablation", "scaling"}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")

    exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    kw = {}
    hints = typing.get_type_hints(ExperimentSpec)
    for key, raw in exp.items():
        if key not in ("name", "recipe", "method", "seeds", "out", "checkpoint", "corpus_seed"):
            raise ConfigError(f"unknown field experiment.{key}")
        kw[key] = _convert(raw, hints[key], f"experiment.{key}")
    if parser.has_section("corpus") and "path" in parser["corpus"]:
        kw["corpus_path"] = parser["corpus"]["path"].strip()
    synth = _section_kwargs(parser, "corpus", SynthSpec, skip=("path",))
    kw["synth"] = SynthSpec(**synth)
    kw["model"] = _section_kwargs(parser, "model", ModelConfig)
    kw["pretrain"] = PretrainConfig(**_section_kwargs(parser, "pretrain", PretrainConfig))
    kw["unlearn"] = UnlearnConfig(**_section_kwargs(parser, "unlearn", UnlearnConfig))
    if parser.has_section("kappa_ablation"):
        for key, raw in parser["kappa_ablation"].items():
            if key != "kappas":
                raise ConfigError(f"unknown field kappa_ablation.{key}")
            kw["kappas"] = _convert(raw, tuple[float, ...], "kappa_ablation.kappas")
    if parser.has_section("scaling"):
        for key, raw in parser["scaling"].items():
            if key not in ("multipliers", "chunk_size"):
                raise ConfigError(f"unknown field scaling.{key}")
            kw[key] = _convert(raw, hints[key], f"scaling.{key}")
    return ExperimentSpec(**kw)


def load_spec(path, overrides: dict[str, str] | None = None) -> ExperimentSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_spec(path.read_text(encoding="utf-8"), overrides)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def build_corpus(spec: ExperimentSpec) -> ParallelCorpus:
    if spec.corpus_path:
        return load_parallel_corpus(spec.corpus_path)
    return generate_synthetic_corpus(spec.synth, seed=spec.corpus_seed)


def model_config(spec: ExperimentSpec, corpus: ParallelCorpus, seed: int) -> ModelConfig:
    longest = max(len(s.tokens) for split in corpus.splits.values() for seqs in split.values() for s in seqs)
    kw = {"max_seq_len": max(64, longest), **spec.model}
    return ModelConfig(vocab_size=corpus.vocab_size, seed=seed, **kw)


def _cache_key(spec: ExperimentSpec, mcfg: ModelConfig) -> str:
    blob = json.dumps({"corpus": spec.corpus_path or asdict(spec.synth), "corpus_seed": spec.corpus_seed,
                       "model": asdict(mcfg), "pretrain": asdict(spec.pretrain)}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def original_model(spec: ExperimentSpec, corpus: ParallelCorpus, seed: int) -> ModelParams:
    """Load ``spec.checkpoint`` or pretrain for ``seed`` (cached under the output directory)."""
    mcfg = model_config(spec, corpus, seed)
    if spec.checkpoint:
        params = load_checkpoint(spec.checkpoint)
        if params.config.vocab_size != corpus.vocab_size:
            raise CheckpointError(f"checkpoint vocabulary {params.config.vocab_size} does not match "
                                  f"corpus vocabulary {corpus.vocab_size}")
        return params
    cache = spec.directory / "originals" / f"original-{seed}-{_cache_key(spec, mcfg)}.ckpt"
    if cache.exists():
        return load_checkpoint(cache, expected=mcfg)
    params, _ = pretrain(ModelParams.init(mcfg), corpus, replace(spec.pretrain, seed=seed))
    cache.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, cache)
    return params


def apply_method(method: str, original: ModelParams, corpus: ParallelCorpus, config: UnlearnConfig
                 ) -> tuple[ModelParams, RunHistory]:
    teacher = original.frozen()
    if method == "lingtea":
        return unlearn(original, teacher, corpus, config)
    if method == "grad_ascent_plus":
        return grad_ascent_plus(original, corpus, config)
    if method == "ga_kl":
        return ga_kl(original, teacher, corpus, config)
    if method == "oracle":
        return oracle_unlearn(original, teacher, corpus, config)
    if method == "neg_task_vector_plus":
        params, _ = neg_task_vector_plus(teacher, corpus, config)
        return params, RunHistory()
    raise ConfigError(f"unknown method {method!r}")


def _evaluate(params, corpus, label, seed, splits=("forget", "test")) -> EvalReport:
    facts = bool(corpus.cloze)
    return evaluate(params, corpus, splits=splits, facts=facts, method=label, seed=seed)


# ---------------------------------------------------------------------------
# recipes (one seed each)
# ---------------------------------------------------------------------------

def _single(spec, corpus, original, seed, seed_dir):
    cfg = replace(spec.unlearn, seed=seed)
    params, history = apply_method(spec.method, original, corpus, cfg)
    history.write_jsonl(seed_dir / "history.jsonl")
    save_checkpoint(params, seed_dir / "checkpoint")
    return [_evaluate(original, corpus, "Original", seed), _evaluate(params, corpus, METHOD_LABELS[spec.method], seed)]


def _kappa_ablation(spec, corpus, original, seed, seed_dir):
    teacher = original.frozen()
    reports = [_evaluate(original, corpus, "Original", seed)]
    histories = RunHistory()
    for kappa in ("adaptive", *spec.kappas):
        label = "adaptive" if kappa == "adaptive" else f"kappa={kappa:g}"
        params, history = unlearn(original, teacher, corpus, replace(spec.unlearn, seed=seed, kappa=kappa))
        histories.extend(history, stage=label)
        reports.append(_evaluate(params, corpus, label, seed))
        if kappa == "adaptive":
            save_checkpoint(params, seed_dir / "checkpoint")
    histories.write_jsonl(seed_dir / "history.jsonl")
    return reports


def _scaling(spec, corpus, original, seed, seed_dir):
    teacher = original.frozen()
    ids = corpus.item_ids("forget")
    need = max(spec.multipliers) * spec.chunk_size
    if need > len(ids):
        raise ConfigError(f"scaling needs {need} forget items but the corpus has {len(ids)}")
    cfg = replace(spec.unlearn, seed=seed)
    reports, histories = [], RunHistory()
    for m in spec.multipliers:
        chunks = [ids[i * spec.chunk_size:(i + 1) * spec.chunk_size] for i in range(m)]
        sub = corpus.restrict("forget", [i for c in chunks for i in c])
        reports.append(_evaluate(original, sub, f"Original x{m}", seed))
        batch, hb = unlearn(original, teacher, sub, cfg)
        histories.extend(hb, stage=f"batch x{m}")
        reports.append(_evaluate(batch, sub, f"Batch x{m}", seed))
        seq, hs = sequential_unlearn(original, teacher, sub, chunks, cfg)
        histories.extend(hs, stage=f"sequential x{m}")
        reports.append(_evaluate(seq, sub, f"Sequential x{m}", seed))
    histories.write_jsonl(seed_dir / "history.jsonl")
    return reports


def _transfer_demo(spec, corpus, original, seed, seed_dir):
    teacher = original.frozen()
    pivot = corpus.languages[0]
    cfg = replace(spec.unlearn, seed=seed)
    ga, hg = unlearn(original, teacher, corpus, replace(cfg, lam=0.0, language_sampling="fixed",
                                                        fixed_language=pivot))
    lt, hl = unlearn(original, teacher, corpus, cfg)
    histories = RunHistory()
    histories.extend(hg, stage=f"ga-{pivot}")
    histories.extend(hl, stage="lingtea")
    histories.write_jsonl(seed_dir / "history.jsonl")
    save_checkpoint(lt, seed_dir / "checkpoint")
    return [_evaluate(original, corpus, "Original", seed), _evaluate(ga, corpus, f"GA ({pivot} only)", seed),
            _evaluate(lt, corpus, "LingTea", seed)]


RECIPE_FUNCS = {"single": _single, "kappa_ablation": _kappa_ablation, "scaling": _scaling,
                "transfer_demo": _transfer_demo}


def run_seed(spec: ExperimentSpec, seed: int) -> list[EvalReport]:
    """Run ``spec.recipe`` for one seed and write its per-seed outputs."""
    corpus = build_corpus(spec)
    original = original_model(spec, corpus, seed)
    seed_dir = spec.directory / str(seed)
    seed_dir.mkdir(parents=True, exist_ok=True)
    reports = RECIPE_FUNCS[spec.recipe](spec, corpus, original, seed, seed_dir)
    (seed_dir / "report.csv").write_text(write_csv(reports), encoding="utf-8")
    return reports


def worker_count(n_jobs: int) -> int:
    raw = os.environ.get("UNLEARN_THREADS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"UNLEARN_THREADS must be an integer, got {raw!r}") from None
    if cap < 1:
        raise ConfigError(f"UNLEARN_THREADS must be positive, got {cap}")
    return min(cap, n_jobs)


def average_reports(per_seed: list[list[EvalReport]]) -> list[EvalReport]:
    """Seed-average rows that share a method label, keeping first-seed row order."""
    labels = [r.method for r in per_seed[0]]
    return [EvalReport.average([next(r for r in reports if r.method == label) for reports in per_seed])
            for label in labels]


def run_experiment(spec: ExperimentSpec) -> list[EvalReport]:
    """Run every seed (in up to ``UNLEARN_THREADS`` processes) and write the summary."""
    spec.directory.mkdir(parents=True, exist_ok=True)
    workers = worker_count(len(spec.seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(run_seed, [spec] * len(spec.seeds), spec.seeds))
    else:
        per_seed = [run_seed(spec, s) for s in spec.seeds]
    summary = average_reports(per_seed)
    (spec.directory / "summary.csv").write_text(write_csv(summary), encoding="utf-8")
    (spec.directory / "summary.md").write_text(to_markdown(summary), encoding="utf-8")
    return summary
