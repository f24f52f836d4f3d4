"""Parallel multilingual corpora: ingestion, synthetic generation, sampling.

On-disk layout (what :func:`load_parallel_corpus` reads and
:func:`write_parallel_corpus` writes)::

    corpus.ini              manifest, key=value lines grouped in sections
    forget.<lang>.jsonl     {"item_id": 3, "text": "..."} or {"item_id": 3, "tokens": [...]}
    retain.<lang>.jsonl
    validation.<lang>.jsonl
    test.<lang>.jsonl
    pretrain.<lang>.jsonl   optional, not aligned across languages
    cloze_<split>.<lang>.jsonl  optional; adds "answer" and "candidates"

Manifest example::

    [corpus]
    name = demo
    languages = en, fr, sw
    vocab_size = 300            ; required only for token records

    [resource]
    en = high
    fr = high
    sw = low

    [files]
    forget = forget.{lang}.jsonl
    retain = retain.{lang}.jsonl
    validation = validation.{lang}.jsonl
    test = test.{lang}.jsonl

    [sizes]
    forget = 32
    retain = 128
"""

from __future__ import annotations

import configparser
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AlignmentError,
    CapacityError,
    ClozeError,
    DisjointnessError,
    ManifestError,
    MissingLanguageError,
    VocabularyError,
)

ALIGNED_SPLITS = ("forget", "retain", "validation", "test")
RESOURCE_LEVELS = ("high", "mid", "low")
PAD, UNK = 0, 1
MASK = "[MASK]"
SLOT = -1


@dataclass(frozen=True)
class Sequence:
    item_id: int
    lang: str
    tokens: tuple[int, ...]
    text: str | None = None

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class ClozeFact:
    """A prompt with one answer slot (``SLOT``) and candidate fillers."""
    item_id: int
    lang: str
    prompt: tuple[int, ...]
    answer: tuple[int, ...]
    candidates: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.prompt.count(SLOT) != 1:
            raise ClozeError(f"cloze item {self.item_id} ({self.lang}): prompt needs exactly one slot")
        if len(self.candidates) < 2:
            raise ClozeError(f"cloze item {self.item_id} ({self.lang}): needs at least 2 candidates")
        if self.answer not in self.candidates:
            raise ClozeError(f"cloze item {self.item_id} ({self.lang}): gold answer not among candidates")

    def fill(self, candidate: tuple[int, ...]) -> tuple[int, ...]:
        i = self.prompt.index(SLOT)
        return self.prompt[:i] + tuple(candidate) + self.prompt[i + 1:]


def language_group(lang: str, level: str) -> str:
    """Reporting group: the English-analogue stands alone, the rest by resource level."""
    return "en" if lang == "en" else f"{level}-src"


@dataclass
class ParallelCorpus:
    languages: list[str]
    resource_level: dict[str, str]
    splits: dict[str, dict[str, list[Sequence]]]
    vocab_size: int
    sizes: dict[str, int] = field(default_factory=dict)
    cloze: dict[str, dict[str, list[ClozeFact]]] = field(default_factory=dict)
    name: str = "corpus"
    tokenizer: WhitespaceTokenizer | None = field(default=None, compare=False, repr=False)
    synthetic: "SyntheticLanguages | None" = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        self.validate()

    # -- invariants ----------------------------------------------------------
    def validate(self) -> None:
        for lang in self.languages:
            if self.resource_level.get(lang) not in RESOURCE_LEVELS:
                raise ManifestError(f"language {lang!r} needs a resource level in {RESOURCE_LEVELS}")
        for split, by_lang in self.splits.items():
            for lang in self.languages:
                if lang not in by_lang:
                    raise MissingLanguageError(f"split {split!r} has no data for language {lang!r}")
            for lang, seqs in by_lang.items():
                for s in seqs:
                    if not s.tokens:
                        raise VocabularyError(f"item {s.item_id} ({lang}, {split}) is empty")
                    if min(s.tokens) < 0 or max(s.tokens) >= self.vocab_size:
                        raise VocabularyError(
                            f"item {s.item_id} ({lang}, {split}) has a token outside [0, {self.vocab_size})")
            if split in ALIGNED_SPLITS:
                _check_alignment(split, {z: by_lang[z] for z in self.languages})
            if split in self.sizes:
                for lang in self.languages:
                    if len(by_lang[lang]) != self.sizes[split]:
                        raise ManifestError(f"split {split!r} ({lang}) has {len(by_lang[lang])} items, "
                                            f"manifest declares {self.sizes[split]}")
        if "forget" in self.splits and "retain" in self.splits:
            lang = self.languages[0]
            overlap = ({s.item_id for s in self.splits["forget"][lang]}
                       & {s.item_id for s in self.splits["retain"][lang]})
            if overlap:
                bad = min(overlap)
                raise DisjointnessError(f"item_id {bad} appears in both forget and retain", item_id=bad)
        for split, by_lang in self.cloze.items():
            _check_alignment(f"cloze_{split}", {z: by_lang[z] for z in self.languages if z in by_lang})

    # -- accessors -------------------------------------------------------------
    def split(self, name: str, lang: str) -> list[Sequence]:
        return self.splits[name][lang]

    def group(self, lang: str) -> str:
        return language_group(lang, self.resource_level[lang])

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for lang in self.languages:
            out.setdefault(self.group(lang), []).append(lang)
        return out

    def restrict(self, split: str, item_ids) -> "ParallelCorpus":
        """Copy with ``split`` limited to ``item_ids`` in every language."""
        keep = set(item_ids)
        splits = dict(self.splits)
        splits[split] = {z: [s for s in seqs if s.item_id in keep] for z, seqs in self.splits[split].items()}
        sizes = {k: v for k, v in self.sizes.items() if k != split}
        return ParallelCorpus(list(self.languages), dict(self.resource_level), splits, self.vocab_size,
                              sizes, self.cloze, self.name, self.tokenizer, self.synthetic)

    def select_languages(self, languages) -> "ParallelCorpus":
        """Copy keeping only ``languages`` (ids and vocabulary unchanged)."""
        langs = list(languages)
        missing = [z for z in langs if z not in self.languages]
        if missing or not langs:
            raise MissingLanguageError(f"cannot select languages {missing or langs!r}")
        splits = {k: {z: v[z] for z in langs} for k, v in self.splits.items()}
        cloze = {k: {z: v[z] for z in langs if z in v} for k, v in self.cloze.items()}
        return ParallelCorpus(langs, {z: self.resource_level[z] for z in langs}, splits, self.vocab_size,
                              dict(self.sizes), cloze, self.name, self.tokenizer, self.synthetic)

    def item_ids(self, split: str) -> list[int]:
        return [s.item_id for s in self.splits[split][self.languages[0]]]


def _check_alignment(split: str, by_lang: dict[str, list]) -> None:
    counts = {z: Counter(s.item_id for s in seqs) for z, seqs in by_lang.items()}
    langs = list(counts)
    if not langs:
        return
    ref_lang = langs[0]
    for z in langs[1:]:
        if counts[z] == counts[ref_lang]:
            continue
        diff = (counts[ref_lang] - counts[z]) + (counts[z] - counts[ref_lang])
        bad = min(diff)
        where, absent = (ref_lang, z) if counts[ref_lang][bad] > counts[z][bad] else (z, ref_lang)
        raise AlignmentError(f"split {split!r}: item_id {bad} present in {where!r} but missing "
                             f"(or duplicated) in {absent!r}", item_id=bad)


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------

class WhitespaceTokenizer:
    """Word-level vocabulary with UTF-8 byte fallback for unseen words.

    Ids: 0 = pad, 1 = unk, 2..257 = bytes, then words ordered by descending
    frequency and then lexicographically, so fitting is deterministic.
    """

    BYTE_OFFSET = 2

    def __init__(self, words: list[str] | None = None):
        self.words = list(words or [])
        self.index = {w: i + self.BYTE_OFFSET + 256 for i, w in enumerate(self.words)}

    @classmethod
    def fit(cls, texts, max_words: int | None = None) -> "WhitespaceTokenizer":
        counts = Counter(w for t in texts for w in t.split())
        ranked = sorted(counts, key=lambda w: (-counts[w], w))
        return cls(ranked[:max_words] if max_words is not None else ranked)

    @property
    def vocab_size(self) -> int:
        return self.BYTE_OFFSET + 256 + len(self.words)

    def encode(self, text: str) -> tuple[int, ...]:
        out: list[int] = []
        for w in text.split():
            if w in self.index:
                out.append(self.index[w])
            else:
                # unknown words spell out their bytes plus a trailing space
                out.extend(self.BYTE_OFFSET + b for b in (w + " ").encode("utf-8"))
        return tuple(out)

    def decode(self, tokens) -> str:
        words, pending = [], bytearray()
        for t in tokens:
            if self.BYTE_OFFSET <= t < self.BYTE_OFFSET + 256:
                pending.append(t - self.BYTE_OFFSET)
                continue
            if pending:
                words.extend(pending.decode("utf-8", errors="replace").split())
                pending = bytearray()
            words.append(self.words[t - self.BYTE_OFFSET - 256] if t >= self.BYTE_OFFSET + 256 else "<unk>")
        if pending:
            words.extend(pending.decode("utf-8", errors="replace").split())
        return " ".join(words)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def _read_jsonl(path: Path) -> list[dict]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path.name}:{lineno}: invalid JSON ({exc.msg})") from exc
            if "item_id" not in rec or ("text" not in rec and "tokens" not in rec):
                raise ManifestError(f"{path.name}:{lineno}: record needs item_id and text or tokens")
            records.append(rec)
    return records


def _read_manifest(path: Path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not path.exists():
        raise ManifestError(f"manifest {path} not found")
    parser.read(path, encoding="utf-8")
    for section in ("corpus", "resource", "files"):
        if not parser.has_section(section):
            raise ManifestError(f"manifest {path.name} lacks a [{section}] section")
    return parser


def load_parallel_corpus(path, tokenizer: WhitespaceTokenizer | None = None) -> ParallelCorpus:
    """Load a corpus directory (or its manifest file) and validate it.

    Text records are tokenized with ``tokenizer``; when none is given one is
    fitted on every text in the aligned splits.
    """
    path = Path(path)
    manifest_path = path / "corpus.ini" if path.is_dir() else path
    root = manifest_path.parent
    m = _read_manifest(manifest_path)
    languages = [z.strip() for z in m["corpus"].get("languages", "").split(",") if z.strip()]
    if not languages:
        raise ManifestError("manifest lists no languages")
    resource = {z: m["resource"].get(z, "").strip() for z in languages}
    files = dict(m["files"])
    sizes = {k: int(v) for k, v in m["sizes"].items()} if m.has_section("sizes") else {}

    raw: dict[str, dict[str, list[dict]]] = {}
    for split, pattern in files.items():
        optional = split == "pretrain" or split.startswith("cloze_")
        raw[split] = {}
        for z in languages:
            fp = root / pattern.format(lang=z)
            if not fp.exists():
                if optional:
                    continue
                raise MissingLanguageError(f"missing file {fp.name} for language {z!r} (split {split!r})")
            raw[split][z] = _read_jsonl(fp)

    has_text = any("text" in r for by in raw.values() for recs in by.values() for r in recs)
    if has_text and tokenizer is None:
        tokenizer = WhitespaceTokenizer.fit(
            r["text"].replace(MASK, " ") for s in ALIGNED_SPLITS + ("pretrain",) for recs in raw.get(s, {}).values()
            for r in recs if "text" in r)
    if tokenizer is not None:
        vocab_size = max(tokenizer.vocab_size, int(m["corpus"].get("vocab_size", 0)))
    elif "vocab_size" in m["corpus"]:
        vocab_size = int(m["corpus"]["vocab_size"])
    else:
        raise ManifestError("token records need [corpus] vocab_size")

    def encode(rec):
        return tuple(int(t) for t in rec["tokens"]) if "tokens" in rec else tokenizer.encode(rec["text"])

    splits, cloze = {}, {}
    for split, by_lang in raw.items():
        if split.startswith("cloze_"):
            cloze[split[len("cloze_"):]] = {
                z: [_cloze_from_record(r, z, tokenizer) for r in recs] for z, recs in by_lang.items()}
        else:
            splits[split] = {z: [Sequence(int(r["item_id"]), z, encode(r), r.get("text")) for r in recs]
                             for z, recs in by_lang.items()}
    for split in ALIGNED_SPLITS:
        if split not in splits:
            raise ManifestError(f"manifest [files] lacks the {split!r} split")
    return ParallelCorpus(languages, resource, splits, vocab_size, sizes, cloze,
                          m["corpus"].get("name", root.name), tokenizer)


def _cloze_from_record(rec: dict, lang: str, tokenizer) -> ClozeFact:
    item = int(rec["item_id"])
    if "answer" not in rec or "candidates" not in rec:
        raise ClozeError(f"cloze item {item} ({lang}) lacks answer/candidates")
    if "tokens" in rec:
        prompt = tuple(int(t) for t in rec["tokens"])
        as_span = lambda a: tuple(int(t) for t in (a if isinstance(a, list) else [a]))  # noqa: E731
    else:
        text = rec["text"]
        if text.count(MASK) != 1:
            raise ClozeError(f"cloze item {item} ({lang}): text needs exactly one {MASK}")
        left, right = text.split(MASK)
        prompt = tokenizer.encode(left) + (SLOT,) + tokenizer.encode(right)
        as_span = tokenizer.encode
    return ClozeFact(item, lang, prompt, as_span(rec["answer"]),
                     tuple(as_span(c) for c in rec["candidates"]))


def write_parallel_corpus(corpus: ParallelCorpus, out_dir) -> Path:
    """Write ``corpus`` in the on-disk layout above (token records)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = configparser.ConfigParser()
    m["corpus"] = {"name": corpus.name, "languages": ", ".join(corpus.languages),
                   "vocab_size": str(corpus.vocab_size)}
    m["resource"] = dict(corpus.resource_level)
    m["files"] = {}
    for split, by_lang in corpus.splits.items():
        m["files"][split] = f"{split}.{{lang}}.jsonl"
        for z, seqs in by_lang.items():
            with (out / f"{split}.{z}.jsonl").open("w", encoding="utf-8") as fh:
                for s in seqs:
                    fh.write(json.dumps({"item_id": s.item_id, "tokens": list(s.tokens)}) + "\n")
    for split, by_lang in corpus.cloze.items():
        m["files"][f"cloze_{split}"] = f"cloze_{split}.{{lang}}.jsonl"
        for z, facts in by_lang.items():
            with (out / f"cloze_{split}.{z}.jsonl").open("w", encoding="utf-8") as fh:
                for f in facts:
                    fh.write(json.dumps({"item_id": f.item_id, "tokens": list(f.prompt),
                                         "answer": list(f.answer),
                                         "candidates": [list(c) for c in f.candidates]}) + "\n")
    if corpus.sizes:
        m["sizes"] = {k: str(v) for k, v in corpus.sizes.items()}
    with (out / "corpus.ini").open("w", encoding="utf-8") as fh:
        m.write(fh)
    return out


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

@dataclass
class SynthSpec:
    """Knobs of the synthetic generator.

    The first language is the pivot (named ``en``); every other language is a
    fixed random permutation of the pivot's content tokens in its own id
    block, with its own BOS/EOS function tokens.
    """
    n_languages: int = 4
    resource_levels: tuple[str, ...] = ("high", "high", "high", "low")
    content_vocab: int = 120
    branching: int = 6
    min_len: int = 10
    max_len: int = 16
    forget_size: int = 32
    retain_size: int = 128
    validation_size: int = 32
    test_size: int = 64
    pretrain_en: int = 400
    pretrain_ratio: dict[str, float] = field(
        default_factory=lambda: {"high": 0.5, "mid": 0.25, "low": 0.05})
    pool_size: int | None = None
    cloze_candidates: int = 4
    names: tuple[str, ...] | None = None
    forget_style: str = "grammar"

    N_FUNCTION = 2  # BOS, EOS

    def language_names(self) -> list[str]:
        if self.names:
            return list(self.names)
        counters = Counter()
        names = ["en"]
        for level in self.resource_levels[1:]:
            counters[level] += 1
            names.append(f"{level[0]}{counters[level]}")
        return names

    def pretrain_sizes(self) -> dict[str, int]:
        names = self.language_names()
        out = {names[0]: self.pretrain_en}
        for z, level in zip(names[1:], self.resource_levels[1:]):
            out[z] = int(round(self.pretrain_en * self.pretrain_ratio[level]))
        return out

    @property
    def vocab_size(self) -> int:
        return 2 + self.n_languages * (self.content_vocab + self.N_FUNCTION)

    def split_sizes(self) -> dict[str, int]:
        return {"forget": self.forget_size, "retain": self.retain_size,
                "validation": self.validation_size, "test": self.test_size}


class SyntheticLanguages:
    """Token maps between the pivot vocabulary and each language's id block."""

    def __init__(self, spec: SynthSpec, rng: np.random.Generator):
        self.spec = spec
        self.names = spec.language_names()
        C, F = spec.content_vocab, spec.N_FUNCTION
        self.offset = {z: 2 + i * (C + F) for i, z in enumerate(self.names)}
        self.perm = {z: (np.arange(C) if i == 0 else rng.permutation(C)) for i, z in enumerate(self.names)}
        self.inverse = {z: np.argsort(p) for z, p in self.perm.items()}

    def bos(self, z: str) -> int:
        return self.offset[z] + self.spec.content_vocab

    def eos(self, z: str) -> int:
        return self.offset[z] + self.spec.content_vocab + 1

    def encode(self, z: str, pivot: np.ndarray) -> tuple[int, ...]:
        body = (self.offset[z] + self.perm[z][pivot]).tolist()
        return (self.bos(z), *body, self.eos(z))

    def to_pivot(self, z: str, tokens) -> list[int]:
        """Inverse map of content tokens back to pivot ids (function tokens dropped)."""
        C = self.spec.content_vocab
        out = []
        for t in tokens:
            local = t - self.offset[z]
            if 0 <= local < C:
                out.append(int(self.inverse[z][local]))
        return out


def _markov_grammar(spec: SynthSpec, rng: np.random.Generator):
    C, K = spec.content_vocab, spec.branching
    start = rng.dirichlet(np.ones(C))
    succ = np.stack([rng.choice(C, size=K, replace=False) for _ in range(C)])
    weights = rng.dirichlet(np.ones(K), size=C)
    return start, succ, weights


def generate_synthetic_corpus(spec: SynthSpec | None = None, seed: int = 0) -> ParallelCorpus:
    """Build a parallel corpus from a random sparse Markov grammar.

    Pivot sentences are unique content-token sequences; every language
    renders the same pivot sentence through its own bijective relabeling,
    so all aligned splits are exactly parallel. The ``pretrain`` split gives
    each language a share of extra sentences set by its resource level.
    With ``forget_style="uniform"`` the forget items ignore the grammar and
    draw content tokens uniformly, so they can only be memorized verbatim.
    """
    spec = spec or SynthSpec()
    if len(spec.resource_levels) != spec.n_languages:
        raise ManifestError("resource_levels must list one level per language")
    if spec.forget_style not in ("grammar", "uniform"):
        raise ManifestError(f"forget_style must be 'grammar' or 'uniform', got {spec.forget_style!r}")
    rng = np.random.default_rng(seed)
    langs = SyntheticLanguages(spec, rng)
    names = langs.names
    sizes = spec.split_sizes()
    pre_sizes = spec.pretrain_sizes()
    needed = sum(sizes.values()) + max(pre_sizes.values())
    pool_size = spec.pool_size if spec.pool_size is not None else needed
    if needed > pool_size:
        raise CapacityError(f"splits need {needed} distinct sentences but the pool holds {pool_size}")

    start, succ, weights = _markov_grammar(spec, rng)
    pool: list[np.ndarray] = []
    seen: set[tuple[int, ...]] = set()
    attempts = 0
    while len(pool) < pool_size:
        attempts += 1
        if attempts > 50 * pool_size:
            raise CapacityError("grammar too small to produce enough distinct sentences")
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        sent = np.empty(n, dtype=np.int64)
        sent[0] = rng.choice(spec.content_vocab, p=start)
        for i in range(1, n):
            sent[i] = succ[sent[i - 1], rng.choice(spec.branching, p=weights[sent[i - 1]])]
        key = tuple(sent.tolist())
        if key not in seen:
            seen.add(key)
            pool.append(sent)

    order = rng.permutation(pool_size)
    ranges, cursor = {}, 0
    for split, n in sizes.items():
        ranges[split] = order[cursor:cursor + n]
        cursor += n
    pretrain_ids = order[cursor:cursor + max(pre_sizes.values())]
    if spec.forget_style == "uniform":
        # canary-like forget items: content tokens drawn uniformly, off the grammar
        for i in ranges["forget"]:
            pool[i] = rng.integers(0, spec.content_vocab, size=len(pool[i]))

    splits: dict[str, dict[str, list[Sequence]]] = {}
    for split, ids in list(ranges.items()) + [("pretrain", pretrain_ids)]:
        splits[split] = {}
        for z in names:
            use = ids[:pre_sizes[z]] if split == "pretrain" else ids
            splits[split][z] = [Sequence(int(i), z, langs.encode(z, pool[i])) for i in use]

    cloze = {}
    for split in ("forget", "test"):
        cloze[split] = {z: [] for z in names}
        for i in ranges[split]:
            body = pool[i]
            slot = len(body) - 1
            distract = rng.choice(np.setdiff1d(np.arange(spec.content_vocab), [body[slot]]),
                                  size=spec.cloze_candidates - 1, replace=False)
            cand_pivots = [int(body[slot])] + [int(d) for d in distract]
            for z in names:
                toks = list(langs.encode(z, body))
                gold = toks[slot + 1]
                toks[slot + 1] = SLOT
                cands = tuple((int(langs.offset[z] + langs.perm[z][c]),) for c in cand_pivots)
                cloze[split][z].append(ClozeFact(int(i), z, tuple(toks), (gold,), cands))

    return ParallelCorpus(names, dict(zip(names, spec.resource_levels)), splits, spec.vocab_size,
                          dict(sizes), cloze, name=f"synthetic-{seed}", synthetic=langs)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def pad_batch(seqs: list[Sequence]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad token lists into ``[B, T]``; returns tokens and lengths."""
    lengths = np.array([len(s.tokens) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lengths.max())), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s.tokens)] = s.tokens
    return out, lengths


class LanguageBatchSampler:
    """Draw ``(z, batch)`` with ``z`` uniform over ``languages``.

    Each language keeps its own shuffled pass over the split; a batch takes
    the next ``batch_size`` unseen items of that pass (the final batch of a
    pass may be shorter), so every item is visited exactly once per pass.
    """

    def __init__(self, corpus: ParallelCorpus, split: str, batch_size: int,
                 rng: np.random.Generator, languages: list[str] | None = None):
        self.languages = list(languages or corpus.languages)
        self.data = {z: corpus.split(split, z) for z in self.languages}
        for z, seqs in self.data.items():
            if not seqs:
                raise CapacityError(f"split {split!r} is empty for language {z!r}")
            if batch_size > len(seqs):
                raise CapacityError(f"batch_size {batch_size} exceeds split {split!r} size {len(seqs)} ({z})")
        self.batch_size = batch_size
        self.rng = rng
        self._order = {z: np.empty(0, dtype=np.int64) for z in self.languages}

    def sample(self, lang: str | None = None) -> tuple[str, list[Sequence]]:
        z = lang if lang is not None else self.languages[int(self.rng.integers(len(self.languages)))]
        if len(self._order[z]) == 0:
            self._order[z] = self.rng.permutation(len(self.data[z]))
        take, self._order[z] = self._order[z][:self.batch_size], self._order[z][self.batch_size:]
        return z, [self.data[z][i] for i in take]


def sample_language_batch(corpus: ParallelCorpus, split: str, batch_size: int,
                          rng: np.random.Generator) -> tuple[str, list[Sequence]]:
    """One-shot draw: uniform language, then a batch without replacement."""
    return LanguageBatchSampler(corpus, split, batch_size, rng).sample()
