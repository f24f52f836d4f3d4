"""Memorization accuracy, perplexity, probing accuracy, and reports."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import ClozeFact, ParallelCorpus, Sequence, pad_batch
from .errors import ClozeError, LengthError
from .losses import prediction_mask
from .model import ModelParams, forward, sequence_log_probs

EVAL_BATCH = 64


def _tokens(seq) -> np.ndarray:
    toks = np.asarray(seq.tokens if isinstance(seq, Sequence) else seq, dtype=np.int64)
    if toks.ndim != 1 or toks.shape[0] < 2:
        raise LengthError(f"metric needs a sequence of at least 2 tokens, got {toks.shape}")
    return toks


def memorization_accuracy(params: ModelParams, seq) -> float:
    """Fraction of the T-1 positions where the greedy next token is the true one.

    ``np.argmax`` returns the lowest index among ties, so a tie only counts
    as correct when the true token is that lowest index.
    """
    toks = _tokens(seq)
    with T.no_grad():
        logits = forward(params, toks[:-1]).data
    return float(np.mean(np.argmax(logits, axis=-1) == toks[1:]))


def perplexity(params: ModelParams, seq) -> float:
    """``exp`` of the mean negative log-likelihood over predicted positions."""
    toks = _tokens(seq)
    with T.no_grad():
        lp = sequence_log_probs(params, toks).data
    return math.exp(-float(np.sum(lp)) / lp.shape[0])


def score_sequences(params: ModelParams, seqs: list[Sequence], batch_size: int = EVAL_BATCH):
    """Per-sequence MA and mean NLL in batched forward passes."""
    ma = np.empty(len(seqs))
    nll = np.empty(len(seqs))
    with T.no_grad():
        for start in range(0, len(seqs), batch_size):
            chunk = seqs[start:start + batch_size]
            toks, lengths = pad_batch(chunk)
            if lengths.min() < 2:
                raise LengthError("every evaluated sequence needs at least 2 tokens")
            logits = forward(params, toks[:, :-1])
            lp = T.gather_log_prob(T.log_softmax(logits), toks[:, 1:]).data
            mask = prediction_mask(lengths, toks.shape[1] - 1)
            n = mask.sum(axis=1)
            hits = (np.argmax(logits.data, axis=-1) == toks[:, 1:]) & mask
            ma[start:start + len(chunk)] = hits.sum(axis=1) / n
            nll[start:start + len(chunk)] = -np.where(mask, lp, 0.0).sum(axis=1) / n
    return ma, nll


def aggregate_ppl(nll: np.ndarray) -> float:
    """Split-level PPL: ``exp`` of the mean per-sequence NLL (the batch LM loss over the split)."""
    return math.exp(float(np.mean(nll)))


def candidate_scores(params: ModelParams, fact: ClozeFact, length_normalize: bool = False) -> np.ndarray:
    """Total log-likelihood of the prompt with each candidate substituted in."""
    filled = [fact.fill(c) for c in fact.candidates]
    if any(len(f) < 2 for f in filled):
        raise ClozeError(f"cloze item {fact.item_id}: filled prompt shorter than 2 tokens")
    seqs = [Sequence(fact.item_id, fact.lang, f) for f in filled]
    _, nll = score_sequences(params, seqs)
    n = np.array([len(f) - 1 for f in filled], dtype=np.float64)
    return -nll if length_normalize else -nll * n


def probing_accuracy(params: ModelParams, fact: ClozeFact, length_normalize: bool = False) -> int:
    """1 if the gold answer strictly outscores every other candidate, else 0."""
    scores = candidate_scores(params, fact, length_normalize)
    gold = fact.candidates.index(fact.answer)
    others = np.delete(scores, gold)
    return int(scores[gold] > others.max())


def mean_pa(params: ModelParams, facts: list[ClozeFact], length_normalize: bool = False) -> float:
    if not facts:
        return float("nan")
    return float(np.mean([probing_accuracy(params, f, length_normalize) for f in facts]))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

METRICS = ("ma", "ppl", "pa")
CSV_FIELDS = ("method", "seeds", "scope", "name", "group", "split", "metric", "value")


@dataclass
class EvalReport:
    """Per-(language, split) metric values with group rollups.

    ``values[(lang, split)]`` maps metric names (``ma``, ``ppl``, optional
    ``pa``) to floats. ``groups`` maps each language to its reporting group.
    """
    values: dict[tuple[str, str], dict[str, float]]
    groups: dict[str, str]
    seeds: list[int] = field(default_factory=list)
    method: str = ""

    @property
    def languages(self) -> list[str]:
        return list(self.groups)

    @property
    def splits(self) -> list[str]:
        return list(dict.fromkeys(s for _, s in self.values))

    def get(self, lang: str, split: str, metric: str) -> float:
        return self.values[(lang, split)][metric]

    def group_names(self) -> list[str]:
        return list(dict.fromkeys(self.groups.values()))

    def group_value(self, group: str, split: str, metric: str) -> float:
        members = [z for z, g in self.groups.items() if g == group]
        return float(np.mean([self.values[(z, split)][metric] for z in members]))

    def rollups(self) -> dict[tuple[str, str], dict[str, float]]:
        out = {}
        for g in self.group_names():
            for split in self.splits:
                metrics = self.values[(next(z for z, gg in self.groups.items() if gg == g), split)]
                out[(g, split)] = {m: self.group_value(g, split, m) for m in metrics}
        return out

    def mean(self, split: str, metric: str) -> float:
        """Unweighted mean over languages."""
        return float(np.mean([self.values[(z, split)][metric] for z in self.groups]))

    @classmethod
    def average(cls, reports: list["EvalReport"]) -> "EvalReport":
        """Seed average: arithmetic mean of each value across reports."""
        first = reports[0]
        values = {key: {m: float(np.mean([r.values[key][m] for r in reports])) for m in metrics}
                  for key, metrics in first.values.items()}
        seeds = [s for r in reports for s in r.seeds]
        return cls(values, dict(first.groups), seeds, first.method)

    # -- serialization ---------------------------------------------------------
    def rows(self) -> list[dict[str, str]]:
        seeds = ";".join(str(s) for s in self.seeds)
        rows = []
        for (lang, split), metrics in self.values.items():
            for m, v in metrics.items():
                rows.append({"method": self.method, "seeds": seeds, "scope": "lang", "name": lang, "group": self.groups[lang],
                             "split": split, "metric": m, "value": repr(float(v))})
        for (g, split), metrics in self.rollups().items():
            for m, v in metrics.items():
                rows.append({"method": self.method, "seeds": seeds, "scope": "group", "name": g, "group": g,
                             "split": split, "metric": m, "value": repr(float(v))})
        return rows


def write_csv(reports: list[EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerows(r.rows())
    return buf.getvalue()


def read_csv(text: str) -> list[EvalReport]:
    """Parse :func:`write_csv` output back into reports (group rows are derived data)."""
    by_method: dict[str, EvalReport] = {}
    for row in csv.DictReader(io.StringIO(text)):
        method = row["method"]
        if method not in by_method:
            seeds = [int(s) for s in row["seeds"].split(";") if s]
            by_method[method] = EvalReport({}, {}, seeds, method)
        if row["scope"] == "lang":
            rep = by_method[method]
            rep.values.setdefault((row["name"], row["split"]), {})[row["metric"]] = float(row["value"])
            rep.groups[row["name"]] = row["group"]
    return list(by_method.values())


def to_markdown(reports: list[EvalReport], metric: str = "ma") -> str:
    """Forget/test table with one row per method and MA/PPL per group."""
    first = reports[0]
    groups = first.group_names()
    splits = [s for s in ("forget", "test") if s in first.splits] or first.splits
    header = ["Method"] + [f"{s} {g} {m.upper()}" for s in splits for g in groups for m in (metric, "ppl")]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in reports:
        cells = [r.method]
        for s in splits:
            for g in groups:
                for m in (metric, "ppl"):
                    v = r.group_value(g, s, m)
                    cells.append(f"{100 * v:.1f}" if m in ("ma", "pa") else f"{v:.1f}")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def evaluate(params: ModelParams, corpus: ParallelCorpus, splits=("forget", "test"),
             facts: bool = False, length_normalize: bool = False, method: str = "",
             seed: int | None = None) -> EvalReport:
    """MA and PPL (and PA when ``facts``) for every language and split.

    Per-language MA and PA are unweighted means over that split's sequences;
    PPL is :func:`aggregate_ppl` of the per-sequence NLLs.
    """
    values = {}
    for split in splits:
        for z in corpus.languages:
            ma, nll = score_sequences(params, corpus.split(split, z))
            entry = {"ma": float(np.mean(ma)), "ppl": aggregate_ppl(nll)}
            if facts and split in corpus.cloze:
                entry["pa"] = mean_pa(params, corpus.cloze[split][z], length_normalize)
            values[(z, split)] = entry
    groups = {z: corpus.group(z) for z in corpus.languages}
    return EvalReport(values, groups, [] if seed is None else [seed], method)
