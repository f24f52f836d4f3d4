"""Alternating forget/retain unlearning loop, its variants, and pretraining."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .corpus import LanguageBatchSampler, ParallelCorpus, Sequence, pad_batch
from .errors import CapacityError, ConfigError, DataError, NumericError, PretrainError
from .losses import (
    LossBundle,
    forget_loss,
    language_modeling_loss,
    prediction_mask,
    retain_loss,
    sequence_kl,
    sequence_nll,
    teacher_confidence,
)
from .metrics import aggregate_ppl, score_sequences
from .model import ModelParams, next_token_log_dists, sequence_log_probs

log = logging.getLogger(__name__)

RETAIN_OBJECTIVES = ("lingtea", "lm", "kl")
SAMPLING_MODES = ("uniform", "fixed", "oracle")


# ---------------------------------------------------------------------------
# optimizer, schedule, early stopping
# ---------------------------------------------------------------------------

class AdamW:
    """Adam moments with decoupled weight decay, over a :class:`ModelParams`."""

    def __init__(self, params: ModelParams, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {n: np.zeros(t.shape) for n, t in params.items()}
        self.v = {n: np.zeros(t.shape) for n, t in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            data = p.data * (1.0 - lr * self.weight_decay) if self.weight_decay else p.data
            p.data = data - lr * update


def linear_warmup_decay(step: int, total_steps: int, warmup_ratio: float, peak_lr: float) -> float:
    """Linear ramp from 0 to ``peak_lr`` over ``warmup_ratio * total_steps`` steps, then linear decay to 0."""
    warmup = int(round(warmup_ratio * total_steps))
    if step < warmup:
        return peak_lr * step / warmup
    if step >= total_steps:
        return 0.0
    return peak_lr * (total_steps - step) / (total_steps - warmup)


class EarlyStopping:
    """Counts consecutive validations without improvement.

    A validation improves when it passes the guardrail and its value is
    strictly below the best so far (by more than ``min_delta``).
    """

    def __init__(self, tolerance: int = 5, min_delta: float = 0.0, best: float = math.inf):
        self.tolerance = tolerance
        self.min_delta = min_delta
        self.best = best
        self.counter = 0

    def update(self, value: float, admissible: bool = True) -> bool:
        if admissible and value < self.best - self.min_delta:
            self.best = value
            self.counter = 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.tolerance


def clip_grad_norm(params: ModelParams, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in params if t.grad is not None))
    if max_norm is not None and total > max_norm:
        s = max_norm / (total + 1e-12)
        for t in params:
            if t.grad is not None:
                t.grad = t.grad * s
    return total


# ---------------------------------------------------------------------------
# configuration and history
# ---------------------------------------------------------------------------

@dataclass
class UnlearnConfig:
    learning_rate: float = 5e-4
    warmup_ratio: float = 0.0
    lam: float = 1.0
    batch_size: int = 32
    retain_sample_count: int = 96
    max_epochs: int = 30
    early_stop_tolerance: int = 5
    seed: int = 0
    language_sampling: str = "uniform"
    fixed_language: str | None = None
    kappa: str | float = "adaptive"
    retain_objective: str = "lingtea"
    ppl_guardrail: float = 0.3
    max_grad_norm: float | None = 1.0
    weight_decay: float = 0.0
    min_delta: float = 0.0
    cycles_per_epoch: int | None = None
    tv_alpha_forget: float = 1.0
    tv_alpha_retain: float = 1.0
    tv_epochs: int = 5

    def __post_init__(self):
        for name in ("learning_rate", "batch_size", "retain_sample_count", "max_epochs", "early_stop_tolerance"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"unlearn.{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError(f"unlearn.warmup_ratio must lie in [0, 1), got {self.warmup_ratio}")
        if self.lam < 0:
            raise ConfigError(f"unlearn.lam must be non-negative, got {self.lam}")
        if self.language_sampling not in SAMPLING_MODES:
            raise ConfigError(f"unlearn.language_sampling must be one of {SAMPLING_MODES}")
        if self.language_sampling == "fixed" and not self.fixed_language:
            raise ConfigError("unlearn.fixed_language is required with language_sampling = fixed")
        if self.retain_objective not in RETAIN_OBJECTIVES:
            raise ConfigError(f"unlearn.retain_objective must be one of {RETAIN_OBJECTIVES}")
        if self.kappa != "adaptive":
            try:
                k = float(self.kappa)
            except (TypeError, ValueError):
                raise ConfigError(f"unlearn.kappa must be 'adaptive' or a number, got {self.kappa!r}") from None
            if not 0.0 <= k <= 1.0:
                raise ConfigError(f"unlearn.kappa must lie in [0, 1], got {k}")
            self.kappa = k


@dataclass
class RunHistory:
    steps: list[dict] = field(default_factory=list)
    validations: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def optimizer_steps(self) -> int:
        return sum(1 for s in self.steps if s["applied"])

    def phases(self) -> list[str]:
        return [s["phase"] for s in self.steps]

    def extend(self, other: "RunHistory", stage: str | None = None) -> None:
        offset = len(self.steps)
        for s in other.steps:
            self.steps.append({**s, "step": s["step"] + offset, **({"stage": stage} if stage else {})})
        for v in other.validations:
            self.validations.append({**v, **({"stage": stage} if stage else {})})
        self.stopped_early = other.stopped_early
        self.best_epoch = other.best_epoch

    def records(self):
        for s in self.steps:
            yield {"kind": "step", **s}
        for v in self.validations:
            yield {"kind": "validation", **v}

    def write_jsonl(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

def _batch(seqs: list[Sequence]):
    tokens, lengths = pad_batch(seqs)
    return tokens, prediction_mask(lengths, tokens.shape[1] - 1)


def forget_step_loss(model: ModelParams, seqs: list[Sequence]) -> tuple[T.Tensor, LossBundle]:
    """``L_f`` on a forget batch."""
    tokens, mask = _batch(seqs)
    loss = forget_loss(sequence_log_probs(model, tokens), mask)
    return loss, LossBundle(l_f=loss.item(), l_total=loss.item())


def retain_step_loss(model: ModelParams, teacher: ModelParams | None, seqs: list[Sequence],
                     objective: str = "lingtea", kappa="adaptive", lam: float = 1.0
                     ) -> tuple[T.Tensor, LossBundle]:
    """``lam * L_r`` on a retain batch.

    ``objective`` selects the retain term: ``lingtea`` mixes teaching and LM
    losses per sequence with ``kappa`` (adaptive from the teacher, or a fixed
    number), ``lm`` uses only the LM loss (no teacher), ``kl`` only the
    teaching loss.
    """
    tokens, mask = _batch(seqs)
    targets = tokens[:, 1:]
    student = next_token_log_dists(model, tokens)
    bundle = LossBundle(lam=lam)
    if objective == "lm":
        lm_seq = sequence_nll(T.gather_log_prob(student, targets), mask)
        l_r = T.mean_all(lm_seq)
        bundle.l_lm = l_r.item()
    else:
        with T.no_grad():
            teacher_ld = next_token_log_dists(teacher, tokens)
        lt_seq = sequence_kl(teacher_ld, student, mask)
        if objective == "kl":
            l_r = T.mean_all(lt_seq)
            bundle.l_lt = l_r.item()
        else:
            lm_seq = sequence_nll(T.gather_log_prob(student, targets), mask)
            if kappa == "adaptive":
                k = teacher_confidence(teacher_ld, targets, mask)
            else:
                k = np.full(len(seqs), float(kappa))
            l_r = T.mean_all(retain_loss(lt_seq, lm_seq, k))
            bundle.l_lt = float(np.mean(lt_seq.data))
            bundle.l_lm = float(np.mean(lm_seq.data))
            bundle.kappa = float(np.mean(k))
    bundle.l_r = l_r.item()
    loss = T.scale(l_r, lam)
    bundle.l_total = loss.item()
    return loss, bundle


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------

def forget_ma(model: ModelParams, corpus: ParallelCorpus, languages: list[str]) -> dict[str, float]:
    return {z: float(np.mean(score_sequences(model, corpus.split("forget", z))[0])) for z in languages}


def split_ppl(model: ModelParams, corpus: ParallelCorpus, split: str = "validation") -> dict[str, float]:
    return {z: aggregate_ppl(score_sequences(model, corpus.split(split, z))[1])
            for z in corpus.languages}


# ---------------------------------------------------------------------------
# the unlearning loop
# ---------------------------------------------------------------------------

StepHook = Callable[[dict, dict], None]


def _active_languages(corpus: ParallelCorpus, config: UnlearnConfig) -> list[str]:
    if config.language_sampling == "fixed":
        if config.fixed_language not in corpus.languages:
            raise ConfigError(f"unlearn.fixed_language {config.fixed_language!r} not in corpus languages")
        return [config.fixed_language]
    return list(corpus.languages)


def unlearn(student: ModelParams, teacher: ModelParams, corpus: ParallelCorpus, config: UnlearnConfig,
            on_step: StepHook | None = None, reference_val_ppl: dict[str, float] | None = None
            ) -> tuple[ModelParams, RunHistory]:
    """Alternate one forget step and one retain step per cycle.

    Each forget step samples a language and descends ``L_f`` on a batch of
    its forget split; each retain step samples a language again and descends
    ``lam * L_r`` on its retain subset. After every epoch the run is
    validated: an epoch is admissible when every language's validation PPL
    stays within ``(1 + ppl_guardrail)`` of the teacher's, and the best
    admissible epoch is the one with the lowest mean forget MA. Training stops
    after ``early_stop_tolerance`` validations without improvement and the
    best parameters are returned.
    """
    if config.language_sampling == "oracle":
        return oracle_unlearn(student, teacher, corpus, config, on_step)
    if student.config != teacher.config:
        raise ConfigError("student and teacher configs differ")
    langs = _active_languages(corpus, config)
    for split in ("forget", "retain", "validation"):
        for z in corpus.languages:
            if not corpus.split(split, z):
                raise DataError(f"split {split!r} is empty for language {z!r}")

    rng = np.random.default_rng(config.seed)
    retain_pool = corpus.item_ids("retain")
    if config.retain_sample_count > len(retain_pool):
        raise CapacityError(f"retain_sample_count {config.retain_sample_count} exceeds retain split "
                            f"size {len(retain_pool)}")
    keep = rng.permutation(len(retain_pool))[:config.retain_sample_count]
    retain_corpus = corpus.restrict("retain", [retain_pool[i] for i in sorted(keep)])
    forget_sampler = LanguageBatchSampler(corpus, "forget", config.batch_size, rng, langs)
    retain_sampler = LanguageBatchSampler(retain_corpus, "retain", config.batch_size, rng, langs)

    n_forget = len(corpus.split("forget", langs[0]))
    cycles = config.cycles_per_epoch or math.ceil(n_forget / config.batch_size)
    total_steps = 2 * cycles * config.max_epochs

    model = student.copy()
    opt = AdamW(model, weight_decay=config.weight_decay)
    history = RunHistory()
    ref_ppl = reference_val_ppl or split_ppl(teacher, corpus)

    def validate(epoch: int) -> tuple[float, bool, dict]:
        fma = forget_ma(model, corpus, langs)
        vppl = split_ppl(model, corpus)
        ok = all(vppl[z] <= (1.0 + config.ppl_guardrail) * ref_ppl[z] for z in corpus.languages)
        return float(np.mean(list(fma.values()))), ok, {"forget_ma": fma, "val_ppl": vppl}

    start_ma, _, detail = validate(0)
    stopper = EarlyStopping(config.early_stop_tolerance, config.min_delta, best=start_ma)
    best_state = {n: t.data.copy() for n, t in model.items()}
    history.validations.append({"epoch": 0, "mean_forget_ma": start_ma, "admissible": True,
                                "improved": False, "stop_counter": 0, **detail})

    step = 0
    for epoch in range(1, config.max_epochs + 1):
        for _ in range(cycles):
            for phase in ("forget", "retain"):
                lr = linear_warmup_decay(step, total_steps, config.warmup_ratio, config.learning_rate)
                if phase == "forget":
                    z, seqs = forget_sampler.sample()
                    apply = True
                    loss, bundle = forget_step_loss(model, seqs)
                else:
                    z, seqs = retain_sampler.sample()
                    apply = config.lam > 0
                    if apply:
                        loss, bundle = retain_step_loss(model, teacher, seqs, config.retain_objective,
                                                        config.kappa, config.lam)
                    else:
                        bundle = LossBundle(lam=0.0)
                record = {"step": step, "epoch": epoch, "phase": phase, "lang": z, "lr": lr,
                          "items": [s.item_id for s in seqs], "applied": apply, **bundle.as_dict()}
                if apply:
                    if not math.isfinite(loss.item()):
                        raise NumericError(f"non-finite {phase} loss at step {step} (epoch {epoch}, "
                                           f"language {z}): {bundle.as_dict()}")
                    model.zero_grad()
                    loss.backward()
                    if on_step is not None:
                        on_step(record, {n: t.grad.copy() for n, t in model.items()})
                    record["grad_norm"] = clip_grad_norm(model, config.max_grad_norm)
                    opt.step(lr)
                history.steps.append(record)
                step += 1

        mean_ma, ok, detail = validate(epoch)
        improved = stopper.update(mean_ma, ok)
        if improved:
            best_state = {n: t.data.copy() for n, t in model.items()}
            history.best_epoch = epoch
        history.validations.append({"epoch": epoch, "mean_forget_ma": mean_ma, "admissible": ok,
                                    "improved": improved, "stop_counter": stopper.counter, **detail})
        log.debug("epoch %d forget_ma=%.3f admissible=%s counter=%d", epoch, mean_ma, ok, stopper.counter)
        if stopper.should_stop:
            history.stopped_early = True
            break

    model.load_state(best_state)
    model.zero_grad()
    return model, history


def oracle_unlearn(student: ModelParams, teacher: ModelParams, corpus: ParallelCorpus,
                   config: UnlearnConfig, on_step: StepHook | None = None) -> tuple[ModelParams, RunHistory]:
    """Unlearn one language at a time, each stage starting from the previous result."""
    ref = split_ppl(teacher, corpus)
    history = RunHistory()
    model = student
    for i, z in enumerate(corpus.languages):
        stage_cfg = replace(config, language_sampling="fixed", fixed_language=z, seed=config.seed + i)
        model, stage = unlearn(model, teacher, corpus, stage_cfg, on_step, reference_val_ppl=ref)
        history.extend(stage, stage=z)
    return model, history


def sequential_unlearn(student: ModelParams, teacher: ModelParams, corpus: ParallelCorpus,
                       chunks: list[list[int]], config: UnlearnConfig,
                       on_step: StepHook | None = None) -> tuple[ModelParams, RunHistory]:
    """Run :func:`unlearn` on each forget chunk in turn; the retain set stays fixed."""
    seen: set[int] = set()
    forget_ids = set(corpus.item_ids("forget"))
    for chunk in chunks:
        overlap = seen & set(chunk)
        if overlap:
            raise DataError(f"forget chunks overlap at item_id {min(overlap)}")
        unknown = set(chunk) - forget_ids
        if unknown:
            raise DataError(f"chunk item_id {min(unknown)} is not in the forget split")
        seen |= set(chunk)
    ref = split_ppl(teacher, corpus)
    history = RunHistory()
    model = student
    for i, chunk in enumerate(chunks):
        sub = corpus.restrict("forget", chunk)
        model, stage = unlearn(model, teacher, sub, config, on_step, reference_val_ppl=ref)
        history.extend(stage, stage=f"chunk{i}")
    return model, history


# ---------------------------------------------------------------------------
# plain language-model training
# ---------------------------------------------------------------------------

@dataclass
class PretrainConfig:
    learning_rate: float = 3e-3
    batch_size: int = 32
    max_epochs: int = 200
    warmup_steps: int = 50
    forget_upsample: int = 4
    threshold: float = 0.9
    check_every: int = 5
    seed: int = 0
    weight_decay: float = 0.0
    max_grad_norm: float | None = 1.0


def lm_epoch(model: ModelParams, opt: AdamW, seqs: list[Sequence], batch_size: int,
             rng: np.random.Generator, lr_at: Callable[[int], float], step: int,
             max_grad_norm: float | None = 1.0, records: list | None = None) -> tuple[int, float]:
    """One shuffled pass of LM-loss descent; returns (next step index, mean loss)."""
    order = rng.permutation(len(seqs))
    losses = []
    for start in range(0, len(order), batch_size):
        batch = [seqs[i] for i in order[start:start + batch_size]]
        tokens, mask = _batch(batch)
        loss = language_modeling_loss(sequence_log_probs(model, tokens), mask)
        if not math.isfinite(loss.item()):
            raise NumericError(f"non-finite LM loss at step {step}")
        model.zero_grad()
        loss.backward()
        clip_grad_norm(model, max_grad_norm)
        lr = lr_at(step)
        opt.step(lr)
        losses.append(loss.item())
        if records is not None:
            records.append({"step": step, "phase": "retain", "lang": batch[0].lang, "lr": lr,
                            "items": [s.item_id for s in batch], "applied": True, "l_lm": loss.item()})
        step += 1
    return step, float(np.mean(losses))


def finetune(model: ModelParams, seqs: list[Sequence], epochs: int, learning_rate: float,
             batch_size: int = 32, seed: int = 0, records: list | None = None) -> ModelParams:
    """Copy of ``model`` after ``epochs`` passes of LM descent on ``seqs`` (constant lr)."""
    out = model.copy()
    if epochs <= 0 or not seqs:
        return out
    opt = AdamW(out)
    rng = np.random.default_rng(seed)
    step = 0
    for _ in range(epochs):
        step, _ = lm_epoch(out, opt, seqs, batch_size, rng, lambda s: learning_rate, step, records=records)
    out.zero_grad()
    return out


def pretrain(model: ModelParams, corpus: ParallelCorpus, config: PretrainConfig | None = None
             ) -> tuple[ModelParams, list[dict]]:
    """Train the original model on pretrain + retain + (upsampled) forget data.

    Stops once every language's forget-set MA reaches ``threshold``; raises
    :class:`PretrainError` when ``max_epochs`` pass without getting there.
    """
    config = config or PretrainConfig()
    out = model.copy()
    seqs: list[Sequence] = []
    for z in corpus.languages:
        seqs += corpus.splits.get("pretrain", {}).get(z, [])
        seqs += corpus.split("retain", z)
        seqs += corpus.split("forget", z) * config.forget_upsample
    rng = np.random.default_rng(config.seed)
    opt = AdamW(out, weight_decay=config.weight_decay)

    def lr_at(step: int) -> float:
        return config.learning_rate * min(1.0, (step + 1) / max(config.warmup_steps, 1))

    log_rows = []
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        step, loss = lm_epoch(out, opt, seqs, config.batch_size, rng, lr_at, step, config.max_grad_norm)
        if epoch % config.check_every == 0 or epoch == config.max_epochs:
            fma = forget_ma(out, corpus, corpus.languages)
            log_rows.append({"epoch": epoch, "loss": loss, "forget_ma": fma})
            log.info("pretrain epoch %d loss %.3f min forget MA %.3f", epoch, loss, min(fma.values()))
            if min(fma.values()) >= config.threshold:
                out.zero_grad()
                return out, log_rows
    raise PretrainError(f"forget-set MA stayed below {config.threshold} after {config.max_epochs} epochs "
                        f"(last: {log_rows[-1]['forget_ma']}); try a larger model, more epochs, "
                        f"or a higher forget_upsample")


def config_dict(config) -> dict:
    return asdict(config)
