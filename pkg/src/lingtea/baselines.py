"""Reference unlearning methods compared against the teacher-guided loop."""

from __future__ import annotations

from dataclasses import replace

from .corpus import ParallelCorpus
from .model import ModelParams, TaskVector, apply_task_vectors
from .trainer import RunHistory, StepHook, UnlearnConfig, finetune, unlearn


def grad_ascent_plus(student: ModelParams, corpus: ParallelCorpus, config: UnlearnConfig,
                     on_step: StepHook | None = None) -> tuple[ModelParams, RunHistory]:
    """Forget by gradient ascent; retain with plain LM descent.

    No teacher is consulted during training. The starting weights serve as
    the reference for the validation-PPL guardrail.
    """
    if not any(corpus.split("forget", z) for z in corpus.languages):
        # nothing to forget: the method degenerates to finetuning on the retain subset
        keep = set(corpus.item_ids("retain")[:config.retain_sample_count])
        retain = [s for z in corpus.languages for s in corpus.split("retain", z) if s.item_id in keep]
        history = RunHistory()
        out = finetune(student, retain, config.max_epochs, config.learning_rate, config.batch_size,
                       config.seed, records=history.steps)
        return out, history
    cfg = replace(config, retain_objective="lm")
    return unlearn(student, student.frozen(), corpus, cfg, on_step)


def ga_kl(student: ModelParams, teacher: ModelParams, corpus: ParallelCorpus, config: UnlearnConfig,
          on_step: StepHook | None = None) -> tuple[ModelParams, RunHistory]:
    """Forget by gradient ascent; retain by matching the frozen teacher's distributions."""
    cfg = replace(config, retain_objective="kl")
    return unlearn(student, teacher, corpus, cfg, on_step)


def neg_task_vector_plus(teacher: ModelParams, corpus: ParallelCorpus, config: UnlearnConfig
                         ) -> tuple[ModelParams, dict[str, TaskVector]]:
    """Subtract a forget task vector and add a retain task vector.

    Both vectors come from finetuning copies of ``teacher`` with LM descent
    for ``config.tv_epochs`` epochs: one on the forget split (all languages),
    one on a ``retain_sample_count`` subset of the retain split. The result is
    ``teacher - tv_alpha_forget * forget_tv + tv_alpha_retain * retain_tv``.
    """
    forget = [s for z in corpus.languages for s in corpus.split("forget", z)]
    retain_ids = corpus.item_ids("retain")[:config.retain_sample_count]
    keep = set(retain_ids)
    retain = [s for z in corpus.languages for s in corpus.split("retain", z) if s.item_id in keep]
    tuned_f = finetune(teacher, forget, config.tv_epochs, config.learning_rate, config.batch_size, config.seed)
    tuned_r = finetune(teacher, retain, config.tv_epochs, config.learning_rate, config.batch_size, config.seed + 1)
    tv_f = TaskVector.between(tuned_f, teacher)
    tv_r = TaskVector.between(tuned_r, teacher)
    out = apply_task_vectors(teacher, tv_f, tv_r, alpha_f=config.tv_alpha_forget, alpha_r=config.tv_alpha_retain)
    return out, {"forget": tv_f, "retain": tv_r}
