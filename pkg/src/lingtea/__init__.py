"""Teacher-guided multilingual unlearning on a small numpy transformer."""

from .baselines import ga_kl, grad_ascent_plus, neg_task_vector_plus
from .corpus import ParallelCorpus, SynthSpec, generate_synthetic_corpus, load_parallel_corpus
from .errors import LingTeaError
from .metrics import EvalReport, evaluate
from .model import ModelConfig, ModelParams, load_checkpoint, save_checkpoint
from .trainer import PretrainConfig, UnlearnConfig, oracle_unlearn, pretrain, sequential_unlearn, unlearn

__all__ = [
    "EvalReport", "LingTeaError", "ModelConfig", "ModelParams", "ParallelCorpus", "PretrainConfig",
    "SynthSpec", "UnlearnConfig", "evaluate", "ga_kl", "generate_synthetic_corpus", "grad_ascent_plus",
    "load_checkpoint", "load_parallel_corpus", "neg_task_vector_plus", "oracle_unlearn", "pretrain",
    "save_checkpoint", "sequential_unlearn", "unlearn",
]
