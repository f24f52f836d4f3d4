import numpy as np
import pytest

from lingtea.baselines import ga_kl, grad_ascent_plus, neg_task_vector_plus
from lingtea.corpus import generate_synthetic_corpus
from lingtea.model import TaskVector, apply_task_vectors
from lingtea.trainer import UnlearnConfig, forget_ma, pretrain, PretrainConfig

from helpers import small_spec, tiny_model


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(small_spec(), seed=0)


@pytest.fixture(scope="module")
def original(corpus):
    model = tiny_model(vocab_size=corpus.vocab_size, max_seq_len=16, d_model=16, seed=0)
    params, _ = pretrain(model, corpus, PretrainConfig(learning_rate=1e-2, batch_size=16, max_epochs=80,
                                                       threshold=0.6, check_every=5))
    return params


def cfg(**kw):
    base = dict(learning_rate=1e-3, batch_size=4, retain_sample_count=8, max_epochs=6, seed=0,
                ppl_guardrail=1.0)
    base.update(kw)
    return UnlearnConfig(**base)


def bits(params):
    return {n: t.data.view(np.uint64).copy() for n, t in params.items()}


class TestNegTaskVector:
    @pytest.mark.parametrize("kw", [{"tv_epochs": 0}, {"tv_alpha_forget": 0.0, "tv_alpha_retain": 0.0}])
    def test_identity_cases_are_bit_exact(self, corpus, original, kw):
        out, _ = neg_task_vector_plus(original, corpus, cfg(**kw))
        a, b = bits(out), bits(original)
        assert all(np.array_equal(a[n], b[n]) for n in a)

    def test_zero_alpha_drops_one_term(self, corpus, original):
        out, tvs = neg_task_vector_plus(original, corpus, cfg(tv_epochs=1, tv_alpha_forget=0.0))
        ref = apply_task_vectors(original, TaskVector.zeros(original.config), tvs["retain"], 1.0, 1.0)
        assert out.equal(ref)

    def test_vectors_are_finetune_deltas(self, corpus, original):
        out, tvs = neg_task_vector_plus(original, corpus, cfg(tv_epochs=1))
        assert not out.equal(original)
        for name in ("forget", "retain"):
            assert any(np.any(v != 0) for v in tvs[name].values().values())

    def test_lowers_forget_ma(self, corpus, original):
        out, _ = neg_task_vector_plus(original, corpus, cfg(tv_epochs=3, learning_rate=3e-3, tv_alpha_retain=0.0))
        before = np.mean(list(forget_ma(original, corpus, corpus.languages).values()))
        after = np.mean(list(forget_ma(out, corpus, corpus.languages).values()))
        assert after < before


class TestGradientAscentPlus:
    def test_lowers_forget_ma_in_every_language(self, corpus, original):
        out, history = grad_ascent_plus(original, corpus, cfg())
        before = forget_ma(original, corpus, corpus.languages)
        after = forget_ma(out, corpus, corpus.languages)
        assert history.best_epoch > 0
        assert all(after[z] < before[z] for z in corpus.languages)

    def test_retain_steps_use_plain_lm(self, corpus, original):
        _, history = grad_ascent_plus(original, corpus, cfg(max_epochs=1))
        retain = [s for s in history.steps if s["phase"] == "retain"]
        assert all(np.isnan(s["kappa"]) and np.isnan(s["l_lt"]) and s["l_r"] == s["l_lm"] for s in retain)

    def test_empty_forget_set_reduces_to_finetuning(self, corpus, original):
        empty = corpus.restrict("forget", [])
        out, history = grad_ascent_plus(original, empty, cfg(max_epochs=2))
        assert history.steps and all(s["phase"] == "retain" for s in history.steps)
        keep = set(corpus.item_ids("retain")[:8])
        assert {i for s in history.steps for i in s["items"]} == keep
        assert not out.equal(original)


class TestGaKl:
    def test_retain_steps_are_pure_distillation(self, corpus, original):
        _, history = ga_kl(original, original.frozen(), corpus, cfg(max_epochs=1))
        retain = [s for s in history.steps if s["phase"] == "retain"]
        assert all(np.isnan(s["kappa"]) and np.isnan(s["l_lm"]) and s["l_r"] == s["l_lt"] for s in retain)

    def test_lowers_forget_ma(self, corpus, original):
        out, _ = ga_kl(original, original.frozen(), corpus, cfg())
        before = np.mean(list(forget_ma(original, corpus, corpus.languages).values()))
        after = np.mean(list(forget_ma(out, corpus, corpus.languages).values()))
        assert after < before
