"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one ``[criterion N] PASS|FAIL ...`` line with the measured
numbers. Criteria 5 to 8 pretrain toy models from the shipped configs and
take several minutes in total.
"""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from lingtea import tensor as T
from lingtea.baselines import ga_kl, grad_ascent_plus, neg_task_vector_plus
from lingtea.corpus import generate_synthetic_corpus
from lingtea.harness import build_corpus, load_spec, original_model, run_seed
from lingtea.losses import (
    forget_loss,
    language_modeling_loss,
    language_teaching_loss,
    retain_loss,
    teacher_confidence,
)
from lingtea.metrics import memorization_accuracy, perplexity, probing_accuracy
from lingtea.model import TaskVector, apply_task_vectors
from lingtea.trainer import (
    EarlyStopping,
    UnlearnConfig,
    linear_warmup_decay,
    oracle_unlearn,
    split_ppl,
    unlearn,
)

from helpers import check_op, model_directional_error, op_cases, small_spec, tiny_model
from test_metrics import brute_force_ma, exhaustive_scores, random_fact, uniform_model

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


@pytest.fixture(scope="session")
def out_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def spec_for(name, out_root, **overrides):
    return load_spec(CONFIGS / f"{name}.ini", {"experiment.out": str(out_root), **overrides})


# ---------------------------------------------------------------------------
# 1. gradient correctness
# ---------------------------------------------------------------------------

def test_criterion_1_gradients(verdict):
    start = time.perf_counter()
    errors = []
    for name, (build, make) in sorted(op_cases().items()):
        for seed in range(4):
            errors.append(check_op(build, make(np.random.default_rng(seed))))
    errors += [model_directional_error(seed) for seed in range(10)]
    elapsed = time.perf_counter() - start
    worst = max(errors)
    ok = len(errors) >= 100 and worst <= 1e-4 and elapsed < 30
    verdict(1, ok, f"{len(errors)} cases, max rel err {worst:.2e} (<= 1e-4), {elapsed:.1f}s (< 30s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. loss identities
# ---------------------------------------------------------------------------

def test_criterion_2_loss_identities(verdict):
    rng = np.random.default_rng(0)
    checks = {}

    x = rng.normal(size=(3, 5, 7))
    mask = np.arange(5)[None, :] < np.array([5, 3, 1])[:, None]
    a = T.Tensor(x, requires_grad=True)
    b = T.Tensor(x, requires_grad=True)
    targets = rng.integers(0, 7, (3, 5))
    lp_a = T.gather_log_prob(T.log_softmax(a), targets)
    lp_b = T.gather_log_prob(T.log_softmax(b), targets)
    lf = forget_loss(lp_a, mask)
    lm = language_modeling_loss(lp_b, mask)
    lf.backward()
    lm.backward()
    checks["L_LM == -L_f"] = lm.item() == -lf.item()
    checks["grad L_LM == -grad L_f"] = np.array_equal(b.grad, -a.grad)

    lt = T.Tensor(np.array(0.37))
    lmv = T.Tensor(np.array(2.25))
    checks["L_r(kappa=0) == L_LM"] = retain_loss(lt, lmv, 0.0).item() == 2.25
    checks["L_r(kappa=1) == L_LT"] = retain_loss(lt, lmv, 1.0).item() == 0.37

    kl_max = 0.0
    for _ in range(100):
        p = T.log_softmax(T.Tensor(rng.normal(size=(4, 6, 11)) * 3))
        kl_max = max(kl_max, abs(language_teaching_loss(p, p).item()))
    checks["KL(p||p) <= 1e-12"] = kl_max <= 1e-12

    kappas = []
    for i in range(1000):
        V = int(rng.integers(2, 40))
        logits = rng.normal(size=(int(rng.integers(1, 8)), V)) * rng.uniform(0.1, 30)
        ld = T.log_softmax(T.Tensor(logits)).data
        kappas.append(teacher_confidence(ld, rng.integers(0, V, size=logits.shape[0])))
    checks["kappa in [0,1] x1000"] = all(0.0 <= k <= 1.0 for k in kappas)

    ok = all(checks.values())
    verdict(2, ok, "; ".join(f"{k}: {'ok' if v else 'FAILED'}" for k, v in checks.items())
            + f" (max KL(p||p) {kl_max:.1e})")
    assert ok


# ---------------------------------------------------------------------------
# 3. metric oracles
# ---------------------------------------------------------------------------

def test_criterion_3_metric_oracles(verdict):
    rng = np.random.default_rng(3)
    ma_mismatch = 0
    for i in range(200):
        params = tiny_model(seed=i % 20)
        toks = rng.integers(0, 11, size=int(rng.integers(2, 9)))
        ma_mismatch += memorization_accuracy(params, toks) != brute_force_ma(params, toks)
    ppl_err = abs(perplexity(uniform_model(16), [1, 2, 3, 4, 5, 6]) - 16.0)
    pa_mismatch = 0
    for i in range(100):
        params = tiny_model(seed=i % 10)
        fact = random_fact(rng)
        scores = exhaustive_scores(params, fact)
        gold = fact.candidates.index(fact.answer)
        expect = int(all(scores[gold] > s for j, s in enumerate(scores) if j != gold))
        pa_mismatch += probing_accuracy(params, fact) != expect
    ok = ma_mismatch == 0 and ppl_err <= 1e-9 and pa_mismatch == 0
    verdict(3, ok, f"MA mismatches {ma_mismatch}/200, |PPL_uniform - V| {ppl_err:.1e} (<= 1e-9), "
                   f"PA mismatches {pa_mismatch}/100")
    assert ok


# ---------------------------------------------------------------------------
# 4. baseline equivalences
# ---------------------------------------------------------------------------

def test_criterion_4_baseline_equivalences(verdict):
    corpus = generate_synthetic_corpus(small_spec(), seed=0)
    student = tiny_model(vocab_size=corpus.vocab_size, max_seq_len=16, seed=1)
    teacher = student.copy()
    teacher["head"].data = teacher["head"].data + 0.05
    teacher = teacher.frozen()
    cfg = UnlearnConfig(learning_rate=1e-2, batch_size=4, retain_sample_count=8, max_epochs=3, seed=0)

    def grads_of(run):
        out = []
        run(lambda record, grads: out.append(grads))
        return out

    def identical(ga, gb):
        return len(ga) == len(gb) > 0 and all(np.array_equal(x[n], y[n]) for x, y in zip(ga, gb) for n in x)

    k0 = grads_of(lambda hook: unlearn(student, student.frozen(), corpus, replace(cfg, kappa=0.0), hook))
    gap = grads_of(lambda hook: grad_ascent_plus(student, corpus, cfg, hook))
    k1 = grads_of(lambda hook: unlearn(student, teacher, corpus, replace(cfg, kappa=1.0), hook))
    gkl = grads_of(lambda hook: ga_kl(student, teacher, corpus, cfg, hook))

    def same_bits(a, b):
        return all(np.array_equal(a[n].data.view(np.uint64), b[n].data.view(np.uint64)) for n, _ in a.items())

    zero_tv = apply_task_vectors(student, TaskVector.zeros(student.config), TaskVector.zeros(student.config))
    zero_epochs, _ = neg_task_vector_plus(student, corpus, replace(cfg, tv_epochs=0))
    zero_alpha, _ = neg_task_vector_plus(student, corpus, replace(cfg, tv_epochs=1, tv_alpha_forget=0.0,
                                                                  tv_alpha_retain=0.0))
    checks = {
        f"kappa=0 vs GradAscent+ ({len(k0)} steps)": identical(k0, gap),
        f"kappa=1 vs GA+KL ({len(k1)} steps)": identical(k1, gkl),
        "NegTV zero deltas": same_bits(zero_tv, student),
        "NegTV zero finetune": same_bits(zero_epochs, student),
        "NegTV zero alpha": same_bits(zero_alpha, student),
    }
    ok = all(checks.values())
    verdict(4, ok, "; ".join(f"{k}: {'identical' if v else 'DIFFERS'}" for k, v in checks.items()))
    assert ok


# ---------------------------------------------------------------------------
# 5 and 6. cross-lingual transfer and kappa ablation on the reference toy
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def transfer_run(out_root):
    spec = spec_for("transfer", out_root)
    start = time.perf_counter()
    corpus = build_corpus(spec)
    original = original_model(spec, corpus, spec.seeds[0])
    reports = run_seed(spec, spec.seeds[0])
    return spec, corpus, original, reports, time.perf_counter() - start


def test_criterion_5_cross_lingual_transfer(transfer_run, verdict):
    spec, corpus, original, reports, elapsed = transfer_run
    orig, ga, lt = reports
    langs = corpus.languages
    pre_ma = {z: orig.get(z, "forget", "ma") for z in langs}
    ga_keep = {z: ga.get(z, "forget", "ma") / pre_ma[z] for z in langs[1:]}
    lt_ratio = {z: lt.get(z, "forget", "ma") / pre_ma[z] for z in langs}
    ppl_ratio = {z: lt.get(z, "test", "ppl") / orig.get(z, "test", "ppl") for z in langs}
    high = [z for z in langs if corpus.resource_level[z] == "high"]
    low = [z for z in langs if corpus.resource_level[z] == "low"]
    val_ppl = split_ppl(original, corpus)
    checks = {
        "setup": (original.config.n_layers == 2 and original.config.d_model == 64
                  and 400 <= corpus.vocab_size <= 600 and len(langs) == 4
                  and min(pre_ma.values()) >= 0.9
                  and min(val_ppl[z] for z in low) > max(val_ppl[z] for z in high)),
        "a": min(ga_keep.values()) >= 0.6,
        "b": max(lt_ratio.values()) <= 0.5 and max(ppl_ratio.values()) <= 1.3,
        "runtime": elapsed <= 15 * 60,
    }
    ok = all(checks.values())
    fmt = lambda d: ", ".join(f"{z} {v:.2f}" for z, v in d.items())  # noqa: E731
    verdict(5, ok, f"V={corpus.vocab_size}, pre-unlearning forget MA [{fmt(pre_ma)}]; "
                   f"(a) GA on {langs[0]} keeps [{fmt(ga_keep)}] (>= 0.6); "
                   f"(b) LingTea forget MA ratio [{fmt(lt_ratio)}] (<= 0.5), test PPL ratio [{fmt(ppl_ratio)}] "
                   f"(<= 1.3); {elapsed:.0f}s (<= 900s)")
    assert ok


def test_criterion_6_kappa_ablation(transfer_run, out_root, verdict):
    spec, corpus, original, _, _ = transfer_run
    spec = replace(spec, recipe="kappa_ablation")
    reports = {r.method: r for r in run_seed(spec, spec.seeds[0])}
    fixed = {k: v for k, v in reports.items() if k.startswith("kappa=")}
    adaptive = reports["adaptive"]
    best_label = min(fixed, key=lambda k: fixed[k].mean("forget", "ma"))
    best = fixed[best_label]
    forget_gap = adaptive.mean("forget", "ma") - best.mean("forget", "ma")
    test_gap = abs(adaptive.mean("test", "ma") - best.mean("test", "ma"))
    ok = len(fixed) == 5 and forget_gap <= 0.05 and test_gap <= 0.05
    table = ", ".join(f"{k} {v.mean('forget', 'ma'):.3f}" for k, v in {"adaptive": adaptive, **fixed}.items())
    verdict(6, ok, f"forget MA [{table}]; adaptive - best fixed ({best_label}) = {forget_gap:+.3f} (<= 0.05); "
                   f"test MA gap {test_gap:.3f} (<= 0.05)")
    assert ok


# ---------------------------------------------------------------------------
# 7. step counts across the number of languages
# ---------------------------------------------------------------------------

def test_criterion_7_efficiency(out_root, verdict):
    spec = spec_for("efficiency", out_root)
    corpus = build_corpus(spec)
    original = original_model(spec, corpus, spec.seeds[0])
    teacher = original.frozen()
    cfg = replace(spec.unlearn, seed=spec.seeds[0])
    lingtea_steps, oracle_steps, early = {}, {}, {}
    for Z in (1, 2, 4, 8):
        sub = corpus.select_languages(corpus.languages[:Z])
        _, h = unlearn(original, teacher, sub, cfg)
        lingtea_steps[Z], early[Z] = h.optimizer_steps, h.stopped_early
        _, ho = oracle_unlearn(original, teacher, sub, cfg)
        oracle_steps[Z] = ho.optimizer_steps
    multi = [lingtea_steps[z] for z in (2, 4, 8)]
    spread = (max(multi) - min(multi)) / min(multi)
    zs = np.array([1, 2, 4, 8])
    slope = np.polyfit(zs, np.array([oracle_steps[z] for z in zs], dtype=float), 1)[0]
    ratio = slope / lingtea_steps[1]
    ok = all(early.values()) and spread < 0.25 and ratio >= 0.8
    verdict(7, ok, f"LingTea steps {lingtea_steps} (all early-stopped: {all(early.values())}), "
                   f"spread over Z=2,4,8 {spread:.2f} (< 0.25); Oracle steps {oracle_steps}, "
                   f"slope {slope:.1f} = {ratio:.2f}x single-language steps (>= 0.8)")
    assert ok


# ---------------------------------------------------------------------------
# 8. scaling recipe
# ---------------------------------------------------------------------------

def test_criterion_8_scaling(out_root, verdict):
    spec = spec_for("scaling", out_root)
    reports = {r.method: r for r in run_seed(spec, spec.seeds[0])}
    corpus = build_corpus(spec)
    rows, worst = [], 0.0
    complete = True
    for m in spec.multipliers:
        orig = reports.get(f"Original x{m}")
        for kind in ("Batch", "Sequential"):
            rep = reports.get(f"{kind} x{m}")
            if rep is None or orig is None:
                complete = False
                continue
            ratio = max(rep.get(z, "test", "ppl") / orig.get(z, "test", "ppl") for z in corpus.languages)
            fma = rep.mean("forget", "ma") / orig.mean("forget", "ma")
            worst = max(worst, ratio)
            rows.append(f"{kind.lower()} x{m}: forget MA ratio {fma:.2f}, max test PPL ratio {ratio:.2f}")
    ok = complete and worst <= 1.3
    verdict(8, ok, "; ".join(rows) + " (test PPL <= 1.3x original at every multiplier)")
    assert ok


# ---------------------------------------------------------------------------
# 9. protocol conformance
# ---------------------------------------------------------------------------

def test_criterion_9_protocol(verdict):
    stopper = EarlyStopping(tolerance=5)
    script = [0.9, 0.7, 0.8, 0.75, 0.71, 0.9, 0.72, 0.5]
    stop_at = next(i for i, v in enumerate(script) if (stopper.update(v), stopper.should_stop)[1])
    # best 0.7 at index 1, then five non-improvements end at index 6
    es_ok = stop_at == 6

    worst = 0.0
    for total, ratio, peak in [(100, 0.1, 5e-4), (37, 0.25, 1.0), (1000, 0.03, 3e-4), (10, 0.0, 2.0)]:
        w = int(round(ratio * total))
        for s in range(total + 1):
            expect = peak * s / w if s < w else peak * max(0, total - s) / (total - w)
            worst = max(worst, abs(linear_warmup_decay(s, total, ratio, peak) - expect))
    ok = es_ok and worst <= 1e-12
    verdict(9, ok, f"early stop fired after {stop_at - 1} non-improvements (expected 5); "
                   f"max |lr - closed form| {worst:.1e} (<= 1e-12)")
    assert ok
