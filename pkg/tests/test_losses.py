import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lingtea import tensor as T
from lingtea.errors import ContractError, DimensionError, VocabularyError
from lingtea.losses import (
    compute_bundle,
    forget_loss,
    language_modeling_loss,
    language_teaching_loss,
    prediction_mask,
    retain_loss,
    sequence_kl,
    sequence_nll,
    teacher_confidence,
    total_loss,
)


def log_dists(rng, shape, scale=2.0):
    return T.log_softmax(T.Tensor(rng.normal(scale=scale, size=shape))).data


def leaf(x):
    return T.Tensor(np.array(x, dtype=np.float64), requires_grad=True)


class TestForgetAndLM:
    def test_constant_log_probs(self):
        assert forget_loss(T.Tensor(np.full(7, -2.0))).item() == -2.0

    def test_zero_log_probs(self):
        assert forget_loss(T.Tensor(np.zeros(5))).item() == 0.0

    def test_uniform_lm_loss(self):
        assert language_modeling_loss(T.Tensor(np.full(9, -math.log(16)))).item() == pytest.approx(math.log(16), abs=1e-15)

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 0, allow_nan=False)))
    @settings(max_examples=100, deadline=None)
    def test_lm_is_exact_negation(self, lp):
        assert language_modeling_loss(T.Tensor(lp)).item() == -forget_loss(T.Tensor(lp)).item()

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients_exact_negation(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 5))
        mask = prediction_mask(np.array([6, 3, 4]), 5)
        a, b = leaf(x), leaf(x)
        forget_loss(a, mask).backward()
        language_modeling_loss(b, mask).backward()
        np.testing.assert_array_equal(a.grad, -b.grad)

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(0)
        lp = -rng.uniform(0, 5, size=(3, 6))
        lengths = np.array([7, 4, 2])
        mask = prediction_mask(lengths, 6)
        per_seq = []
        for i in range(3):
            vals = [lp[i, t] for t in range(lengths[i] - 1)]
            per_seq.append(-sum(vals) / len(vals))
        expect = sum(per_seq) / 3
        assert language_modeling_loss(T.Tensor(lp), mask).item() == pytest.approx(expect, abs=1e-14)

    def test_padding_ignored(self):
        lp = np.array([[-1.0, -3.0, -99.0]])
        mask = np.array([[True, True, False]])
        assert forget_loss(T.Tensor(lp), mask).item() == -2.0

    def test_mask_shape_checked(self):
        with pytest.raises(DimensionError):
            forget_loss(T.Tensor(np.zeros((2, 3))), np.ones((2, 4), dtype=bool))


class TestTeaching:
    def test_student_equals_teacher(self):
        ld = log_dists(np.random.default_rng(0), (6, 10))
        assert abs(language_teaching_loss(T.Tensor(ld), T.Tensor(ld)).item()) <= 1e-12

    def test_one_hot_teacher_uniform_student(self):
        with np.errstate(divide="ignore"):
            teacher = np.log(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))
        student = np.full((3, 2), -math.log(2))
        assert language_teaching_loss(T.Tensor(teacher), T.Tensor(student)).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(1)
        p, q = log_dists(rng, (4, 6)), log_dists(rng, (4, 6))
        total = 0.0
        for t in range(4):
            total += sum(math.exp(p[t, v]) * (p[t, v] - q[t, v]) for v in range(6))
        assert language_teaching_loss(T.Tensor(p), T.Tensor(q)).item() == pytest.approx(total / 4, abs=1e-14)

    def test_teacher_gets_no_gradient(self):
        rng = np.random.default_rng(2)
        teacher, student = leaf(log_dists(rng, (3, 5))), leaf(log_dists(rng, (3, 5)))
        language_teaching_loss(teacher, student).backward()
        assert teacher.grad is None
        assert student.grad is not None

    def test_vocab_mismatch(self):
        with pytest.raises(DimensionError):
            language_teaching_loss(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 4))))


class TestConfidence:
    def test_uniform_teacher(self):
        ld = np.full((5, 10), -math.log(10))
        assert teacher_confidence(ld, np.arange(5)) == pytest.approx(0.1, abs=1e-15)

    def test_certain_teacher(self):
        ld = np.full((3, 4), -np.inf)
        targets = np.array([2, 0, 3])
        ld[np.arange(3), targets] = 0.0
        assert teacher_confidence(ld, targets) == 1.0

    def test_matches_scalar_loop(self):
        rng = np.random.default_rng(3)
        ld = log_dists(rng, (2, 5, 7))
        targets = rng.integers(0, 7, size=(2, 5))
        mask = prediction_mask(np.array([6, 3]), 5)
        got = teacher_confidence(ld, targets, mask)
        for b in range(2):
            n = int(mask[b].sum())
            expect = sum(math.exp(ld[b, t, targets[b, t]]) for t in range(n)) / n
            assert got[b] == pytest.approx(expect, abs=1e-15)

    def test_in_unit_interval(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            ld = log_dists(rng, (int(rng.integers(1, 6)), 8), scale=float(rng.uniform(0.1, 20)))
            k = teacher_confidence(ld, rng.integers(0, 8, size=ld.shape[0]))
            assert 0.0 <= k <= 1.0

    def test_bad_target(self):
        with pytest.raises(VocabularyError):
            teacher_confidence(np.zeros((2, 3)), np.array([0, 3]))


class TestRetainAndTotal:
    def test_endpoints(self):
        assert retain_loss(2.5, 4.0, 1.0) == 2.5
        assert retain_loss(2.5, 4.0, 0.0) == 4.0

    def test_arithmetic(self):
        assert retain_loss(2.0, 4.0, 0.3) == pytest.approx(3.4, abs=1e-15)

    @pytest.mark.parametrize("kappa", [-0.1, 1.5, float("nan")])
    def test_kappa_range(self, kappa):
        with pytest.raises(ContractError):
            retain_loss(1.0, 1.0, kappa)

    def test_tensor_endpoints_exact(self):
        rng = np.random.default_rng(5)
        lt, lm = T.Tensor(rng.uniform(size=4)), T.Tensor(rng.uniform(size=4))
        np.testing.assert_array_equal(retain_loss(lt, lm, np.ones(4)).data, lt.data)
        np.testing.assert_array_equal(retain_loss(lt, lm, np.zeros(4)).data, lm.data)

    def test_total(self):
        assert total_loss(-1.0, 2.0, 0.0) == -1.0
        assert total_loss(-1.0, 2.0, 1.0) == 1.0
        with pytest.raises(ContractError):
            total_loss(1.0, 1.0, -0.5)

    def test_joint_gradient_is_sum_of_parts(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 4, 5))
        teacher = log_dists(rng, (2, 4, 5))
        targets = rng.integers(0, 5, size=(2, 4))
        mask = prediction_mask(np.array([5, 3]), 4)
        lam = 0.7

        def parts(z):
            ld = T.log_softmax(z)
            lp = T.gather_log_prob(ld, targets)
            k = teacher_confidence(teacher, targets, mask)
            l_r = T.mean_all(retain_loss(sequence_kl(T.Tensor(teacher), ld, mask), sequence_nll(lp, mask), k))
            return forget_loss(lp, mask), l_r

        joint = leaf(x)
        l_f, l_r = parts(joint)
        total_loss(l_f, l_r, lam).backward()
        a, b = leaf(x), leaf(x)
        parts(a)[0].backward()
        T.scale(parts(b)[1], lam).backward()
        np.testing.assert_allclose(joint.grad, a.grad + b.grad, rtol=0, atol=1e-15)


class TestBundle:
    def test_single_sequence_identity(self):
        rng = np.random.default_rng(7)
        student, teacher = log_dists(rng, (1, 6, 9)), log_dists(rng, (1, 6, 9))
        targets = rng.integers(0, 9, size=(1, 6))
        forget = T.Tensor(-rng.uniform(size=(1, 6)))
        bundle, total = compute_bundle(T.Tensor(student), T.Tensor(teacher), targets, lam=0.5,
                                       forget_log_probs=forget)
        assert bundle.l_r == pytest.approx(bundle.kappa * bundle.l_lt + (1 - bundle.kappa) * bundle.l_lm, abs=1e-14)
        assert bundle.l_total == pytest.approx(bundle.l_f + 0.5 * bundle.l_r, abs=1e-14)
        assert total.item() == bundle.l_total
        assert set(bundle.as_dict()) == {"l_f", "l_lt", "l_lm", "kappa", "l_r", "lambda", "l_total"}
