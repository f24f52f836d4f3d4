"""Shared oracles for the test suite."""

from __future__ import annotations

import numpy as np

from lingtea import tensor as T
from lingtea.corpus import SynthSpec
from lingtea.model import ModelConfig, ModelParams

H = 1e-5


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f, arrays: list[np.ndarray], h: float = H) -> list[np.ndarray]:
    """Central differences of scalar ``f(*arrays)`` with respect to each array."""
    grads = []
    for x in arrays:
        g = np.zeros_like(x)
        it = np.nditer(x, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = x[i]
            x[i] = old + h
            up = f(*arrays)
            x[i] = old - h
            down = f(*arrays)
            x[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic_grad(build, arrays: list[np.ndarray]) -> tuple[float, list[np.ndarray]]:
    leaves = [T.Tensor(x.copy(), requires_grad=True) for x in arrays]
    out = build(*leaves)
    out.backward()
    return out.item(), [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def check_op(build, arrays: list[np.ndarray]) -> float:
    """Worst relative error between backprop and central differences."""
    def f(*xs):
        with T.no_grad():
            return build(*[T.Tensor(x) for x in xs]).item()

    _, analytic = analytic_grad(build, arrays)
    numeric = numeric_grad(f, [x.copy() for x in arrays])
    return max(rel_err(a, n) for a, n in zip(analytic, numeric))


def tiny_config(vocab_size: int = 11, seed: int = 0, **kw) -> ModelConfig:
    base = dict(vocab_size=vocab_size, d_model=8, n_layers=1, n_heads=2, max_seq_len=8, seed=seed)
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(vocab_size: int = 11, seed: int = 0, **kw) -> ModelParams:
    return ModelParams.init(tiny_config(vocab_size, seed, **kw))


def small_spec(**kw) -> SynthSpec:
    """A corpus small enough for unit tests (a few hundred sequences)."""
    base = dict(n_languages=3, resource_levels=("high", "high", "low"), content_vocab=20, branching=3,
                min_len=5, max_len=7, forget_size=8, retain_size=16, validation_size=8, test_size=8,
                pretrain_en=40, names=None)
    base.update(kw)
    return SynthSpec(**base)


# ---------------------------------------------------------------------------
# gradient-check catalogue: name -> (builder, input generator)
# ---------------------------------------------------------------------------

def _away_from_zero(rng, shape):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 0.1, x + np.sign(x) * 0.2 + 0.1 * (x == 0), x)


def _targets(rng, shape, V):
    return rng.integers(0, V, size=shape)


def op_cases():
    """Each entry builds a scalar from leaves; projections by a fixed random weight keep all outputs live."""
    def proj(out, seed=99):
        w = np.random.default_rng(seed).normal(size=out.shape)
        return T.weighted_sum(out, w)

    V = 5
    tgt = np.random.default_rng(7).integers(0, V, size=(2, 3))
    mask = np.array([[True, True, False], [True, True, True]])
    ids = np.array([[0, 2, 2], [4, 1, 0]])
    return {
        "add": (lambda a, b: proj(T.add(a, b)), lambda r: [r.normal(size=(2, 3)), r.normal(size=(3,))]),
        "sub": (lambda a, b: proj(T.sub(a, b)), lambda r: [r.normal(size=(2, 3)), r.normal(size=(2, 3))]),
        "mul": (lambda a, b: proj(T.mul(a, b)), lambda r: [r.normal(size=(4, 3)), r.normal(size=(3,))]),
        "scale": (lambda a: proj(T.scale(a, -1.7)), lambda r: [r.normal(size=(3, 2))]),
        "exp": (lambda a: proj(T.exp(a)), lambda r: [r.normal(size=(3, 2))]),
        "log": (lambda a: proj(T.log(a)), lambda r: [r.uniform(0.5, 2.0, size=(3, 2))]),
        "tanh": (lambda a: proj(T.tanh(a)), lambda r: [r.normal(size=(3, 2))]),
        "relu": (lambda a: proj(T.relu(a)), lambda r: [_away_from_zero(r, (3, 4))]),
        "gelu": (lambda a: proj(T.gelu(a)), lambda r: [r.normal(size=(3, 4))]),
        "sum_all": (lambda a: T.sum_all(T.mul(a, a)), lambda r: [r.normal(size=(2, 3))]),
        "mean_all": (lambda a: T.mean_all(T.mul(a, a)), lambda r: [r.normal(size=(2, 3))]),
        "sum_last": (lambda a: proj(T.sum_last(a)), lambda r: [r.normal(size=(2, 3, 4))]),
        "reshape": (lambda a: proj(T.reshape(a, (3, 4))), lambda r: [r.normal(size=(2, 6))]),
        "transpose": (lambda a: proj(T.transpose(a, (1, 0, 2))), lambda r: [r.normal(size=(2, 3, 4))]),
        "getitem": (lambda a: proj(T.getitem(a, (slice(None), slice(1, 3)))), lambda r: [r.normal(size=(3, 4))]),
        "matmul": (lambda a, b: proj(T.matmul(a, b)), lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(4, 5))]),
        "matmul_batched": (lambda a, b: proj(T.matmul(a, b)),
                           lambda r: [r.normal(size=(2, 3, 4)), r.normal(size=(2, 4, 2))]),
        "embedding": (lambda w: proj(T.embedding(w, ids)), lambda r: [r.normal(size=(V, 3))]),
        "layer_norm": (lambda x, g, b: proj(T.layer_norm(x, g, b)),
                       lambda r: [r.normal(size=(2, 3, 6)), r.normal(size=(6,)), r.normal(size=(6,))]),
        "softmax": (lambda a: proj(T.softmax(a)), lambda r: [r.normal(size=(2, 5))]),
        "log_softmax": (lambda a: proj(T.log_softmax(a)), lambda r: [r.normal(size=(2, 5))]),
        "gather_log_prob": (lambda a: proj(T.gather_log_prob(T.log_softmax(a), tgt)),
                            lambda r: [r.normal(size=(2, 3, V))]),
        "kl_divergence": (lambda p, q: T.kl_divergence(T.log_softmax(p), T.log_softmax(q)),
                          lambda r: [r.normal(size=(3, V)), r.normal(size=(3, V))]),
        "causal_attention": (lambda q, k, v: proj(T.causal_attention(q, k, v)),
                             lambda r: [r.normal(size=(2, 4, 3)) for _ in range(3)]),
        "masked_row_mean": (lambda a: proj(T.masked_row_mean(a, mask)), lambda r: [r.normal(size=(2, 3))]),
    }


def model_loss_case(seed: int):
    """Full-model scalar: teacher-guided retain loss plus forget loss on random tokens."""
    from lingtea.losses import prediction_mask, retain_loss, sequence_kl, sequence_nll, teacher_confidence
    from lingtea.model import next_token_log_dists

    rng = np.random.default_rng(seed)
    cfg = tiny_config(vocab_size=9, seed=seed)
    teacher = ModelParams.init(tiny_config(vocab_size=9, seed=seed + 1000)).frozen()
    tokens = rng.integers(0, 9, size=(2, 6))
    mask = prediction_mask(np.array([6, 4]), 5)
    with T.no_grad():
        t_ld = next_token_log_dists(teacher, tokens)
    kappa = teacher_confidence(t_ld, tokens[:, 1:], mask)

    def build(params):
        ld = next_token_log_dists(params, tokens)
        lp = T.gather_log_prob(ld, tokens[:, 1:])
        l_r = T.mean_all(retain_loss(sequence_kl(t_ld, ld, mask), sequence_nll(lp, mask), kappa))
        return T.add(T.mean_all(T.scale(sequence_nll(lp, mask), -1.0)), T.scale(l_r, 0.7))

    return cfg, build


def model_directional_error(seed: int, h: float = H) -> float:
    """Relative error of the backprop gradient along a random direction in parameter space."""
    cfg, build = model_loss_case(seed)
    params = ModelParams.init(cfg)
    loss = build(params)
    loss.backward()
    rng = np.random.default_rng(seed + 5000)
    direction = {n: rng.normal(size=t.shape) for n, t in params.items()}
    analytic = sum(float(np.sum(t.grad * direction[n])) for n, t in params.items())

    def at(step):
        shifted = ModelParams(cfg, {n: T.Tensor(t.data + step * direction[n]) for n, t in params.items()})
        with T.no_grad():
            return build(shifted).item()

    numeric = (at(h) - at(-h)) / (2 * h)
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
