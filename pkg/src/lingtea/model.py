"""Tiny pre-norm decoder-only transformer, checkpoints and task vectors."""

from __future__ import annotations

import io
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    ConfigError,
    LengthError,
    StructureError,
    VocabularyError,
)
from .tensor import Tensor

INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 512
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq_len: int = 64
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name != "seed" and getattr(self, f.name) <= 0:
                raise ConfigError(f"model.{f.name} must be positive, got {getattr(self, f.name)}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"model.d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    @property
    def d_ff(self) -> int:
        return 4 * self.d_model


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter group names and shapes for ``config``."""
    V, d, L, f = config.vocab_size, config.d_model, config.max_seq_len, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (V, d), "pos_emb": (L, d)}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "ln1.gain": (d,), p + "ln1.bias": (d,),
            p + "attn.w_qkv": (d, 3 * d), p + "attn.b_qkv": (3 * d,),
            p + "attn.w_out": (d, d), p + "attn.b_out": (d,),
            p + "ln2.gain": (d,), p + "ln2.bias": (d,),
            p + "mlp.w_in": (d, f), p + "mlp.b_in": (f,),
            p + "mlp.w_out": (f, d), p + "mlp.b_out": (d,),
        })
    shapes.update({"ln_f.gain": (d,), "ln_f.bias": (d,), "head": (d, V)})
    return shapes


def param_count(config: ModelConfig) -> int:
    """Closed form: ``2Vd + Ld + n_layers(12d^2 + 13d) + 2d`` (with d_ff = 4d)."""
    V, d, L = config.vocab_size, config.d_model, config.max_seq_len
    return 2 * V * d + L * d + config.n_layers * (12 * d * d + 13 * d) + 2 * d


class ModelParams:
    """Named parameter groups plus the config that shaped them."""

    def __init__(self, config: ModelConfig, groups: dict[str, Tensor]):
        expected = param_shapes(config)
        if list(groups) != list(expected):
            missing = [n for n in expected if n not in groups] or [n for n in groups if n not in expected]
            raise StructureError(f"parameter groups do not match config; first mismatch: {missing[:1]}")
        for name, shape in expected.items():
            if groups[name].shape != shape:
                raise StructureError(f"group {name!r} has shape {list(groups[name].shape)}, expected {list(shape)}")
        self.config = config
        self.groups = groups

    @classmethod
    def init(cls, config: ModelConfig) -> "ModelParams":
        rng = np.random.default_rng(config.seed)
        groups = {}
        for name, shape in param_shapes(config).items():
            if name.endswith(".gain"):
                data = np.ones(shape)
            elif len(shape) == 1:
                data = np.zeros(shape)
            else:
                data = rng.normal(0.0, INIT_STD, size=shape)
            groups[name] = Tensor(data, requires_grad=True)
        return cls(config, groups)

    def __getitem__(self, name: str) -> Tensor:
        return self.groups[name]

    def __iter__(self):
        return iter(self.groups.values())

    def items(self):
        return self.groups.items()

    def num_params(self) -> int:
        return sum(t.data.size for t in self)

    def copy(self, requires_grad: bool = True) -> "ModelParams":
        return ModelParams(self.config, {n: Tensor(t.data.copy(), requires_grad=requires_grad)
                                         for n, t in self.groups.items()})

    def frozen(self) -> "ModelParams":
        """A detached copy whose tensors never require grad (teacher weights)."""
        return self.copy(requires_grad=False)

    def zero_grad(self) -> None:
        for t in self:
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self.groups.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, t in self.groups.items():
            t.data = np.array(state[n], dtype=np.float64)

    def equal(self, other: "ModelParams") -> bool:
        """Bit-level equality of config and every group."""
        return self.config == other.config and all(
            np.array_equal(a.data, b.data) and a.data.tobytes() == b.data.tobytes()
            for a, b in zip(self, other))


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------

def _check_tokens(config: ModelConfig, tokens: np.ndarray) -> None:
    if tokens.shape[-1] < 1 or tokens.shape[-1] > config.max_seq_len:
        raise LengthError(f"sequence length {tokens.shape[-1]} outside [1, {config.max_seq_len}]")
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise VocabularyError(f"token id {int(tokens.max())} not in vocabulary of size {config.vocab_size}")


def forward(params: ModelParams, tokens) -> Tensor:
    """Logits ``[..., T, V]`` for integer tokens ``[..., T]``.

    Accepts one sequence (``[T]``) or a right-padded batch (``[B, T]``). The
    causal mask makes position ``t`` depend on ``tokens[..., :t+1]`` only, so
    right padding never changes the logits of real positions.
    """
    cfg = params.config
    tokens = np.asarray(tokens, dtype=np.int64)
    single = tokens.ndim == 1
    if single:
        tokens = tokens[None, :]
    _check_tokens(cfg, tokens)
    B, n = tokens.shape
    d, H = cfg.d_model, cfg.n_heads
    dh = d // H

    x = T.embedding(params["tok_emb"], tokens) + params["pos_emb"][:n]
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        h = T.layer_norm(x, params[p + "ln1.gain"], params[p + "ln1.bias"])
        qkv = h @ params[p + "attn.w_qkv"] + params[p + "attn.b_qkv"]
        heads = T.transpose(T.reshape(qkv, (B, n, 3, H, dh)), (2, 0, 3, 1, 4))
        att = T.causal_attention(heads[0], heads[1], heads[2])
        att = T.reshape(T.transpose(att, (0, 2, 1, 3)), (B, n, d))
        x = x + (att @ params[p + "attn.w_out"] + params[p + "attn.b_out"])
        h = T.layer_norm(x, params[p + "ln2.gain"], params[p + "ln2.bias"])
        h = T.gelu(h @ params[p + "mlp.w_in"] + params[p + "mlp.b_in"])
        x = x + (h @ params[p + "mlp.w_out"] + params[p + "mlp.b_out"])
    x = T.layer_norm(x, params["ln_f.gain"], params["ln_f.bias"])
    logits = x @ params["head"]
    return T.reshape(logits, (n, cfg.vocab_size)) if single else logits


def next_token_log_dists(params: ModelParams, tokens) -> Tensor:
    """``log p(. | x_<t)`` for the T-1 predicted positions, ``[..., T-1, V]``."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape[-1] < 2:
        raise LengthError(f"need at least 2 tokens to predict a next token, got {tokens.shape[-1]}")
    logits = forward(params, tokens[..., :-1])
    return T.log_softmax(logits)


def sequence_log_probs(params: ModelParams, tokens) -> Tensor:
    """``log p(x_t | x_<t)`` for t = 2..T, shape ``[..., T-1]``."""
    tokens = np.asarray(tokens, dtype=np.int64)
    return T.gather_log_prob(next_token_log_dists(params, tokens), tokens[..., 1:])


# ---------------------------------------------------------------------------
# task vectors
# ---------------------------------------------------------------------------

def _two_sum(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@dataclass
class TaskVector:
    """``tuned - base`` per group, kept as ``delta + residual`` exactly.

    ``residual`` holds the rounding error of the subtraction, so adding the
    vector back onto ``base`` reproduces ``tuned`` bit for bit.
    """
    config: ModelConfig
    delta: dict[str, np.ndarray]
    residual: dict[str, np.ndarray]

    @classmethod
    def between(cls, tuned: ModelParams, base: ModelParams) -> "TaskVector":
        _check_same_structure(tuned, base)
        delta, residual = {}, {}
        for name, t in tuned.items():
            delta[name], residual[name] = _two_sum(t.data, -base[name].data)
        return cls(tuned.config, delta, residual)

    @classmethod
    def zeros(cls, config: ModelConfig) -> "TaskVector":
        shapes = param_shapes(config)
        return cls(config, {n: np.zeros(s) for n, s in shapes.items()},
                   {n: np.zeros(s) for n, s in shapes.items()})

    def values(self) -> dict[str, np.ndarray]:
        return {n: self.delta[n] + self.residual[n] for n in self.delta}


def _check_same_structure(a: ModelParams, b: ModelParams) -> None:
    for name in set(a.groups) | set(b.groups):
        if name not in a.groups or name not in b.groups:
            raise StructureError(f"group {name!r} present in only one model")
        if a[name].shape != b[name].shape:
            raise StructureError(f"group {name!r}: shapes {list(a[name].shape)} vs {list(b[name].shape)}")


def apply_task_vectors(base: ModelParams, tv_forget: TaskVector, tv_retain: TaskVector,
                       alpha_f: float = 1.0, alpha_r: float = 1.0) -> ModelParams:
    """``base - alpha_f * delta_forget + alpha_r * delta_retain`` per element."""
    for tv in (tv_forget, tv_retain):
        for name, t in base.items():
            if name not in tv.delta or tv.delta[name].shape != t.shape:
                raise StructureError(f"task vector group {name!r} does not match base model")
        extra = set(tv.delta) - set(base.groups)
        if extra:
            raise StructureError(f"task vector has unknown group {sorted(extra)[0]!r}")
    out = {}
    for name, t in base.items():
        a_hi = -alpha_f * tv_forget.delta[name]
        a_lo = -alpha_f * tv_forget.residual[name]
        b_hi = alpha_r * tv_retain.delta[name]
        b_lo = alpha_r * tv_retain.residual[name]
        s1, e1 = _two_sum(t.data, a_hi)
        s2, e2 = _two_sum(s1, b_hi)
        out[name] = Tensor(s2 + (((e1 + e2) + a_lo) + b_lo), requires_grad=True)
    return ModelParams(base.config, out)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"LTCKPT1"
_U64 = struct.Struct("<Q")


def _config_text(config: ModelConfig) -> bytes:
    return "".join(f"{k}={v}\n" for k, v in asdict(config).items()).encode("utf-8")


def _parse_config(text: str) -> ModelConfig:
    values = {}
    for line in text.splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CheckpointFormatError(f"malformed config line {line!r}")
        values[key] = int(value)
    try:
        return ModelConfig(**values)
    except TypeError as exc:
        raise CheckpointFormatError(f"bad config block: {exc}") from exc


def save_checkpoint(params: ModelParams, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    cfg = _config_text(params.config)
    buf.write(_U64.pack(len(cfg)))
    buf.write(cfg)
    buf.write(_U64.pack(len(params.groups)))
    for name, t in params.items():
        raw = name.encode("utf-8")
        buf.write(_U64.pack(len(raw)))
        buf.write(raw)
        buf.write(_U64.pack(t.ndim))
        for dim in t.shape:
            buf.write(_U64.pack(dim))
        buf.write(t.data.astype("<f8").tobytes())
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointTruncatedError(f"checkpoint truncated at byte {len(self.blob)} (needed {self.pos + n})")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]


def load_checkpoint(path, expected: ModelConfig | None = None) -> ModelParams:
    """Read a checkpoint; with ``expected``, every group must match that config."""
    r = _Reader(Path(path).read_bytes())
    magic = r.blob[:len(MAGIC)]
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    r.pos = len(MAGIC)
    config = _parse_config(r.take(r.u64()).decode("utf-8"))
    target = expected or config
    shapes = param_shapes(target)
    n_groups = r.u64()
    groups = {}
    for _ in range(n_groups):
        name = r.take(r.u64()).decode("utf-8")
        dims = tuple(r.u64() for _ in range(r.u64()))
        data = np.frombuffer(r.take(8 * int(np.prod(dims, dtype=np.int64))), dtype="<f8").reshape(dims)
        if name not in shapes:
            raise CheckpointShapeError(f"group {name!r} is not part of the expected model")
        if dims != shapes[name]:
            raise CheckpointShapeError(f"group {name!r} has shape {list(dims)}, expected {list(shapes[name])}")
        groups[name] = Tensor(data.astype(np.float64), requires_grad=True)
    missing = [n for n in shapes if n not in groups]
    if missing:
        raise CheckpointShapeError(f"group {missing[0]!r} missing from checkpoint")
    if r.pos != len(r.blob):
        raise CheckpointFormatError(f"{len(r.blob) - r.pos} trailing bytes after last group")
    return ModelParams(target, {n: groups[n] for n in shapes})
