"""Encoder that embeds whole series as variate tokens.

Pipeline: optional per-window instance normalization, transpose to
(N, T), affine embedding R^T -> R^D, a stack of blocks over the (N, D)
token matrix, affine projection R^D -> R^S, transpose back to (S, N),
statistics restored.

Each block holds up to two post-norm residual sublayers:

* correlation sublayer (``variate_role``) — mixes across the N tokens:
  multi-head self-attention over rows, a shared MLP across the variate
  axis, or absent
* representation sublayer (``temporal_role``) — processes each token's
  D-vector: a shared per-token MLP, self-attention over the D embedded
  positions (tokens of dimension N), or absent

Attention over rows keeps the token count free, so a model trained on
one variate count runs on any other; the variate-axis MLP and the
temporal attention bind N at construction time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import (Tensor, ShapeError, add, concat_lastdim, gelu,
                       layer_norm, linear, matmul, mul, scale,
                       slice_lastdim, softmax_lastdim, transpose_last2)

ROLE_ATTENTION = "attention"
ROLE_FFN = "ffn"
ROLE_NONE = "none"

# (variate_role, temporal_role) pairs of the component grid
VALID_DESIGNS = (
    (ROLE_ATTENTION, ROLE_FFN),        # default inverted arrangement
    (ROLE_ATTENTION, ROLE_ATTENTION),
    (ROLE_FFN, ROLE_ATTENTION),
    (ROLE_FFN, ROLE_FFN),
    (ROLE_ATTENTION, ROLE_NONE),
    (ROLE_NONE, ROLE_FFN),
)

INSTANCE_NORM_EPS = 1e-5


class ConfigError(ValueError):
    """Invalid model configuration."""


class InputError(ValueError):
    """Invalid forward input (bad shape is raised as ShapeError instead)."""


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


@dataclass
class ModelConfig:
    lookback_T: int
    horizon_S: int
    token_dim_D: int = 64
    blocks_L: int = 2
    heads: int = 8
    dk: int | None = None          # per-head dim; defaults to D // heads
    ffn_hidden: int = 128
    variate_role: str = ROLE_ATTENTION
    temporal_role: str = ROLE_FFN
    use_instance_norm: bool = True
    layer_norm_eps: float = 1e-5
    dropout: float = 0.0
    n_variates: int | None = None  # required by designs that bind N
    tie_qk: bool = False           # W_K is W_Q (symmetric score test mode)

    def __post_init__(self):
        self.validate()

    @property
    def design(self):
        return (self.variate_role, self.temporal_role)

    @property
    def dk_effective(self) -> int:
        return self.token_dim_D // self.heads if self.dk is None else self.dk

    @property
    def binds_variate_count(self) -> bool:
        return self.variate_role == ROLE_FFN or self.temporal_role == ROLE_ATTENTION

    def temporal_heads(self) -> tuple[int, int]:
        """(head count, per-head dim) for attention over the D positions."""
        n = self.n_variates
        h = self.heads if n % self.heads == 0 else 1
        return h, n // h

    def validate(self):
        for name in ("lookback_T", "horizon_S", "token_dim_D", "blocks_L",
                     "heads", "ffn_hidden"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.design not in VALID_DESIGNS:
            raise ConfigError(
                f"(variate_role, temporal_role) = {self.design} is not one of "
                f"the supported designs {VALID_DESIGNS}")
        if self.dk is None:
            if self.token_dim_D % self.heads != 0:
                raise ConfigError(
                    f"token_dim_D={self.token_dim_D} not divisible by heads={self.heads}")
        elif self.heads * self.dk != self.token_dim_D:
            raise ConfigError(
                f"heads*dk = {self.heads * self.dk} must equal token_dim_D={self.token_dim_D}")
        if self.binds_variate_count:
            if self.n_variates is None or self.n_variates < 1:
                raise ConfigError(
                    f"design {self.design} binds the variate count; set n_variates")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must lie in [0, 1)")
        if self.layer_norm_eps <= 0:
            raise ConfigError("layer_norm_eps must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ModelParams:
    """Named parameter tensors in a fixed creation order."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name, tensor):
        if name in self._tensors:
            raise ValueError(f"duplicate parameter {name}")
        self._tensors[name] = tensor

    def __getitem__(self, name) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def items(self):
        return self._tensors.items()

    def names(self):
        return list(self._tensors)

    def tensors(self):
        return list(self._tensors.values())

    def n_parameters(self):
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def state_arrays(self):
        return {name: t.values.copy() for name, t in self._tensors.items()}

    def load_state_arrays(self, state):
        for name, t in self._tensors.items():
            arr = state[name]
            if arr.shape != t.values.shape:
                raise ValueError(f"parameter {name}: shape {arr.shape} != {t.values.shape}")
            t.values = np.ascontiguousarray(arr, dtype=np.float64)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded parameter creation; draw order is fixed, so a (config, seed)
    pair always yields bit-identical values."""
    rng = np.random.default_rng(seed)
    p = ModelParams()
    D, T, S, F = (config.token_dim_D, config.lookback_T,
                  config.horizon_S, config.ffn_hidden)
    H = config.heads * config.dk_effective

    p.add("embed.weight", Tensor(_uniform(rng, (D, T), T), requires_grad=True, name="embed.weight"))
    p.add("embed.bias", Tensor(np.zeros(D), requires_grad=True, name="embed.bias"))

    for b in range(config.blocks_L):
        pre = f"block{b}"
        if config.variate_role == ROLE_ATTENTION:
            wq = Tensor(_uniform(rng, (H, D), D), requires_grad=True, name=f"{pre}.attn.wq")
            p.add(f"{pre}.attn.wq", wq)
            if not config.tie_qk:
                p.add(f"{pre}.attn.wk", Tensor(_uniform(rng, (H, D), D), requires_grad=True,
                                               name=f"{pre}.attn.wk"))
            p.add(f"{pre}.attn.wv", Tensor(_uniform(rng, (H, D), D), requires_grad=True,
                                           name=f"{pre}.attn.wv"))
            p.add(f"{pre}.attn.wo", Tensor(_uniform(rng, (D, H), H), requires_grad=True,
                                           name=f"{pre}.attn.wo"))
        elif config.variate_role == ROLE_FFN:
            N = config.n_variates
            p.add(f"{pre}.vmix.w1", Tensor(_uniform(rng, (F, N), N), requires_grad=True,
                                           name=f"{pre}.vmix.w1"))
            p.add(f"{pre}.vmix.b1", Tensor(np.zeros(F), requires_grad=True, name=f"{pre}.vmix.b1"))
            p.add(f"{pre}.vmix.w2", Tensor(_uniform(rng, (N, F), F), requires_grad=True,
                                           name=f"{pre}.vmix.w2"))
            p.add(f"{pre}.vmix.b2", Tensor(np.zeros(N), requires_grad=True, name=f"{pre}.vmix.b2"))
        if config.variate_role != ROLE_NONE:
            p.add(f"{pre}.norm1.gain", Tensor(np.ones(D), requires_grad=True, name=f"{pre}.norm1.gain"))
            p.add(f"{pre}.norm1.bias", Tensor(np.zeros(D), requires_grad=True, name=f"{pre}.norm1.bias"))

        if config.temporal_role == ROLE_FFN:
            p.add(f"{pre}.ffn.w1", Tensor(_uniform(rng, (F, D), D), requires_grad=True,
                                          name=f"{pre}.ffn.w1"))
            p.add(f"{pre}.ffn.b1", Tensor(np.zeros(F), requires_grad=True, name=f"{pre}.ffn.b1"))
            p.add(f"{pre}.ffn.w2", Tensor(_uniform(rng, (D, F), F), requires_grad=True,
                                          name=f"{pre}.ffn.w2"))
            p.add(f"{pre}.ffn.b2", Tensor(np.zeros(D), requires_grad=True, name=f"{pre}.ffn.b2"))
        elif config.temporal_role == ROLE_ATTENTION:
            N = config.n_variates
            th, tdk = config.temporal_heads()
            Ht = th * tdk
            p.add(f"{pre}.tattn.wq", Tensor(_uniform(rng, (Ht, N), N), requires_grad=True,
                                            name=f"{pre}.tattn.wq"))
            p.add(f"{pre}.tattn.wk", Tensor(_uniform(rng, (Ht, N), N), requires_grad=True,
                                            name=f"{pre}.tattn.wk"))
            p.add(f"{pre}.tattn.wv", Tensor(_uniform(rng, (Ht, N), N), requires_grad=True,
                                            name=f"{pre}.tattn.wv"))
            p.add(f"{pre}.tattn.wo", Tensor(_uniform(rng, (N, Ht), Ht), requires_grad=True,
                                            name=f"{pre}.tattn.wo"))
        if config.temporal_role != ROLE_NONE:
            p.add(f"{pre}.norm2.gain", Tensor(np.ones(D), requires_grad=True, name=f"{pre}.norm2.gain"))
            p.add(f"{pre}.norm2.bias", Tensor(np.zeros(D), requires_grad=True, name=f"{pre}.norm2.bias"))

    p.add("proj.weight", Tensor(_uniform(rng, (S, D), D), requires_grad=True, name="proj.weight"))
    p.add("proj.bias", Tensor(np.zeros(S), requires_grad=True, name="proj.bias"))
    return p


@dataclass
class AttentionMap:
    """Per-layer, per-head score matrix over variate tokens."""
    layer: int
    head: int
    pre_scores: np.ndarray  # raw q.k / sqrt(dk), shape (..., N, N)
    scores: np.ndarray      # post-softmax rows, same shape


@dataclass
class ForwardResult:
    y_hat: Tensor                       # (S, N) or (batch, S, N)
    attention_maps: list[AttentionMap] = field(default_factory=list)
    block_outputs: list[np.ndarray] = field(default_factory=list)

    @property
    def prediction(self) -> np.ndarray:
        return self.y_hat.values


class Model:
    """Configured forward graph over a ModelParams bundle."""

    def __init__(self, config: ModelConfig, params: ModelParams):
        self.config = config
        self.params = params

    # -- components --------------------------------------------------------

    def embed_series(self, x: Tensor) -> Tensor:
        """(.., T, N) series matrix -> (.., N, D) token matrix; token n sees
        only column n."""
        if x.shape[-2] != self.config.lookback_T:
            raise ShapeError(f"embed_series: expected {self.config.lookback_T} lookback rows, "
                             f"got {x.shape[-2]}")
        return linear(transpose_last2(x), self.params["embed.weight"], self.params["embed.bias"])

    def _mhsa(self, h: Tensor, wq, wk, wv, wo, n_heads, dk, *, layer=None,
              maps=None, train_mode=False, rng=None):
        q = linear(h, wq)
        k = linear(h, wk)
        v = linear(h, wv)
        ctx = []
        for i in range(n_heads):
            qi = slice_lastdim(q, i * dk, (i + 1) * dk)
            ki = slice_lastdim(k, i * dk, (i + 1) * dk)
            vi = slice_lastdim(v, i * dk, (i + 1) * dk)
            pre = scale(matmul(qi, transpose_last2(ki)), 1.0 / np.sqrt(dk))
            att = softmax_lastdim(pre)
            if maps is not None:
                maps.append(AttentionMap(layer=layer, head=i,
                                         pre_scores=pre.values.copy(),
                                         scores=att.values.copy()))
            att = self._dropout(att, train_mode, rng)
            ctx.append(matmul(att, vi))
        return linear(concat_lastdim(ctx) if n_heads > 1 else ctx[0], wo)

    def self_attention(self, h: Tensor, block: int, *, maps=None,
                       train_mode=False, rng=None) -> Tensor:
        cfg = self.config
        pre = f"block{block}.attn"
        wq = self.params[f"{pre}.wq"]
        wk = wq if cfg.tie_qk else self.params[f"{pre}.wk"]
        return self._mhsa(h, wq, wk, self.params[f"{pre}.wv"], self.params[f"{pre}.wo"],
                          cfg.heads, cfg.dk_effective, layer=block, maps=maps,
                          train_mode=train_mode, rng=rng)

    def feed_forward(self, h: Tensor, block: int, *, train_mode=False, rng=None) -> Tensor:
        pre = f"block{block}.ffn"
        mid = gelu(linear(h, self.params[f"{pre}.w1"], self.params[f"{pre}.b1"]))
        mid = self._dropout(mid, train_mode, rng)
        return linear(mid, self.params[f"{pre}.w2"], self.params[f"{pre}.b2"])

    def variate_mix(self, h: Tensor, block: int, *, train_mode=False, rng=None) -> Tensor:
        # shared MLP across the variate axis, applied per feature position
        pre = f"block{block}.vmix"
        ht = transpose_last2(h)
        mid = gelu(linear(ht, self.params[f"{pre}.w1"], self.params[f"{pre}.b1"]))
        mid = self._dropout(mid, train_mode, rng)
        return transpose_last2(linear(mid, self.params[f"{pre}.w2"], self.params[f"{pre}.b2"]))

    def temporal_attention(self, h: Tensor, block: int, *, train_mode=False, rng=None) -> Tensor:
        # attention over the D embedded positions; tokens are N-vectors
        pre = f"block{block}.tattn"
        th, tdk = self.config.temporal_heads()
        ht = transpose_last2(h)
        out = self._mhsa(ht, self.params[f"{pre}.wq"], self.params[f"{pre}.wk"],
                         self.params[f"{pre}.wv"], self.params[f"{pre}.wo"],
                         th, tdk, train_mode=train_mode, rng=rng)
        return transpose_last2(out)

    def _dropout(self, t: Tensor, train_mode, rng):
        p = self.config.dropout
        if not train_mode or p <= 0.0:
            return t
        if rng is None:
            raise ValueError("dropout > 0 in train mode requires an rng")
        mask = (rng.random(t.shape) >= p) / (1.0 - p)
        return mul(t, Tensor(mask))

    def trm_block(self, h: Tensor, block: int, *, maps=None,
                  train_mode=False, rng=None) -> Tensor:
        cfg = self.config
        if cfg.variate_role == ROLE_ATTENTION:
            s = self.self_attention(h, block, maps=maps, train_mode=train_mode, rng=rng)
        elif cfg.variate_role == ROLE_FFN:
            s = self.variate_mix(h, block, train_mode=train_mode, rng=rng)
        else:
            s = None
        if s is not None:
            h = layer_norm(add(h, s), self.params[f"block{block}.norm1.gain"],
                           self.params[f"block{block}.norm1.bias"], cfg.layer_norm_eps)

        if cfg.temporal_role == ROLE_FFN:
            s = self.feed_forward(h, block, train_mode=train_mode, rng=rng)
        elif cfg.temporal_role == ROLE_ATTENTION:
            s = self.temporal_attention(h, block, train_mode=train_mode, rng=rng)
        else:
            s = None
        if s is not None:
            h = layer_norm(add(h, s), self.params[f"block{block}.norm2.gain"],
                           self.params[f"block{block}.norm2.bias"], cfg.layer_norm_eps)
        return h

    # -- full pass ----------------------------------------------------------

    def forward(self, x, *, collect_diagnostics=False, train_mode=False,
                rng=None) -> ForwardResult:
        """x: (T, N) window or (batch, T, N) stack; returns (S, N) /
        (batch, S, N) predictions plus optional attention maps and
        per-block token-matrix snapshots."""
        cfg = self.config
        arr = np.asarray(x, dtype=np.float64)
        if arr.ndim not in (2, 3):
            raise ShapeError(f"forward expects (T, N) or (batch, T, N), got {arr.shape}")
        if arr.shape[-2] != cfg.lookback_T:
            raise ShapeError(f"forward: lookback length {arr.shape[-2]} != configured "
                             f"{cfg.lookback_T}")
        n = arr.shape[-1]
        if n < 1:
            raise ShapeError("forward: need at least one variate column")
        if cfg.binds_variate_count and n != cfg.n_variates:
            raise ShapeError(f"design {cfg.design} was built for n_variates="
                             f"{cfg.n_variates}, got {n}")
        if not np.all(np.isfinite(arr)):
            raise InputError("forward input contains non-finite values")

        if cfg.use_instance_norm:
            mu = arr.mean(axis=-2, keepdims=True)
            sd = np.sqrt(arr.var(axis=-2, keepdims=True) + INSTANCE_NORM_EPS)
            arr = (arr - mu) / sd

        h = self.embed_series(Tensor(arr))
        maps = [] if (collect_diagnostics and cfg.variate_role == ROLE_ATTENTION) else None
        snapshots = [] if collect_diagnostics else None
        for b in range(cfg.blocks_L):
            h = self.trm_block(h, b, maps=maps, train_mode=train_mode, rng=rng)
            if snapshots is not None:
                snapshots.append(h.values.copy())

        y = linear(h, self.params["proj.weight"], self.params["proj.bias"])
        y = transpose_last2(y)  # (.., S, N)
        if cfg.use_instance_norm:
            shape = y.shape
            y = add(mul(y, Tensor(np.broadcast_to(sd, shape).copy())),
                    Tensor(np.broadcast_to(mu, shape).copy()))
        return ForwardResult(y_hat=y,
                             attention_maps=maps or [],
                             block_outputs=snapshots or [])


def build_model(config: ModelConfig, seed: int) -> tuple[ModelParams, Model]:
    config.validate()
    params = init_params(config, seed)
    return params, Model(config, params)


# ---------------------------------------------------------------------------
# checkpoint format: one JSON header line (config + tensor name/shape table),
# then the tensors' raw little-endian float64 buffers in table order.

CHECKPOINT_MAGIC = "varformer-checkpoint-v1"


def save_checkpoint(path, config: ModelConfig, params: ModelParams):
    header = {
        "format": CHECKPOINT_MAGIC,
        "config": config.to_dict(),
        "tensors": [[name, list(t.shape)] for name, t in params.items()],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(b"\n")
        for _, t in params.items():
            f.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, ModelParams, Model]:
    with open(path, "rb") as f:
        header_line = f.readline()
        blob = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}") from None
    for key in ("format", "config", "tensors"):
        if key not in header:
            raise CheckpointError(f"checkpoint header missing field '{key}'")
    if header["format"] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"checkpoint field 'format' is {header['format']!r}, "
                              f"expected {CHECKPOINT_MAGIC!r}")
    try:
        config = ModelConfig.from_dict(header["config"])
    except (TypeError, ConfigError) as e:
        raise CheckpointError(f"checkpoint field 'config' invalid: {e}") from None

    params, model = build_model(config, seed=0)
    expected = [[name, list(t.shape)] for name, t in params.items()]
    if header["tensors"] != expected:
        raise CheckpointError("checkpoint field 'tensors' does not match the "
                              "configured parameter table")
    need = sum(int(np.prod(shape)) for _, shape in expected)
    data = np.frombuffer(blob, dtype="<f8")
    if data.size != need:
        raise CheckpointError(f"checkpoint payload has {data.size} floats, "
                              f"tensor table needs {need}")
    ofs = 0
    for name, t in params.items():
        cnt = t.size
        t.values = np.ascontiguousarray(
            data[ofs:ofs + cnt].reshape(t.shape), dtype=np.float64)
        ofs += cnt
    return config, params, model
