"""Forecasting architectures: recurrent baseline, encoder-decoder attention
model, and masked bidirectional attention models.

All models consume windows as per-step motion vectors (or quantized class
indices) in normalized representation units and emit one head output per
future step: a 2-D point, bivariate Gaussian parameters, or class logits
over a motion codebook. Batch shapes are (batch, length, ...) throughout.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, asdict, field

import numpy as np

from .autodiff import Tensor, concat
from .errors import ConfigError, ModelError
from .layers import (
    Dropout,
    Embedding,
    EncoderLayer,
    DecoderLayer,
    LSTMCell,
    Linear,
    causal_mask,
    full_mask,
    positional_table,
    prefix_params,
    split_heads,
    uniform_init,
)

Array = np.ndarray

ARCHITECTURES = ("lstm", "tf", "bert_ar", "bert_os")
HEADS = ("regressive", "gaussian", "quantized")
REPRESENTATIONS = ("speeds", "relative_positions")


@dataclass
class ModelConfig:
    architecture: str = "tf"
    head: str = "regressive"
    representation: str = "speeds"
    d_model: int = 64
    layers: int = 2
    heads: int = 2
    dropout_rate: float = 0.1
    k: int = 32
    t_obs: int = 8
    t_pred: int = 12
    oracle_endpoint: bool = False

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}")
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"unknown representation {self.representation!r}")
        if self.d_model < 2 or self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be a positive even number, got {self.d_model}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.heads < 1 or self.d_model % self.heads != 0:
            raise ConfigError(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.head == "quantized" and self.k < 2:
            raise ConfigError(f"quantized head needs k >= 2, got {self.k}")
        if self.t_obs < 2 or self.t_pred < 1:
            raise ConfigError(f"need t_obs >= 2 and t_pred >= 1, got {self.t_obs}/{self.t_pred}")
        if self.oracle_endpoint and (self.architecture != "bert_os" or self.representation != "relative_positions"):
            raise ConfigError("oracle_endpoint requires architecture=bert_os with relative_positions")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def uses_classes(self) -> bool:
        return self.head == "quantized"


def config_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def full_scale_tf_config(**overrides) -> ModelConfig:
    base = dict(architecture="tf", d_model=512, layers=6, heads=8, k=1000)
    base.update(overrides)
    return ModelConfig(**base)


def full_scale_bert_config(**overrides) -> ModelConfig:
    base = dict(architecture="bert_os", d_model=768, layers=12, heads=12, k=1000)
    base.update(overrides)
    return ModelConfig(**base)


# ---- output heads --------------------------------------------------------


class RegressiveHead:
    out_dim = 2

    def __init__(self, d_model: int, rng):
        self.out = Linear(d_model, 2, rng)

    def __call__(self, h: Tensor) -> Tensor:
        return self.out(h)

    def named_params(self) -> dict:
        return prefix_params("out", self.out.named_params())


class GaussianHead:
    """Emits (mean_x, mean_y, log_sigma_x, log_sigma_y, corr_raw) per step."""

    out_dim = 5

    def __init__(self, d_model: int, rng):
        self.out = Linear(d_model, 5, rng)

    def __call__(self, h: Tensor) -> Tensor:
        return self.out(h)

    @staticmethod
    def split(raw: Tensor) -> tuple:
        """raw (..., 5) -> mu (..., 2), sigma (..., 2) positive, rho (..., 1) in (-1, 1)."""
        mu = raw[..., 0:2]
        sigma = raw[..., 2:4].exp()
        rho = raw[..., 4:5].tanh()
        return mu, sigma, rho

    def named_params(self) -> dict:
        return prefix_params("out", self.out.named_params())


class QuantizedHead:
    def __init__(self, d_model: int, k: int, rng):
        self.out = Linear(d_model, k, rng)
        self.out_dim = k

    def __call__(self, h: Tensor) -> Tensor:
        return self.out(h)

    def named_params(self) -> dict:
        return prefix_params("out", self.out.named_params())


@dataclass
class GaussianParams:
    """Decoded bivariate Gaussian for one step, in de-normalized units."""

    mu: Array
    sigma: Array
    rho: float

    def covariance(self) -> Array:
        sx, sy = self.sigma
        c = self.rho * sx * sy
        return np.array([[sx * sx, c], [c, sy * sy]])

    def sample(self, rng: np.random.Generator) -> Array:
        sx, sy = self.sigma
        z = rng.standard_normal(2)
        # Cholesky factor of the 2x2 covariance
        return self.mu + np.array([
            sx * z[0],
            sy * (self.rho * z[0] + math.sqrt(1.0 - self.rho ** 2) * z[1]),
        ])


def gaussian_params_np(raw: Array) -> tuple:
    """numpy twin of GaussianHead.split for decode paths: raw (..., 5)."""
    mu = raw[..., 0:2]
    sigma = np.exp(raw[..., 2:4])
    rho = np.tanh(raw[..., 4])
    return mu, sigma, rho


def _make_head(cfg: ModelConfig, rng):
    if cfg.head == "regressive":
        return RegressiveHead(cfg.d_model, rng)
    if cfg.head == "gaussian":
        return GaussianHead(cfg.d_model, rng)
    return QuantizedHead(cfg.d_model, cfg.k, rng)


# ---- input embedding -----------------------------------------------------


class StepEmbedder:
    """Projects motion steps (or class indices) into d_model and adds the
    sinusoidal time encoding. With zero weights the output is the pure
    positional encoding."""

    def __init__(self, cfg: ModelConfig, rng, with_positions: bool = True):
        self.d_model = cfg.d_model
        self.with_positions = with_positions
        self.quantized = cfg.uses_classes
        if self.quantized:
            self.table = Embedding(cfg.k, cfg.d_model, rng)
        else:
            self.proj = Linear(2, cfg.d_model, rng)

    def __call__(self, steps, times=None) -> Tensor:
        if self.quantized:
            idx = np.asarray(steps)
            emb = self.table(idx)
        else:
            emb = self.proj(Tensor(np.asarray(steps, dtype=np.float64)))
        if self.with_positions:
            if times is None:
                raise ModelError("this embedder needs time indices")
            emb = emb + positional_table(times, self.d_model)
        return emb

    def named_params(self) -> dict:
        if self.quantized:
            return self.table.named_params()
        return prefix_params("proj", self.proj.named_params())


def _check_batch(steps, quantized: bool, what: str) -> int:
    arr = np.asarray(steps)
    want = 2 if quantized else 3
    if arr.ndim != want:
        raise ModelError(f"{what} must be {want}-D (batch, length{', 2' if not quantized else ''}), got {arr.shape}")
    if arr.shape[1] == 0:
        raise ModelError(f"{what} is empty")
    return arr.shape[1]


# ---- encoder-decoder attention model -------------------------------------


class TFForecaster:
    """Observed steps are encoded once into a shared key/value memory; a
    causal decoder queries that memory while attending over its own prefix."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        d = cfg.d_model
        self.embed = StepEmbedder(cfg, rng)
        self.start = Tensor(uniform_init(rng, (d,), d), requires_grad=True)
        self.encoder = [EncoderLayer(d, cfg.heads, cfg.dropout_rate, rng) for _ in range(cfg.layers)]
        self.mem_k = Linear(d, d, rng)
        self.mem_v = Linear(d, d, rng)
        self.decoder = [DecoderLayer(d, cfg.heads, cfg.dropout_rate, rng) for _ in range(cfg.layers)]
        self.head = _make_head(cfg, rng)

    def encode(self, obs, obs_times, rng=None, training: bool = False) -> tuple:
        """-> (mem_k, mem_v) with shape (batch, heads, L_obs, d_k)."""
        n = _check_batch(obs, self.cfg.uses_classes, "observed steps")
        if len(obs_times) != n:
            raise ModelError(f"got {n} observed steps but {len(obs_times)} time stamps")
        x = self.embed(obs, obs_times)
        mask = full_mask(n, n)
        for layer in self.encoder:
            x = layer(x, mask, rng, training)
        k = split_heads(self.mem_k(x), self.cfg.heads)
        v = split_heads(self.mem_v(x), self.cfg.heads)
        return k, v

    def decode_outputs(self, memory, dec_steps=None, rng=None, training: bool = False) -> Tensor:
        """Head outputs for decoder slots [start, step_1 .. step_j]; slot i
        predicts future step i+1. dec_steps=None means start token only."""
        mem_k, mem_v = memory
        batch = mem_k.shape[0]
        n_enc = mem_k.shape[2]
        t0 = self.cfg.t_obs - 1
        start = Tensor(np.ones((batch, 1, 1))) * self.start + positional_table([t0], self.cfg.d_model)
        if dec_steps is not None and np.asarray(dec_steps).shape[1] > 0:
            j = _check_batch(dec_steps, self.cfg.uses_classes, "decoder steps")
            fed = self.embed(dec_steps, np.arange(t0 + 1, t0 + 1 + j))
            x = concat([start, fed], axis=1)
        else:
            x = start
        n_dec = x.shape[1]
        self_mask = causal_mask(n_dec)
        cross = full_mask(n_dec, n_enc)
        for layer in self.decoder:
            x = layer(x, mem_k, mem_v, self_mask, cross, rng, training)
        return self.head(x)

    def teacher_forced_outputs(self, obs, obs_times, fut_inputs, rng=None, training: bool = False) -> Tensor:
        """fut_inputs are ground-truth future steps 1..T-1 (shifted right)."""
        memory = self.encode(obs, obs_times, rng, training)
        return self.decode_outputs(memory, fut_inputs, rng, training)

    def named_params(self) -> dict:
        out = prefix_params("embed", self.embed.named_params())
        out["start"] = self.start
        for i, layer in enumerate(self.encoder):
            out.update(prefix_params(f"encoder.{i}", layer.named_params()))
        out.update(prefix_params("mem_k", self.mem_k.named_params()))
        out.update(prefix_params("mem_v", self.mem_v.named_params()))
        for i, layer in enumerate(self.decoder):
            out.update(prefix_params(f"decoder.{i}", layer.named_params()))
        out.update(prefix_params("head", self.head.named_params()))
        return out


# ---- masked bidirectional model ------------------------------------------


class BertForecaster:
    """Encoder-only model over [observed steps | future slots]; future slots
    are either known inputs or a shared learned mask embedding, and every
    future slot produces a head output."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        d = cfg.d_model
        self.embed = StepEmbedder(cfg, rng)
        self.mask_emb = Tensor(uniform_init(rng, (d,), d), requires_grad=True)
        self.encoder = [EncoderLayer(d, cfg.heads, cfg.dropout_rate, rng) for _ in range(cfg.layers)]
        self.head = _make_head(cfg, rng)

    def check_layout(self, known_flags: Array) -> None:
        flags = np.asarray(known_flags, dtype=bool)
        if self.cfg.architecture == "bert_ar":
            if flags.size < 1 or flags[-1] or not flags[:-1].all():
                raise ModelError("bert_ar expects every future slot known except the masked last one")
        else:
            if self.cfg.oracle_endpoint:
                if flags.size < 1 or not flags[-1] or flags[:-1].any():
                    raise ModelError("oracle bert_os expects only the endpoint slot known")
            elif flags.any():
                raise ModelError("bert_os expects all future slots masked")

    def future_outputs(self, obs, obs_times, fut_values, fut_times, known_flags,
                       rng=None, training: bool = False) -> Tensor:
        """Head outputs at every future slot. fut_values supplies inputs for
        known slots (ignored where masked; pass zeros there)."""
        n_obs = _check_batch(obs, self.cfg.uses_classes, "observed steps")
        if len(obs_times) != n_obs:
            raise ModelError(f"got {n_obs} observed steps but {len(obs_times)} time stamps")
        flags = np.asarray(known_flags, dtype=bool)
        n_fut = len(fut_times)
        if flags.shape != (n_fut,):
            raise ModelError(f"known_flags shape {flags.shape} does not match {n_fut} future slots")
        self.check_layout(flags)

        obs_emb = self.embed(obs, obs_times)
        batch = obs_emb.shape[0]
        known_emb = self.embed(fut_values, fut_times)
        mask_tile = Tensor(np.ones((batch, n_fut, 1))) * self.mask_emb \
            + positional_table(fut_times, self.cfg.d_model)
        gate = flags.astype(np.float64)[None, :, None]
        fut_emb = known_emb * gate + mask_tile * (1.0 - gate)
        x = concat([obs_emb, fut_emb], axis=1)
        n = n_obs + n_fut
        mask = full_mask(n, n)
        for layer in self.encoder:
            x = layer(x, mask, rng, training)
        return self.head(x[:, n_obs:, :])

    def named_params(self) -> dict:
        out = prefix_params("embed", self.embed.named_params())
        out["mask"] = self.mask_emb
        for i, layer in enumerate(self.encoder):
            out.update(prefix_params(f"encoder.{i}", layer.named_params()))
        out.update(prefix_params("head", self.head.named_params()))
        return out


# ---- recurrent baseline --------------------------------------------------


class LstmForecaster:
    """Stacked recurrent cells fed one step at a time; no positional encoding.
    Dropped observed steps cannot be skipped here, so they feed a zero
    embedding instead (keep flags)."""

    def __init__(self, cfg: ModelConfig, rng):
        self.cfg = cfg
        d = cfg.d_model
        self.embed = StepEmbedder(cfg, rng, with_positions=False)
        self.cells = [LSTMCell(d, d, rng) for _ in range(cfg.layers)]
        self.drop = Dropout(cfg.dropout_rate)
        self.head = _make_head(cfg, rng)

    def seq_outputs(self, steps, keep: Array | None = None, rng=None, training: bool = False) -> Tensor:
        """Head outputs at every input step, (batch, length, out_dim)."""
        length = _check_batch(steps, self.cfg.uses_classes, "input steps")
        emb = self.embed(steps)
        if keep is not None:
            keep = np.asarray(keep, dtype=np.float64)
            if keep.shape != (length,):
                raise ModelError(f"keep flags shape {keep.shape} does not match length {length}")
            emb = emb * keep[None, :, None]
        batch = emb.shape[0]
        d = self.cfg.d_model
        states = [(Tensor(np.zeros((batch, d))), Tensor(np.zeros((batch, d)))) for _ in self.cells]
        tops = []
        for t in range(length):
            x = emb[:, t, :]
            for i, cell in enumerate(self.cells):
                if i > 0:
                    x = self.drop(x, rng, training)
                h, c = cell(x, *states[i])
                states[i] = (h, c)
                x = h
            tops.append(x.reshape(batch, 1, d))
        hidden = concat(tops, axis=1) if len(tops) > 1 else tops[0]
        return self.head(hidden)

    def named_params(self) -> dict:
        out = prefix_params("embed", self.embed.named_params())
        for i, cell in enumerate(self.cells):
            out.update(prefix_params(f"cells.{i}", cell.named_params()))
        out.update(prefix_params("head", self.head.named_params()))
        return out


def build_model(cfg: ModelConfig, seed: int):
    rng = np.random.default_rng(seed)
    if cfg.architecture == "tf":
        return TFForecaster(cfg, rng)
    if cfg.architecture in ("bert_ar", "bert_os"):
        return BertForecaster(cfg, rng)
    return LstmForecaster(cfg, rng)


# ---- parameter bookkeeping -----------------------------------------------


def _attention_shapes(prefix: str, d: int, projections=("wq", "wk", "wv", "wo")) -> dict:
    out = {}
    for name in projections:
        out[f"{prefix}.{name}.w"] = (d, d)
        out[f"{prefix}.{name}.b"] = (d,)
    return out


def _encoder_layer_shapes(prefix: str, d: int) -> dict:
    out = _attention_shapes(f"{prefix}.attn", d)
    out.update({
        f"{prefix}.ff.inner.w": (d, 4 * d), f"{prefix}.ff.inner.b": (4 * d,),
        f"{prefix}.ff.outer.w": (4 * d, d), f"{prefix}.ff.outer.b": (d,),
        f"{prefix}.ln1.gain": (d,), f"{prefix}.ln1.bias": (d,),
        f"{prefix}.ln2.gain": (d,), f"{prefix}.ln2.bias": (d,),
    })
    return out


def _decoder_layer_shapes(prefix: str, d: int) -> dict:
    out = _attention_shapes(f"{prefix}.self_attn", d)
    out.update(_attention_shapes(f"{prefix}.cross", d, projections=("wq", "wo")))
    out.update({
        f"{prefix}.ff.inner.w": (d, 4 * d), f"{prefix}.ff.inner.b": (4 * d,),
        f"{prefix}.ff.outer.w": (4 * d, d), f"{prefix}.ff.outer.b": (d,),
        f"{prefix}.ln1.gain": (d,), f"{prefix}.ln1.bias": (d,),
        f"{prefix}.ln2.gain": (d,), f"{prefix}.ln2.bias": (d,),
        f"{prefix}.ln3.gain": (d,), f"{prefix}.ln3.bias": (d,),
    })
    return out


def parameter_shapes(cfg: ModelConfig) -> dict:
    """Name -> shape for every parameter, without allocating any of them."""
    d = cfg.d_model
    out = {}
    if cfg.uses_classes:
        out["embed.table"] = (cfg.k, d)
    else:
        out["embed.proj.w"] = (2, d)
        out["embed.proj.b"] = (d,)
    if cfg.architecture == "tf":
        out["start"] = (d,)
        for i in range(cfg.layers):
            out.update(_encoder_layer_shapes(f"encoder.{i}", d))
        out.update({"mem_k.w": (d, d), "mem_k.b": (d,), "mem_v.w": (d, d), "mem_v.b": (d,)})
        for i in range(cfg.layers):
            out.update(_decoder_layer_shapes(f"decoder.{i}", d))
    elif cfg.architecture in ("bert_ar", "bert_os"):
        out["mask"] = (d,)
        for i in range(cfg.layers):
            out.update(_encoder_layer_shapes(f"encoder.{i}", d))
    else:
        for i in range(cfg.layers):
            out.update({
                f"cells.{i}.w_ih": (d, 4 * d),
                f"cells.{i}.w_hh": (d, 4 * d),
                f"cells.{i}.b": (4 * d,),
            })
    head_out = {"regressive": 2, "gaussian": 5, "quantized": cfg.k}[cfg.head]
    out["head.out.w"] = (d, head_out)
    out["head.out.b"] = (head_out,)
    return out


def count_parameters(cfg: ModelConfig) -> int:
    return sum(int(np.prod(shape)) for shape in parameter_shapes(cfg).values())


def scale_report() -> dict:
    """Parameter counts at full scale: 512/6/8 encoder-decoder vs 768/12/12
    bidirectional, plus their size ratio."""
    tf_count = count_parameters(full_scale_tf_config())
    bert_count = count_parameters(full_scale_bert_config())
    return {
        "tf_params": tf_count,
        "bert_params": bert_count,
        "bert_to_tf_ratio": bert_count / tf_count,
    }
