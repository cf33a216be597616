"""Losses and the teacher-forced training loop."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, log_softmax
from .codebook import MotionCodebook, fit_codebook
from .data import (
    NormStats,
    RawWindow,
    augment_scale,
    fit_normalization,
    normalize_window,
    to_representation,
)
from .errors import ConfigError, TrainingError
from .models import ModelConfig, build_model, config_hash
from .optim import Adam, WarmupInverseSqrt

Array = np.ndarray

LOG_2PI = math.log(2.0 * math.pi)


# ---- losses --------------------------------------------------------------


def loss_l2(pred: Tensor, target: Array) -> Tensor:
    """Mean over steps of the squared Euclidean distance."""
    d = pred - Tensor(np.asarray(target, dtype=np.float64))
    return (d * d).sum(axis=-1).mean()


def loss_gaussian_nll(raw: Tensor, target: Array) -> Tensor:
    """Mean negative log-likelihood of a bivariate Gaussian per step.

    raw (..., 5) carries (mean_x, mean_y, log_sigma_x, log_sigma_y, corr_raw);
    sigma = exp(log_sigma), rho = tanh(corr_raw).
    """
    target = Tensor(np.asarray(target, dtype=np.float64))
    mu = raw[..., 0:2]
    log_sigma = raw[..., 2:4]
    sigma = log_sigma.exp()
    rho = raw[..., 4:5].tanh()
    dz = (target - mu) / sigma
    zx = dz[..., 0:1]
    zy = dz[..., 1:2]
    one_minus = 1.0 - rho * rho
    nll = (
        LOG_2PI
        + log_sigma.sum(axis=-1, keepdims=True)
        + 0.5 * one_minus.log()
        + (zx * zx + zy * zy - 2.0 * rho * zx * zy) / (2.0 * one_minus)
    )
    return nll.mean()


def loss_cross_entropy(logits: Tensor, classes: Array) -> Tensor:
    """Mean negative log-probability of the true class."""
    classes = np.asarray(classes)
    k = logits.shape[-1]
    if classes.size and (classes.min() < 0 or classes.max() >= k):
        raise ConfigError(f"class index out of range for k={k}")
    onehot = np.zeros(logits.shape)
    np.put_along_axis(onehot, classes[..., None], 1.0, axis=-1)
    picked = (log_softmax(logits, axis=-1) * onehot).sum(axis=-1)
    return -(picked.mean())


# ---- training ------------------------------------------------------------


@dataclass
class TrainSettings:
    epochs: int = 50
    batch_size: int = 64
    base_rate: float = 1e-3
    warmup_epochs: int = 5
    patience: int = 10            # 0 disables early stopping
    val_fraction: float = 0.1
    seed: int = 0
    augment: bool | None = None   # None: on for the quantized head only
    scale_range: tuple = (0.5, 2.0)
    codebook_iters: int = 300

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["scale_range"] = list(self.scale_range)
        return d


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mad: float | None
    val_fad: float | None
    learning_rate: float
    wall_clock_s: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mad: float | None = None
    stopped_early: bool = False
    seed: int = 0
    config_hash: str = ""

    def jsonl_lines(self, include_wall_clock: bool = True) -> list:
        import json

        lines = []
        for r in self.records:
            row = {
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "val_mad": r.val_mad,
                "val_fad": r.val_fad,
                "learning_rate": r.learning_rate,
            }
            if include_wall_clock:
                row["wall_clock_s"] = r.wall_clock_s
            lines.append(json.dumps(row, sort_keys=True))
        return lines


@dataclass
class PreparedSet:
    """Normalized training arrays for one set of windows."""

    windows: list
    obs: Array                    # (n, t_obs, 2) normalized steps
    fut: Array                    # (n, t_pred, 2)
    obs_cls: Array | None = None  # (n, t_obs) when quantized
    fut_cls: Array | None = None


def prepare_windows(raw_windows, cfg: ModelConfig, stats: NormStats,
                    codebook: MotionCodebook | None) -> PreparedSet:
    windows = [normalize_window(to_representation(w, cfg.representation), stats) for w in raw_windows]
    obs = np.stack([w.observed for w in windows])
    fut = np.stack([w.future for w in windows])
    obs_cls = fut_cls = None
    if cfg.uses_classes:
        if codebook is None:
            raise ConfigError("quantized head needs a fitted codebook")
        obs_cls = codebook.quantize(obs)
        fut_cls = codebook.quantize(fut)
    return PreparedSet(windows=windows, obs=obs, fut=fut, obs_cls=obs_cls, fut_cls=fut_cls)


def _head_loss(cfg: ModelConfig, outputs: Tensor, targets: Array, target_cls: Array | None) -> Tensor:
    if cfg.head == "regressive":
        return loss_l2(outputs, targets)
    if cfg.head == "gaussian":
        return loss_gaussian_nll(outputs, targets)
    return loss_cross_entropy(outputs, target_cls)


def _batch_loss(cfg: ModelConfig, model, prep: PreparedSet, idx: Array,
                rng: np.random.Generator, mask_rng: np.random.Generator) -> Tensor:
    t_obs, t_pred = cfg.t_obs, cfg.t_pred
    obs_times = np.arange(t_obs)
    fut_times = np.arange(t_obs, t_obs + t_pred)
    obs_in = prep.obs_cls[idx] if cfg.uses_classes else prep.obs[idx]
    fut_in = prep.fut_cls[idx] if cfg.uses_classes else prep.fut[idx]
    fut_val = prep.fut[idx]
    fut_cls = prep.fut_cls[idx] if cfg.uses_classes else None

    if cfg.architecture == "tf":
        outputs = model.teacher_forced_outputs(obs_in, obs_times, fut_in[:, :-1], rng, training=True)
        return _head_loss(cfg, outputs, fut_val, fut_cls)

    if cfg.architecture == "lstm":
        seq = np.concatenate([obs_in, fut_in[:, :-1]], axis=1)
        outputs = model.seq_outputs(seq, rng=rng, training=True)
        preds = outputs[:, t_obs - 1:t_obs - 1 + t_pred, :]
        return _head_loss(cfg, preds, fut_val, fut_cls)

    if cfg.architecture == "bert_os":
        flags = np.zeros(t_pred, dtype=bool)
        if cfg.oracle_endpoint:
            flags[-1] = True
        outputs = model.future_outputs(obs_in, obs_times, fut_in, fut_times, flags, rng, training=True)
        # the given endpoint slot stays in the loss so its emitted value is trained
        return _head_loss(cfg, outputs, fut_val, fut_cls)

    # bert_ar: one uniformly sampled masked slot per window, bucketed by its
    # index so every sub-batch shares a sequence length
    ts = mask_rng.integers(0, t_pred, size=len(idx))
    total = Tensor(0.0)
    for t in np.unique(ts):
        sub = idx[ts == t]
        flags = np.zeros(t + 1, dtype=bool)
        flags[:t] = True
        sub_obs = prep.obs_cls[sub] if cfg.uses_classes else prep.obs[sub]
        sub_fut_in = prep.fut_cls[sub][:, :t + 1] if cfg.uses_classes else prep.fut[sub][:, :t + 1]
        outputs = model.future_outputs(sub_obs, obs_times, sub_fut_in, fut_times[:t + 1], flags, rng, training=True)
        pred = outputs[:, t:t + 1, :]
        target = prep.fut[sub][:, t:t + 1]
        target_cls = prep.fut_cls[sub][:, t:t + 1] if cfg.uses_classes else None
        total = total + _head_loss(cfg, pred, target, target_cls) * (len(sub) / len(idx))
    return total


def train(cfg: ModelConfig, train_raw: list[RawWindow], settings: TrainSettings,
          codebook: MotionCodebook | None = None, quiet: bool = True):
    """Fit a model on raw windows; returns (Forecaster, TrainReport).

    The validation split is carved off before augmentation; normalization and
    (for the quantized head) the codebook are fit on the augmented training
    split only. The checkpointed parameters are the ones with the best
    validation MAD when a validation split exists, otherwise the final ones.
    """
    from .evaluation import Forecaster, evaluate_mad_fad

    if not train_raw:
        raise ConfigError("no training windows")
    n_total = len(train_raw)
    split_rng = np.random.default_rng([settings.seed, 1])
    perm = split_rng.permutation(n_total)
    n_val = int(n_total * settings.val_fraction)
    val_raw = [train_raw[i] for i in perm[:n_val]]
    fit_raw = [train_raw[i] for i in perm[n_val:]]
    if not fit_raw:
        raise ConfigError("validation split left no training windows")

    augment = settings.augment if settings.augment is not None else cfg.uses_classes
    if augment:
        fit_raw = augment_scale(fit_raw, settings.scale_range, seed=int(np.random.default_rng([settings.seed, 2]).integers(2**31)))

    repr_windows = [to_representation(w, cfg.representation) for w in fit_raw]
    stats = fit_normalization(repr_windows)
    if cfg.uses_classes and codebook is None:
        steps = np.concatenate([stats.apply(w.observed) for w in repr_windows]
                               + [stats.apply(w.future) for w in repr_windows], axis=0)
        codebook = fit_codebook(steps, cfg.k, seed=settings.seed, max_iters=settings.codebook_iters)
    if cfg.uses_classes and codebook.k != cfg.k:
        raise ConfigError(f"codebook has k={codebook.k} but config says k={cfg.k}")

    prep = prepare_windows(fit_raw, cfg, stats, codebook)
    model = build_model(cfg, seed=int(np.random.default_rng([settings.seed, 0]).integers(2**31)))
    params = model.named_params()
    n_fit = len(fit_raw)
    steps_per_epoch = max(1, math.ceil(n_fit / settings.batch_size))
    schedule = WarmupInverseSqrt(settings.base_rate, max(1, settings.warmup_epochs * steps_per_epoch))
    opt = Adam(params, schedule)

    forecaster = Forecaster(config=cfg, model=model, norm=stats, codebook=codebook)
    report = TrainReport(seed=settings.seed,
                         config_hash=config_hash({**cfg.to_dict(), **settings.to_dict()}))
    best = None
    best_mad = math.inf
    since_best = 0

    for epoch in range(settings.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([settings.seed, 3, epoch]).permutation(n_fit)
        drop_rng = np.random.default_rng([settings.seed, 5, epoch])
        mask_rng = np.random.default_rng([settings.seed, 4, epoch])
        losses = []
        lr = 0.0
        for lo in range(0, n_fit, settings.batch_size):
            idx = order[lo:lo + settings.batch_size]
            opt.zero_grad()
            loss = _batch_loss(cfg, model, prep, idx, drop_rng, mask_rng)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch offset {lo}")
            loss.backward()
            lr = opt.step()
            losses.append((value, len(idx)))
        train_loss = sum(v * n for v, n in losses) / sum(n for _, n in losses)

        val_mad = val_fad = None
        if val_raw:
            val_mad, val_fad = evaluate_mad_fad(forecaster, val_raw)
        report.records.append(EpochRecord(
            epoch=epoch, train_loss=train_loss, val_mad=val_mad, val_fad=val_fad,
            learning_rate=lr, wall_clock_s=time.perf_counter() - t0))

        monitor = val_mad if val_mad is not None else train_loss
        if monitor < best_mad:
            best_mad = monitor
            best = {name: p.data.copy() for name, p in params.items()}
            report.best_epoch = epoch
            report.best_val_mad = val_mad
            since_best = 0
        else:
            since_best += 1
            if settings.patience and since_best >= settings.patience:
                report.stopped_early = True
                break

    if best is not None:
        for name, p in params.items():
            p.data[...] = best[name]
    return forecaster, report
