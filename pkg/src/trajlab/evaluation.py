"""Decoding trained models and scoring them.

All decode paths work on raw windows: the forecaster converts the observed
block into its own representation, runs the model, and integrates predicted
steps back into absolute positions. Errors are reported as mean and final
displacement in meters.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .codebook import MotionCodebook
from .data import NormStats, RawWindow, decode_future, to_representation
from .errors import ConfigError, ModelError
from .models import ModelConfig, GaussianParams, gaussian_params_np

Array = np.ndarray


def _softmax_np(z: Array) -> Array:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForecastResult:
    """Per-step head outputs plus decoded absolute positions for one window."""

    positions: Array                      # (t_pred, 2) absolute, meters
    steps: Array                          # (t_pred, 2) de-normalized representation steps
    architecture: str
    mode: str
    gaussians: list | None = None         # GaussianParams per step, de-normalized
    class_probs: Array | None = None      # (t_pred, k)
    classes: Array | None = None          # (t_pred,) chosen class indices
    temperature: float = 0.0
    seed: int | None = None


def mad_fad(pred: Array, true: Array) -> tuple:
    """Mean and final Euclidean displacement between two position tracks."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise ConfigError(f"tracks must share shape (t, 2), got {pred.shape} vs {true.shape}")
    if len(pred) == 0:
        raise ConfigError("cannot score an empty track")
    dist = np.sqrt(((pred - true) ** 2).sum(axis=1))
    return float(dist.mean()), float(dist[-1])


def constant_velocity_forecast(raw: RawWindow, t_pred: int | None = None) -> Array:
    """Extrapolate the last observed speed in a straight line."""
    t = t_pred if t_pred is not None else len(raw.future)
    v = raw.observed[-1] - raw.observed[-2]
    ks = np.arange(1, t + 1)[:, None]
    return raw.observed[-1] + ks * v


@dataclass
class Forecaster:
    """A trained model bundled with everything needed to decode it."""

    config: ModelConfig
    model: object
    norm: NormStats
    codebook: MotionCodebook | None = None

    def forecast(self, raw: RawWindow, mode: str = "deterministic", seed=None, rng=None,
                 temperature: float = 1.0, t_pred: int | None = None,
                 endpoint: Array | None = None, drop=()) -> ForecastResult:
        return self.forecast_batch([raw], mode=mode, seed=seed, rngs=[rng] if rng is not None else None,
                                   temperature=temperature, t_pred=t_pred,
                                   endpoints=None if endpoint is None else [endpoint],
                                   drop=drop)[0]

    # ---- batched decode --------------------------------------------------

    def forecast_batch(self, raws, mode: str = "deterministic", seed=None, rngs=None,
                       temperature: float = 1.0, t_pred: int | None = None,
                       endpoints=None, drop=()) -> list:
        if mode not in ("deterministic", "sampled"):
            raise ConfigError(f"unknown decode mode {mode!r}")
        cfg = self.config
        t_pred = t_pred if t_pred is not None else cfg.t_pred
        if t_pred < 1:
            raise ConfigError(f"t_pred must be >= 1, got {t_pred}")
        batch = len(raws)
        if batch == 0:
            return []
        if mode == "sampled" and rngs is None:
            base = 0 if seed is None else seed
            rngs = [np.random.default_rng([base, i]) for i in range(batch)]

        keep = [i for i in range(cfg.t_obs) if i not in set(drop)]
        if not keep:
            raise ModelError("every observed step was dropped")

        tws = [to_representation(r, cfg.representation) for r in raws]
        obs_norm = np.stack([self.norm.apply(tw.observed) for tw in tws])
        obs_vis = obs_norm[:, keep, :]
        obs_times = np.asarray(keep)
        if cfg.uses_classes:
            if self.codebook is None:
                raise ConfigError("quantized head needs a codebook to decode")
            obs_in = self.codebook.quantize(obs_vis)
        else:
            obs_in = obs_vis

        if cfg.architecture == "tf":
            picked = self._decode_tf(obs_in, obs_times, batch, t_pred, mode, rngs, temperature)
        elif cfg.architecture == "bert_ar":
            picked = self._decode_bert_ar(obs_in, obs_times, batch, t_pred, mode, rngs, temperature)
        elif cfg.architecture == "bert_os":
            picked = self._decode_bert_os(obs_in, obs_times, batch, t_pred, mode, rngs, temperature,
                                          raws, tws, endpoints)
        else:
            picked = self._decode_lstm(obs_norm, keep, batch, t_pred, mode, rngs, temperature)

        steps_norm, raw_outputs, classes = picked
        steps = np.stack([self.norm.invert(s) for s in steps_norm])
        results = []
        for i in range(batch):
            positions = decode_future(tws[i], steps[i])
            res = ForecastResult(
                positions=positions,
                steps=steps[i],
                architecture=cfg.architecture,
                mode=mode,
                temperature=temperature if mode == "sampled" else 0.0,
                seed=seed,
            )
            if cfg.head == "gaussian":
                mu, sigma, rho = gaussian_params_np(raw_outputs[i])
                res.gaussians = [
                    GaussianParams(mu=self.norm.invert(mu[t]), sigma=sigma[t] * self.norm.std, rho=float(rho[t]))
                    for t in range(t_pred)
                ]
            elif cfg.head == "quantized":
                res.class_probs = _softmax_np(raw_outputs[i])
                res.classes = classes[i]
            results.append(res)
        return results

    # step selection shared by all architectures; returns the normalized step
    # to integrate plus (for quantized) the class fed back into the model
    def _pick_step(self, raw_out: Array, mode: str, rngs, temperature: float, batch: int):
        cfg = self.config
        if cfg.head == "regressive":
            return raw_out.copy(), None
        if cfg.head == "gaussian":
            mu, sigma, rho = gaussian_params_np(raw_out)
            if mode == "deterministic":
                return mu.copy(), None
            out = np.empty((batch, 2))
            for i in range(batch):
                out[i] = GaussianParams(mu=mu[i], sigma=sigma[i], rho=float(rho[i])).sample(rngs[i])
            return out, None
        if mode == "deterministic":
            cls = raw_out.argmax(axis=-1)
        else:
            cls = np.array([self.codebook.sample(raw_out[i], temperature, rngs[i]) for i in range(batch)])
        return self.codebook.dequantize(cls), cls

    def _decode_tf(self, obs_in, obs_times, batch, t_pred, mode, rngs, temperature):
        cfg = self.config
        memory = self.model.encode(obs_in, obs_times)
        steps_norm = np.zeros((batch, t_pred, 2))
        classes = np.zeros((batch, t_pred), dtype=np.int64)
        raw_outputs = None
        for j in range(t_pred):
            fed = classes[:, :j] if cfg.uses_classes else steps_norm[:, :j]
            outputs = self.model.decode_outputs(memory, fed if j > 0 else None)
            if raw_outputs is None:
                raw_outputs = np.zeros((batch, t_pred, outputs.shape[-1]))
            raw_outputs[:, j] = outputs.data[:, j, :]
            step, cls = self._pick_step(raw_outputs[:, j], mode, rngs, temperature, batch)
            steps_norm[:, j] = step
            if cls is not None:
                classes[:, j] = cls
        return steps_norm, raw_outputs, classes if cfg.uses_classes else None

    def _decode_bert_ar(self, obs_in, obs_times, batch, t_pred, mode, rngs, temperature):
        cfg = self.config
        t0 = cfg.t_obs
        steps_norm = np.zeros((batch, t_pred, 2))
        classes = np.zeros((batch, t_pred), dtype=np.int64)
        raw_outputs = None
        for j in range(t_pred):
            flags = np.zeros(j + 1, dtype=bool)
            flags[:j] = True
            fut_vals = classes[:, :j + 1] if cfg.uses_classes else steps_norm[:, :j + 1]
            fut_times = np.arange(t0, t0 + j + 1)
            outputs = self.model.future_outputs(obs_in, obs_times, fut_vals, fut_times, flags)
            if raw_outputs is None:
                raw_outputs = np.zeros((batch, t_pred, outputs.shape[-1]))
            raw_outputs[:, j] = outputs.data[:, j, :]
            step, cls = self._pick_step(raw_outputs[:, j], mode, rngs, temperature, batch)
            steps_norm[:, j] = step
            if cls is not None:
                classes[:, j] = cls
        return steps_norm, raw_outputs, classes if cfg.uses_classes else None

    def _decode_bert_os(self, obs_in, obs_times, batch, t_pred, mode, rngs, temperature,
                        raws, tws, endpoints):
        cfg = self.config
        t0 = cfg.t_obs
        flags = np.zeros(t_pred, dtype=bool)
        if cfg.uses_classes:
            fut_vals = np.zeros((batch, t_pred), dtype=np.int64)
        else:
            fut_vals = np.zeros((batch, t_pred, 2))
        if cfg.oracle_endpoint:
            flags[-1] = True
            if endpoints is None:
                endpoints = [r.future[-1] for r in raws]
            if len(endpoints) != batch:
                raise ModelError(f"got {len(endpoints)} endpoints for {batch} windows")
            for i in range(batch):
                # relative_positions representation: the endpoint's step value
                # is its offset from the window origin
                step = self.norm.apply(np.asarray(endpoints[i], dtype=np.float64) - tws[i].origin)
                if cfg.uses_classes:
                    fut_vals[i, -1] = self.codebook.quantize(step)
                else:
                    fut_vals[i, -1] = step
        fut_times = np.arange(t0, t0 + t_pred)
        outputs = self.model.future_outputs(obs_in, obs_times, fut_vals, fut_times, flags)
        raw_outputs = outputs.data.copy()
        steps_norm = np.zeros((batch, t_pred, 2))
        classes = np.zeros((batch, t_pred), dtype=np.int64)
        for j in range(t_pred):
            step, cls = self._pick_step(raw_outputs[:, j], mode, rngs, temperature, batch)
            steps_norm[:, j] = step
            if cls is not None:
                classes[:, j] = cls
        return steps_norm, raw_outputs, classes if cfg.uses_classes else None

    def _decode_lstm(self, obs_norm, keep, batch, t_pred, mode, rngs, temperature):
        # the recurrent net cannot skip a step, so dropped observed steps feed
        # a zero embedding (keep flags) instead of being removed
        cfg = self.config
        keep_flags = np.zeros(cfg.t_obs)
        keep_flags[keep] = 1.0
        if cfg.uses_classes:
            obs_seq = self.codebook.quantize(obs_norm)
        else:
            obs_seq = obs_norm
        steps_norm = np.zeros((batch, t_pred, 2))
        classes = np.zeros((batch, t_pred), dtype=np.int64)
        raw_outputs = None
        for j in range(t_pred):
            if cfg.uses_classes:
                seq = np.concatenate([obs_seq, classes[:, :j]], axis=1)
            else:
                seq = np.concatenate([obs_seq, steps_norm[:, :j]], axis=1)
            flags = np.concatenate([keep_flags, np.ones(j)])
            outputs = self.model.seq_outputs(seq, keep=flags)
            if raw_outputs is None:
                raw_outputs = np.zeros((batch, t_pred, outputs.shape[-1]))
            raw_outputs[:, j] = outputs.data[:, -1, :]
            step, cls = self._pick_step(raw_outputs[:, j], mode, rngs, temperature, batch)
            steps_norm[:, j] = step
            if cls is not None:
                classes[:, j] = cls
        return steps_norm, raw_outputs, classes if cfg.uses_classes else None


# ---- scoring -------------------------------------------------------------


def evaluate_mad_fad(forecaster: Forecaster, raws, mode: str = "deterministic",
                     t_pred: int | None = None, drop=()) -> tuple:
    """Average per-window MAD and FAD under deterministic (or sampled) decode."""
    results = forecaster.forecast_batch(raws, mode=mode, t_pred=t_pred, drop=drop)
    t = t_pred if t_pred is not None else forecaster.config.t_pred
    mads, fads = [], []
    for raw, res in zip(raws, results):
        m, f = mad_fad(res.positions, raw.future[:t])
        mads.append(m)
        fads.append(f)
    return float(np.mean(mads)), float(np.mean(fads))


@dataclass
class BestOfN:
    mad: float
    fad: float
    chosen: int
    sample_metrics: list = field(default_factory=list)


def best_of_n(forecaster: Forecaster, raw: RawWindow, n: int, seed: int,
              temperature: float = 1.0, select: str = "mad", window_key: int = 0) -> BestOfN:
    """Best of n sampled decodes. Sample i draws from a generator derived from
    (seed, window_key, i), so a prefix of samples is shared across different n
    under the same seed. Selection picks min MAD by default; "fad" picks min
    FAD; "per_metric" reports each metric's own best."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    if select not in ("mad", "fad", "per_metric"):
        raise ConfigError(f"unknown selection rule {select!r}")
    metrics = []
    for i in range(n):
        rng = np.random.default_rng([seed, window_key, i])
        res = forecaster.forecast(raw, mode="sampled", rng=rng, temperature=temperature)
        metrics.append(mad_fad(res.positions, raw.future))
    mads = [m for m, _ in metrics]
    fads = [f for _, f in metrics]
    if select == "per_metric":
        return BestOfN(mad=min(mads), fad=min(fads), chosen=int(np.argmin(mads)), sample_metrics=metrics)
    chosen = int(np.argmin(mads)) if select == "mad" else int(np.argmin(fads))
    return BestOfN(mad=metrics[chosen][0], fad=metrics[chosen][1], chosen=chosen, sample_metrics=metrics)


def evaluate_best_of_n(forecaster: Forecaster, raws, n: int, seed: int,
                       temperature: float = 1.0, select: str = "mad") -> tuple:
    mads, fads = [], []
    for i, raw in enumerate(raws):
        best = best_of_n(forecaster, raw, n, seed, temperature, select, window_key=i)
        mads.append(best.mad)
        fads.append(best.fad)
    return float(np.mean(mads)), float(np.mean(fads))


DEFAULT_HORIZONS = (12, 16, 20, 24, 28, 32)


def horizon_sweep(forecaster: Forecaster, raws, horizons=DEFAULT_HORIZONS) -> dict:
    """Deterministic decode at the longest horizon, scored per prefix.

    The windows must carry futures at least as long as max(horizons); the same
    observed inputs serve every horizon.
    """
    horizons = sorted(horizons)
    top = horizons[-1]
    for raw in raws:
        if len(raw.future) < top:
            raise ConfigError(f"window {raw.window_id} has {len(raw.future)} future steps, need {top}")
    results = forecaster.forecast_batch(raws, mode="deterministic", t_pred=top)
    out = {}
    for h in horizons:
        mads, fads = [], []
        for raw, res in zip(raws, results):
            m, f = mad_fad(res.positions[:h], raw.future[:h])
            mads.append(m)
            fads.append(f)
        out[h] = (float(np.mean(mads)), float(np.mean(fads)))
    return out


def horizon_monotonicity(sweep: dict, slack: float = 0.05) -> dict:
    """Soft check: MAD should not decrease by more than the slack fraction
    between consecutive horizons. Reported, not asserted."""
    hs = sorted(sweep)
    pairs = []
    for a, b in zip(hs[:-1], hs[1:]):
        ok = sweep[b][0] >= sweep[a][0] * (1.0 - slack)
        pairs.append({"from": a, "to": b, "ok": bool(ok)})
    passed = sum(p["ok"] for p in pairs)
    return {"pairs": pairs, "passed": passed, "total": len(pairs), "ok": passed >= len(pairs) - 1}


@dataclass
class MetricsRow:
    dataset: str
    mad: float
    fad: float
    n_windows: int


@dataclass
class MetricsReport:
    rows: list
    mode: str = "deterministic"
    n_samples: int | None = None
    horizon: int | None = None

    def average_row(self) -> MetricsRow:
        data = [r for r in self.rows if r.dataset != "Avg"]
        if not data:
            raise ConfigError("no rows to average")
        return MetricsRow(
            dataset="Avg",
            mad=float(np.mean([r.mad for r in data])),
            fad=float(np.mean([r.fad for r in data])),
            n_windows=sum(r.n_windows for r in data),
        )

    def with_average(self) -> "MetricsReport":
        rows = [r for r in self.rows if r.dataset != "Avg"]
        return MetricsReport(rows=rows + [self.average_row()], mode=self.mode,
                             n_samples=self.n_samples, horizon=self.horizon)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "n_samples": self.n_samples,
            "horizon": self.horizon,
            "rows": [{"dataset": r.dataset, "mad": r.mad, "fad": r.fad, "n_windows": r.n_windows}
                     for r in self.rows],
        }

    def to_table(self) -> str:
        lines = ["dataset\tmad\tfad\tn_windows"]
        for r in self.rows:
            lines.append(f"{r.dataset}\t{r.mad:.6f}\t{r.fad:.6f}\t{r.n_windows}")
        return "\n".join(lines) + "\n"


def thread_limit() -> int:
    """Worker cap for embarrassingly parallel evaluation loops."""
    raw = os.environ.get("TRAJLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"TRAJLAB_THREADS must be an integer, got {raw!r}") from None
