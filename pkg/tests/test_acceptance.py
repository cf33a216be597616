"""Acceptance gate: ten end-to-end checks, one printed verdict line each.

Verdict lines bypass output capture so they stay visible for passing tests.
The expensive corpus and trainings are memoized at module scope; the
generalization check pays for the shared models, later checks reuse them.
"""
import functools
import json
import math
import shutil
import sys
import time

import numpy as np
import pytest

from conftest import arcs_and_lines, check_grads, turn_grid_windows, write_scene_file
from trajlab.autodiff import Tensor, softmax
from trajlab.checkpoint import load_checkpoint, save_checkpoint
from trajlab.cli import main as cli_main
from trajlab.codebook import fit_codebook
from trajlab.data import canonicalize, decode_window, fit_normalization, to_representation
from trajlab.evaluation import (
    DEFAULT_HORIZONS,
    Forecaster,
    best_of_n,
    constant_velocity_forecast,
    evaluate_mad_fad,
    horizon_monotonicity,
    horizon_sweep,
    mad_fad,
)
from trajlab.layers import (
    DecoderLayer,
    Dropout,
    Embedding,
    EncoderLayer,
    FeedForward,
    LayerNorm,
    Linear,
    LSTMCell,
    MemoryAttention,
    MultiHeadAttention,
    causal_mask,
    full_mask,
    scaled_dot_attention,
    split_heads,
)
from trajlab.models import BertForecaster, LstmForecaster, ModelConfig, TFForecaster
from trajlab.training import (
    TrainSettings,
    loss_cross_entropy,
    loss_gaussian_nll,
    loss_l2,
    train,
)


@pytest.fixture(autouse=True)
def _verdict_channel(capfd):
    # capture is suspended while a verdict prints, so the lines reach the
    # terminal for passing tests too
    _memo["capfd"] = capfd
    yield
    _memo.pop("capfd", None)


def _verdict(n, ok, detail):
    state = "PASS" if ok else "FAIL"
    line = f"criterion {n}: {state} ({detail})"
    _memo[f"verdict.{n}"] = True
    cap = _memo.get("capfd")
    if cap is not None:
        with cap.disabled():
            print(line, flush=True)
    else:
        print(line, file=sys.__stdout__, flush=True)


def _criterion(n):
    # guarantees the verdict line even when a sub-check raises first
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except BaseException as exc:
                if not _memo.get(f"verdict.{n}"):
                    _verdict(n, False, f"aborted: {type(exc).__name__}: {exc}")
                raise
        return run
    return wrap


def _leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# ---- shared heavyweight state --------------------------------------------
#
# One 2000-track corpus (80/20 split) plus three trained models. Built on
# first use so whichever check runs first pays the cost; reruns are free.

_memo = {}

CORPUS_SEED = 777
SPLIT_SEED = 778
SWEEP_SEED = 779


def _split_corpus():
    if "split" not in _memo:
        full = arcs_and_lines(2000, seed=CORPUS_SEED, t_obs=8, t_pred=12)
        perm = np.random.default_rng(SPLIT_SEED).permutation(len(full))
        _memo["split"] = ([full[i] for i in perm[:1600]], [full[i] for i in perm[1600:]])
    return _memo["split"]


def _desk_config(architecture, head, k=128, representation="speeds", oracle=False):
    return ModelConfig(
        architecture=architecture, head=head, representation=representation,
        d_model=64, layers=2, heads=2, dropout_rate=0.1, k=k,
        t_obs=8, t_pred=12, oracle_endpoint=oracle,
    )


# Settings found by a small search on the fixed corpus: the regressive model
# converges in 15 epochs; the 128-way classifiers need far longer.
_RECIPES = {
    "tf_reg": (_desk_config("tf", "regressive"),
               TrainSettings(epochs=15, batch_size=64, base_rate=2e-3,
                             warmup_epochs=2, patience=0, val_fraction=0.1, seed=1)),
    "tf_quant": (_desk_config("tf", "quantized"),
                 TrainSettings(epochs=80, batch_size=64, base_rate=3e-3,
                               warmup_epochs=2, patience=0, val_fraction=0.1, seed=1)),
    "lstm_quant": (_desk_config("lstm", "quantized"),
                   TrainSettings(epochs=80, batch_size=64, base_rate=3e-3,
                                 warmup_epochs=2, patience=0, val_fraction=0.1, seed=1)),
    "bert_plain": (_desk_config("bert_os", "regressive", representation="relative_positions"),
                   TrainSettings(epochs=10, batch_size=64, base_rate=2e-3,
                                 warmup_epochs=2, patience=0, val_fraction=0.1, seed=1)),
    "bert_oracle": (_desk_config("bert_os", "regressive", representation="relative_positions",
                                 oracle=True),
                    TrainSettings(epochs=10, batch_size=64, base_rate=2e-3,
                                  warmup_epochs=2, patience=0, val_fraction=0.1, seed=1)),
}


def _trained(key):
    if key not in _memo:
        cfg, settings = _RECIPES[key]
        train_raw, _ = _split_corpus()
        forecaster, _ = train(cfg, train_raw, settings)
        _memo[key] = forecaster
    return _memo[key]


# ---- 1: gradients --------------------------------------------------------


@_criterion(1)
def test_criterion_1_gradient_suite():
    t0 = time.perf_counter()
    d, heads, t = 6, 2, 4
    rng = np.random.default_rng(11)
    checks = 0

    # The key-projection bias shifts every logit in a row equally, so the
    # softmax cannot see it: its true gradient is zero and FD there measures
    # pure roundoff. Those entries are asserted to vanish instead.
    def fd(build, tensors, zero_grad=()):
        nonlocal checks
        live = {k: v for k, v in tensors.items() if k not in zero_grad}
        check_grads(build, live, tol=1e-4)
        for name in zero_grad:
            assert np.abs(tensors[name].grad).max() < 1e-8, name
        checks += 1

    lin = Linear(d, 3, rng)
    x = _leaf(rng, 2, t, d)
    fd(lambda: (lin(x) ** 2.0).sum(), {"w": lin.w, "b": lin.b, "x": x})

    ln = LayerNorm(d)
    x = _leaf(rng, 3, d)
    fd(lambda: (ln(x) ** 2.0).sum(), {"gain": ln.gain, "bias": ln.bias, "x": x})

    emb = Embedding(5, d, rng)
    idx = np.array([[0, 3, 1, 4]])
    fd(lambda: (emb(idx) ** 2.0).sum(), {"table": emb.table})

    # fresh generator per evaluation keeps the dropout mask fixed for FD
    drop = Dropout(0.5)
    x = _leaf(rng, 4, d)
    fd(lambda: (drop(x, rng=np.random.default_rng(7), training=True) ** 2.0).sum(), {"x": x})

    attn = MultiHeadAttention(d, heads, rng)
    x = _leaf(rng, 1, t, d)
    fd(lambda: (attn(x, x, x, full_mask(t, t)) ** 2.0).sum(),
       dict(attn.named_params(), x=x), zero_grad=("wk.b",))

    mem = MemoryAttention(d, heads, rng)
    x = _leaf(rng, 1, t, d)
    mk = _leaf(rng, 1, heads, 3, d // heads)
    mv = _leaf(rng, 1, heads, 3, d // heads)
    fd(lambda: (mem(x, mk, mv, full_mask(t, 3)) ** 2.0).sum(),
       dict(mem.named_params(), x=x, mem_k=mk, mem_v=mv))

    ff = FeedForward(d, rng)
    x = _leaf(rng, 2, d)
    fd(lambda: (ff(x) ** 2.0).sum(), dict(ff.named_params(), x=x))

    enc = EncoderLayer(d, heads, 0.0, rng)
    x = _leaf(rng, 1, t, d)
    fd(lambda: (enc(x, full_mask(t, t)) ** 2.0).sum(), dict(enc.named_params(), x=x),
       zero_grad=("attn.wk.b",))

    dec = DecoderLayer(d, heads, 0.0, rng)
    x = _leaf(rng, 1, t, d)
    mk = _leaf(rng, 1, heads, 3, d // heads)
    mv = _leaf(rng, 1, heads, 3, d // heads)
    fd(lambda: (dec(x, mk, mv, causal_mask(t), full_mask(t, 3)) ** 2.0).sum(),
       dict(dec.named_params(), x=x), zero_grad=("self_attn.wk.b",))

    cell = LSTMCell(d, d, rng)
    x1, x2 = _leaf(rng, 2, d), _leaf(rng, 2, d)

    def lstm_roll():
        h = Tensor(np.zeros((2, d)))
        c = Tensor(np.zeros((2, d)))
        h, c = cell(x1, h, c)
        h, c = cell(x2, h, c)
        return (h ** 2.0).sum() + (c ** 2.0).sum()

    fd(lstm_roll, dict(cell.named_params(), x1=x1, x2=x2))

    target = rng.normal(size=(2, 3, 2))
    head2 = Linear(d, 2, rng)
    x = _leaf(rng, 2, 3, d)
    fd(lambda: loss_l2(head2(x), target), {"w": head2.w, "b": head2.b, "x": x})

    head5 = Linear(d, 5, rng)
    x = _leaf(rng, 2, 3, d)
    fd(lambda: loss_gaussian_nll(head5(x), target), {"w": head5.w, "b": head5.b, "x": x})

    classes = np.array([[0, 2, 3], [1, 3, 0]])
    head4 = Linear(d, 4, rng)
    x = _leaf(rng, 2, 3, d)
    fd(lambda: loss_cross_entropy(head4(x), classes), {"w": head4.w, "b": head4.b, "x": x})

    elapsed = time.perf_counter() - t0
    ok = elapsed < 120.0
    _verdict(1, ok, f"{checks} layer/loss gradient targets at rel err < 1e-4, {elapsed:.1f}s (limit 120s)")
    assert ok


# ---- 2: attention invariants ---------------------------------------------


@_criterion(2)
def test_criterion_2_attention_invariants():
    rng = np.random.default_rng(21)

    # softmax rows: random and extreme logits, and in-situ attention weights
    logits = np.concatenate([rng.normal(size=(50, 9)), rng.uniform(-30, 30, size=(50, 9))])
    rows = softmax(Tensor(logits)).data.sum(axis=-1)
    softmax_err = float(np.abs(rows - 1.0).max())

    attn = MultiHeadAttention(8, 1, rng)
    n = 6
    x = Tensor(rng.normal(size=(1, n, 8)))
    q = split_heads(attn.wq(x), 1)
    k = split_heads(attn.wk(x), 1)
    weights = scaled_dot_attention(q, k, Tensor(np.eye(n)[None, None]), full_mask(n, n))
    softmax_err = max(softmax_err, float(np.abs(weights.data.sum(axis=-1) - 1.0).max()))

    # causal mask: perturbing input j leaves outputs before j untouched
    dec = DecoderLayer(8, 2, 0.0, np.random.default_rng(22))
    mk = Tensor(rng.normal(size=(1, 2, 5, 4)))
    mv = Tensor(rng.normal(size=(1, 2, 5, 4)))
    base_in = rng.normal(size=(1, n, 8))
    base = dec(Tensor(base_in), mk, mv, causal_mask(n), full_mask(n, 5)).data
    leak = 0.0
    for j in range(1, n):
        bumped = base_in.copy()
        bumped[0, j] += 10.0
        out = dec(Tensor(bumped), mk, mv, causal_mask(n), full_mask(n, 5)).data
        leak = max(leak, float(np.abs(out[0, :j] - base[0, :j]).max()))

    # masked future slots must ignore supplied values bit for bit
    cfg = ModelConfig(architecture="bert_os", head="regressive", representation="speeds",
                      d_model=16, layers=1, heads=2, dropout_rate=0.0, t_obs=4, t_pred=3)
    bert = BertForecaster(cfg, np.random.default_rng(23))
    obs = rng.normal(size=(2, 4, 2))
    flags = np.zeros(3, dtype=bool)
    zeroed = bert.future_outputs(obs, np.arange(4), np.zeros((2, 3, 2)), np.arange(4, 7), flags).data
    garbage = bert.future_outputs(obs, np.arange(4), np.full((2, 3, 2), 1e6), np.arange(4, 7), flags).data
    bert_exact = np.array_equal(zeroed, garbage)

    # dropped-step zero fill: garbage in dropped rows cannot reach the output
    lcfg = ModelConfig(architecture="lstm", head="regressive", representation="speeds",
                       d_model=16, layers=1, heads=2, dropout_rate=0.0, t_obs=4, t_pred=3)
    lstm = LstmForecaster(lcfg, np.random.default_rng(24))
    steps = rng.normal(size=(2, 6, 2))
    keep = np.array([1.0, 0.0, 1.0, 1.0, 0.0, 1.0])
    clean = lstm.seq_outputs(steps, keep).data
    steps_bad = steps.copy()
    steps_bad[:, keep == 0.0] = 1e9
    lstm_exact = np.array_equal(clean, lstm.seq_outputs(steps_bad, keep).data)

    ok = softmax_err < 1e-9 and leak < 1e-9 and bert_exact and lstm_exact
    _verdict(2, ok, f"softmax row err {softmax_err:.1e}, causal leak {leak:.1e}, "
                    f"mask exclusion exact={bert_exact and lstm_exact}")
    assert softmax_err < 1e-9
    assert leak < 1e-9
    assert bert_exact and lstm_exact


# ---- 3: metric oracle ----------------------------------------------------


def _brute_mad_fad(pred, true):
    dists = [math.hypot(p[0] - q[0], p[1] - q[1]) for p, q in zip(pred, true)]
    return sum(dists) / len(dists), dists[-1]


@_criterion(3)
def test_criterion_3_metric_oracle():
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(1000):
        t = int(rng.integers(1, 21))
        pred = rng.normal(size=(t, 2)) * rng.uniform(0.1, 10.0)
        true = rng.normal(size=(t, 2)) * rng.uniform(0.1, 10.0)
        got = mad_fad(pred, true)
        want = _brute_mad_fad(pred, true)
        worst = max(worst, abs(got[0] - want[0]), abs(got[1] - want[1]))

    # sampled best-of-n against a from-scratch selection loop
    cfg = ModelConfig(architecture="lstm", head="gaussian", representation="speeds",
                      d_model=8, layers=1, heads=2, dropout_rate=0.0, t_obs=8, t_pred=12)
    raws = arcs_and_lines(50, seed=32)
    stats = fit_normalization([to_representation(r, "speeds") for r in raws])
    fc = Forecaster(config=cfg, model=LstmForecaster(cfg, np.random.default_rng(33)), norm=stats)
    n, seed = 20, 70
    bon_worst = 0.0
    for key, raw in enumerate(raws):
        sampled = []
        for i in range(n):
            res = fc.forecast(raw, mode="sampled", rng=np.random.default_rng([seed, key, i]))
            sampled.append(_brute_mad_fad(res.positions, raw.future))
        want_mad, want_fad = min(sampled, key=lambda mf: mf[0])
        got = best_of_n(fc, raw, n, seed, window_key=key)
        bon_worst = max(bon_worst, abs(got.mad - want_mad), abs(got.fad - want_fad))

    # nested seeds share the sample prefix, so the best can only improve
    monotone = True
    for key, raw in enumerate(raws[:10]):
        prev = math.inf
        for n_sub in (1, 2, 4, 8, 16):
            cur = best_of_n(fc, raw, n_sub, seed, window_key=key).mad
            monotone = monotone and cur <= prev + 1e-15
            prev = cur

    ok = worst < 1e-12 and bon_worst < 1e-12 and monotone
    _verdict(3, ok, f"1000 metric + {len(raws) * n} best-of-n sample instances, "
                    f"max dev {max(worst, bon_worst):.1e}, nested-seed monotone={monotone}")
    assert worst < 1e-12
    assert bon_worst < 1e-12
    assert monotone


# ---- 4: codebook ---------------------------------------------------------


@_criterion(4)
def test_criterion_4_codebook_recovery():
    rng = np.random.default_rng(41)
    means = np.array([[-5.0, -5.0], [-5.0, 5.0], [5.0, -5.0], [5.0, 5.0]])
    sigma, per_blob = 0.3, 200
    points = np.concatenate([m + rng.normal(scale=sigma, size=(per_blob, 2)) for m in means])

    cb = fit_codebook(points, 4, seed=5)
    se = sigma / math.sqrt(per_blob)
    recovery = 0.0
    matched = set()
    for m in means:
        j = int(np.argmin(((cb.centroids - m) ** 2).sum(axis=1)))
        matched.add(j)
        recovery = max(recovery, float(np.abs(cb.centroids[j] - m).max()))
    blobs_ok = len(matched) == 4 and recovery <= 3.0 * se

    probe = rng.normal(scale=6.0, size=(500, 2))
    recon = cb.dequantize(cb.quantize(probe))
    err = np.sqrt(((probe - recon) ** 2).sum(axis=1))
    assigned = np.sqrt(_pairwise_min(probe, cb.centroids))
    bound_ok = bool((err <= assigned.max() + 1e-9).all())

    again = fit_codebook(points, 4, seed=5)
    deterministic = np.array_equal(cb.centroids, again.centroids)

    ok = blobs_ok and bound_ok and deterministic
    _verdict(4, ok, f"blob recovery {recovery:.4f} <= 3 SE ({3.0 * se:.4f}), "
                    f"recon bounded={bound_ok}, deterministic={deterministic}")
    assert blobs_ok
    assert bound_ok
    assert deterministic


def _pairwise_min(points, centers):
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d2.min(axis=1)


# ---- 5: overfit ----------------------------------------------------------


@_criterion(5)
def test_criterion_5_overfit_constant_turn():
    t0 = time.perf_counter()
    windows = turn_grid_windows(32)
    cfg = ModelConfig(architecture="tf", head="quantized", representation="speeds",
                      d_model=64, layers=2, heads=2, dropout_rate=0.0, k=32,
                      t_obs=8, t_pred=12)
    settings = TrainSettings(epochs=80, batch_size=8, base_rate=3e-3, warmup_epochs=3,
                             patience=0, val_fraction=0.0, seed=0, augment=False)
    fc, report = train(cfg, windows, settings)
    train_mad, _ = evaluate_mad_fad(fc, windows)
    elapsed = time.perf_counter() - t0
    ok = train_mad < 0.05 and len(report.records) <= 500 and elapsed < 600.0
    _verdict(5, ok, f"train MAD {train_mad:.4f} m after {len(report.records)} epochs "
                    f"(limit 0.05 within 500), {elapsed:.1f}s (limit 600s)")
    assert train_mad < 0.05
    assert len(report.records) <= 500
    assert elapsed < 600.0


# ---- 6: generalization ordering ------------------------------------------


@_criterion(6)
def test_criterion_6_generalization_ordering():
    t0 = time.perf_counter()
    _, test_raw = _split_corpus()
    cv_mads = [mad_fad(constant_velocity_forecast(r), r.future)[0] for r in test_raw]
    cv = float(np.mean(cv_mads))

    tf_reg, _ = evaluate_mad_fad(_trained("tf_reg"), test_raw)
    tf_quant, _ = evaluate_mad_fad(_trained("tf_quant"), test_raw)
    lstm_quant, _ = evaluate_mad_fad(_trained("lstm_quant"), test_raw)
    elapsed = time.perf_counter() - t0

    bar = 0.8 * cv
    ok = tf_reg <= bar and tf_quant <= bar and tf_quant < lstm_quant and elapsed < 1800.0
    _verdict(6, ok, f"held-out MAD: const-vel {cv:.4f}, tf-reg {tf_reg:.4f}, "
                    f"tf-quant {tf_quant:.4f} (bar {bar:.4f}), lstm-quant {lstm_quant:.4f}, "
                    f"{elapsed:.0f}s (limit 1800s)")
    assert tf_reg <= bar
    assert tf_quant <= bar
    assert tf_quant < lstm_quant
    assert elapsed < 1800.0


# ---- 7: oracle endpoint --------------------------------------------------


@_criterion(7)
def test_criterion_7_oracle_endpoint_effect():
    _, test_raw = _split_corpus()
    _, plain_fad = evaluate_mad_fad(_trained("bert_plain"), test_raw)
    _, oracle_fad = evaluate_mad_fad(_trained("bert_oracle"), test_raw)
    ok = oracle_fad < 0.5 * plain_fad
    _verdict(7, ok, f"endpoint-informed FAD {oracle_fad:.4f} vs {plain_fad:.4f} "
                    f"({100.0 * oracle_fad / plain_fad:.0f}% of plain, need < 50%)")
    assert ok


# ---- 8: horizon sweep ----------------------------------------------------


@_criterion(8)
def test_criterion_8_horizon_sweep():
    long_raws = arcs_and_lines(300, seed=SWEEP_SEED, t_obs=8, t_pred=32)
    sweep = horizon_sweep(_trained("tf_reg"), long_raws, DEFAULT_HORIZONS)
    complete = sorted(sweep) == sorted(DEFAULT_HORIZONS) and all(
        math.isfinite(sweep[h][0]) and math.isfinite(sweep[h][1]) for h in sweep)
    mono = horizon_monotonicity(sweep, slack=0.05)
    ok = complete and mono["ok"]
    span = f"{sweep[min(sweep)][0]:.3f} -> {sweep[max(sweep)][0]:.3f}"
    _verdict(8, ok, f"horizons {sorted(sweep)} complete, MAD {span}, "
                    f"soft monotone {mono['passed']}/{mono['total']} pairs")
    assert complete
    assert mono["ok"]


# ---- 9: round trips ------------------------------------------------------


@_criterion(9)
def test_criterion_9_round_trips(tmp_path):
    rng = np.random.default_rng(91)
    worst = {"repr": 0.0, "canon": 0.0, "norm": 0.0}
    raws = arcs_and_lines(40, seed=92)
    for raw in raws:
        for mode in ("speeds", "relative_positions"):
            back = decode_window(to_representation(raw, mode))
            worst["repr"] = max(worst["repr"],
                                float(np.abs(back.observed - raw.observed).max()),
                                float(np.abs(back.future - raw.future).max()))
        canon, tf = canonicalize(raw)
        worst["canon"] = max(worst["canon"],
                             float(np.abs(tf.invert(canon.observed) - raw.observed).max()),
                             float(np.abs(tf.invert(canon.future) - raw.future).max()))

    tracks = [to_representation(r, "speeds") for r in raws]
    stats = fit_normalization(tracks)
    for track in tracks:
        back = stats.invert(stats.apply(track.future))
        worst["norm"] = max(worst["norm"], float(np.abs(back - track.future).max()))

    cfg = ModelConfig(architecture="tf", head="quantized", representation="speeds",
                      d_model=8, layers=1, heads=2, dropout_rate=0.0, k=8, t_obs=8, t_pred=12)
    steps = np.concatenate([stats.apply(t.future) for t in tracks])
    fc = Forecaster(config=cfg, model=TFForecaster(cfg, rng), norm=stats,
                    codebook=fit_codebook(steps, 8, seed=93))
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(p1, fc, epoch=3, val_mad=0.5)
    reloaded, _ = load_checkpoint(p1)
    save_checkpoint(p2, reloaded, epoch=3, val_mad=0.5)
    bytes_equal = p1.read_bytes() == p2.read_bytes()

    tol = 1e-12
    ok = all(v < tol for v in worst.values()) and bytes_equal
    _verdict(9, ok, f"repr {worst['repr']:.1e}, canonical {worst['canon']:.1e}, "
                    f"norm {worst['norm']:.1e} (tol 1e-12), checkpoint bytes equal={bytes_equal}")
    assert all(v < tol for v in worst.values())
    assert bytes_equal


# ---- 10: determinism -----------------------------------------------------

PIPELINE_CONFIG = """\
[model]
architecture = tf
head = regressive
representation = speeds
d_model = 8
layers = 1
heads = 2
dropout_rate = 0.0
t_obs = 4
t_pred = 3
k = 8

[train]
epochs = 2
batch_size = 16
base_rate = 0.003
warmup_epochs = 1
patience = 0
val_fraction = 0.2
seed = 0

[eval]
n_samples = 2
"""


def _run_pipeline(root, raw, config):
    dirs = (root / "cache", root / "trained", root / "scored")
    cache, trained, scored = dirs
    assert cli_main(["prepare", "--config", str(config), "--data", str(raw),
                     "--out", str(cache)]) == 0
    assert cli_main(["train", "--config", str(config), "--data", str(cache),
                     "--fold", "alpha", "--out", str(trained)]) == 0
    assert cli_main(["eval", "--config", str(config), "--data", str(cache),
                     "--checkpoint", str(trained / "checkpoint.bin"),
                     "--fold", "alpha", "--out", str(scored)]) == 0
    return dirs


def _strip_wall_clock(raw_bytes):
    rows = []
    for line in raw_bytes.decode().splitlines():
        row = json.loads(line)
        row.pop("wall_clock_s", None)
        rows.append(row)
    return rows


@_criterion(10)
def test_criterion_10_rerun_determinism(tmp_path):
    raw = tmp_path / "raw"
    raw.mkdir()
    for i, name in enumerate(("alpha", "beta")):
        write_scene_file(raw / f"{name}.txt", n_peds=3, seed=100 + i, n_frames=16)
    config = tmp_path / "run.ini"
    config.write_text(PIPELINE_CONFIG)

    # identical command lines both times; outputs wiped in between
    dirs = _run_pipeline(tmp_path, raw, config)
    snapshot = {}
    for d in dirs:
        for path in sorted(d.rglob("*")):
            if path.is_file():
                snapshot[str(path.relative_to(tmp_path))] = path.read_bytes()
        shutil.rmtree(d)
    _run_pipeline(tmp_path, raw, config)

    compared = 0
    identical = True
    for rel, before in snapshot.items():
        compared += 1
        after = (tmp_path / rel).read_bytes()
        if rel.endswith("report.jsonl"):
            same = _strip_wall_clock(before) == _strip_wall_clock(after)
        else:
            same = before == after
        if not same:
            identical = False
    ok = identical and compared >= 8
    _verdict(10, ok, f"{compared} output files byte-identical across rerun "
                     f"(training log compared net of wall-clock)")
    assert identical
    assert compared >= 8
