"""Command-line pipeline driver.

Config files are flat INI-style key=value sections; command-line flags
override file values. Every command writes its outputs, the resolved config,
and a manifest of file hashes under --out. Exit codes: 0 success, 1 usage or
configuration problem, 2 data problem, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .codebook import fit_codebook
from .data import (Fold, fit_normalization, load_cache, parse_dataset, save_cache,
                   to_representation, window_all)
from .errors import ConfigError, DataError, TrajlabError
from .evaluation import (MetricsReport, MetricsRow, evaluate_best_of_n, evaluate_mad_fad,
                         horizon_monotonicity, horizon_sweep, thread_limit)
from .models import ModelConfig, config_hash, count_parameters, scale_report
from .multimodal import (canonicalize_windows, cluster_motion_types, emit_cluster_figures,
                         emit_sweep_figure, endpoint_sweep, nearest_to_medoid)
from .training import TrainSettings, train

DEFAULT_CONFIG = {
    "model": {
        "architecture": "tf",
        "head": "regressive",
        "representation": "speeds",
        "d_model": "64",
        "layers": "2",
        "heads": "2",
        "dropout_rate": "0.1",
        "k": "32",
        "t_obs": "8",
        "t_pred": "12",
        "oracle_endpoint": "false",
    },
    "data": {
        "dataset_dir": "",
        "fold": "",
    },
    "train": {
        "epochs": "50",
        "batch_size": "64",
        "base_rate": "0.001",
        "warmup_epochs": "5",
        "patience": "10",
        "val_fraction": "0.1",
        "seed": "0",
        "augment": "",
        "scale_min": "0.5",
        "scale_max": "2.0",
        "codebook_iters": "300",
    },
    "eval": {
        "n_samples": "20",
        "temperature": "1.0",
        "select": "mad",
        "horizons": "12,16,20,24,28,32",
    },
}


def load_run_config(path=None) -> dict:
    """Defaults, overlaid with a config file if given. Unknown keys rejected."""
    conf = {sec: dict(keys) for sec, keys in DEFAULT_CONFIG.items()}
    if path is None:
        return conf
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read_string(path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for sec in parser.sections():
        if sec not in conf:
            raise ConfigError(f"{path}: unknown section [{sec}]")
        for key, value in parser.items(sec):
            if key not in conf[sec]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
            conf[sec][key] = value
    return conf


def _conf_int(conf, sec, key) -> int:
    try:
        return int(conf[sec][key])
    except ValueError:
        raise ConfigError(f"[{sec}] {key} must be an integer, got {conf[sec][key]!r}") from None


def _conf_float(conf, sec, key) -> float:
    try:
        return float(conf[sec][key])
    except ValueError:
        raise ConfigError(f"[{sec}] {key} must be a number, got {conf[sec][key]!r}") from None


def _conf_bool(conf, sec, key):
    raw = conf[sec][key].strip().lower()
    if raw in ("", "none"):
        return None
    if raw in ("true", "yes", "1"):
        return True
    if raw in ("false", "no", "0"):
        return False
    raise ConfigError(f"[{sec}] {key} must be a boolean, got {conf[sec][key]!r}")


def model_config_from(conf) -> ModelConfig:
    return ModelConfig(
        architecture=conf["model"]["architecture"],
        head=conf["model"]["head"],
        representation=conf["model"]["representation"],
        d_model=_conf_int(conf, "model", "d_model"),
        layers=_conf_int(conf, "model", "layers"),
        heads=_conf_int(conf, "model", "heads"),
        dropout_rate=_conf_float(conf, "model", "dropout_rate"),
        k=_conf_int(conf, "model", "k"),
        t_obs=_conf_int(conf, "model", "t_obs"),
        t_pred=_conf_int(conf, "model", "t_pred"),
        oracle_endpoint=bool(_conf_bool(conf, "model", "oracle_endpoint")),
    )


def train_settings_from(conf) -> TrainSettings:
    return TrainSettings(
        epochs=_conf_int(conf, "train", "epochs"),
        batch_size=_conf_int(conf, "train", "batch_size"),
        base_rate=_conf_float(conf, "train", "base_rate"),
        warmup_epochs=_conf_int(conf, "train", "warmup_epochs"),
        patience=_conf_int(conf, "train", "patience"),
        val_fraction=_conf_float(conf, "train", "val_fraction"),
        seed=_conf_int(conf, "train", "seed"),
        augment=_conf_bool(conf, "train", "augment"),
        scale_range=(_conf_float(conf, "train", "scale_min"),
                     _conf_float(conf, "train", "scale_max")),
        codebook_iters=_conf_int(conf, "train", "codebook_iters"),
    )


def _parse_horizons(text: str):
    try:
        values = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"horizons must be comma-separated integers, got {text!r}") from None
    if not values:
        raise ConfigError("horizons list is empty")
    return values


def apply_overrides(conf, args) -> None:
    if getattr(args, "data", None):
        conf["data"]["dataset_dir"] = args.data
    if getattr(args, "seed", None) is not None:
        conf["train"]["seed"] = str(args.seed)
    folds = getattr(args, "fold", None)
    if folds:
        conf["data"]["fold"] = folds[0]
    if getattr(args, "arch", None):
        conf["model"]["architecture"] = args.arch
    if getattr(args, "head", None):
        conf["model"]["head"] = args.head
    if getattr(args, "repr", None):
        conf["model"]["representation"] = args.repr
    if getattr(args, "k", None) is not None:
        conf["model"]["k"] = str(args.k)
    if getattr(args, "n_samples", None) is not None:
        conf["eval"]["n_samples"] = str(args.n_samples)
    if getattr(args, "horizons", None):
        conf["eval"]["horizons"] = args.horizons
    if getattr(args, "oracle", False):
        conf["model"]["oracle_endpoint"] = "true"


# ---- output plumbing -----------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def resolved_config_text(conf) -> str:
    lines = []
    for sec in sorted(conf):
        lines.append(f"[{sec}]")
        for key in sorted(conf[sec]):
            lines.append(f"{key} = {conf[sec][key]}")
        lines.append("")
    return "\n".join(lines)


def finish_outputs(out_dir: Path, command: str, conf, volatile=()) -> None:
    """Write the resolved config and a hash manifest next to the outputs.

    Volatile files (wall-clock logs) are listed but not hashed, so the
    manifest itself stays deterministic.
    """
    out_dir = Path(out_dir)
    (out_dir / "resolved_config.ini").write_text(resolved_config_text(conf))
    volatile = {str(v) for v in volatile}
    files = {}
    for path in sorted(out_dir.rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(out_dir).as_posix()
        if rel == "manifest.json" or rel in volatile:
            continue
        files[rel] = _sha256(path)
    manifest = {"command": command, "files": files, "volatile": sorted(volatile)}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---- dataset loading -----------------------------------------------------


def _require_dir(path_text: str, what: str) -> Path:
    if not path_text:
        raise ConfigError(f"no {what} directory given (set [data] dataset_dir or --data)")
    path = Path(path_text)
    if not path.is_dir():
        raise DataError(f"{what} directory not found: {path}")
    return path


def _raw_scene_windows(data_dir: Path, t_obs: int, t_pred: int) -> dict:
    files = sorted(data_dir.glob("*.txt"))
    if not files:
        raise DataError(f"no scene files (*.txt) in {data_dir}")
    scenes = {}
    for f in files:
        trajectories = parse_dataset(f)
        scenes[f.stem] = window_all(trajectories, t_obs=t_obs, t_pred=t_pred)
    return scenes


def _cached_scene_windows(data_dir: Path) -> dict:
    caches = sorted(data_dir.glob("cache_*.bin"))
    if not caches:
        raise DataError(f"no prepared caches (cache_*.bin) in {data_dir}; run prepare first")
    scenes = {}
    for c in caches:
        windows, _ = load_cache(c)
        scenes[c.stem[len("cache_"):]] = windows
    return scenes


def _pick_fold(scenes: dict, fold_name: str) -> Fold:
    names = sorted(scenes)
    if not fold_name:
        raise ConfigError(f"this command needs --fold; scenes: {', '.join(names)}")
    if fold_name not in scenes:
        raise DataError(f"fold {fold_name!r} not among scenes: {', '.join(names)}")
    return Fold(test_scene=fold_name, train_scenes=[s for s in names if s != fold_name])


def _train_windows(scenes: dict, fold_name: str):
    """Concatenated training windows; with no fold, every scene trains."""
    names = sorted(scenes)
    if fold_name:
        fold = _pick_fold(scenes, fold_name)
        names = fold.train_scenes
    windows = [w for name in names for w in scenes[name]]
    if not windows:
        raise DataError("no training windows")
    return windows


# ---- commands ------------------------------------------------------------


def cmd_prepare(args, conf) -> int:
    cfg = model_config_from(conf)
    data_dir = _require_dir(conf["data"]["dataset_dir"], "dataset")
    out = _out_dir(args)
    scenes = _raw_scene_windows(data_dir, cfg.t_obs, cfg.t_pred)
    total = 0
    for name, windows in sorted(scenes.items()):
        save_cache(out / f"cache_{name}.bin", windows, t_obs=cfg.t_obs, t_pred=cfg.t_pred,
                   stride=1, config_hash=config_hash(cfg.to_dict()))
        total += len(windows)
        print(f"{name}: {len(windows)} windows")
    finish_outputs(out, "prepare", conf)
    print(f"prepared {len(scenes)} scenes, {total} windows -> {out}")
    return 0


def cmd_fit_codebook(args, conf) -> int:
    cfg = model_config_from(conf)
    settings = train_settings_from(conf)
    data_dir = _require_dir(conf["data"]["dataset_dir"], "cache")
    out = _out_dir(args)
    raws = _train_windows(_cached_scene_windows(data_dir), conf["data"]["fold"])
    tracks = [to_representation(r, cfg.representation) for r in raws]
    stats = fit_normalization(tracks)
    steps = np.concatenate(
        [np.concatenate([stats.apply(t.observed), stats.apply(t.future)]) for t in tracks])
    codebook = fit_codebook(steps, cfg.k, seed=settings.seed, max_iters=settings.codebook_iters)
    ckpt_io.save_codebook(out / "codebook.bin", codebook)
    summary = {"k": codebook.k, "seed": codebook.seed, "iterations": codebook.iterations_run,
               "inertia": codebook.inertia, "n_steps": int(len(steps))}
    (out / "codebook.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    finish_outputs(out, "fit-codebook", conf)
    print(f"codebook k={codebook.k} inertia={codebook.inertia:.6f} -> {out}")
    return 0


def cmd_train(args, conf) -> int:
    cfg = model_config_from(conf)
    settings = train_settings_from(conf)
    data_dir = _require_dir(conf["data"]["dataset_dir"], "cache")
    out = _out_dir(args)
    raws = _train_windows(_cached_scene_windows(data_dir), conf["data"]["fold"])
    forecaster, report = train(cfg, raws, settings, quiet=args.quiet)
    best_mad = math.nan if report.best_val_mad is None else report.best_val_mad
    ckpt_io.save_checkpoint(out / "checkpoint.bin", forecaster,
                            epoch=report.best_epoch, val_mad=best_mad)
    (out / "report.jsonl").write_text("\n".join(report.jsonl_lines()) + "\n")
    summary = {
        "config_hash": report.config_hash,
        "best_epoch": report.best_epoch,
        "best_val_mad": report.best_val_mad,
        "stopped_early": report.stopped_early,
        "epochs_run": len(report.records),
        "n_windows": len(raws),
        "n_params": count_parameters(cfg),
        "seed": settings.seed,
    }
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    finish_outputs(out, "train", conf, volatile=["report.jsonl"])
    print(f"trained {len(report.records)} epochs, best val MAD "
          f"{best_mad:.4f} at epoch {report.best_epoch} -> {out}")
    return 0


def _eval_pairs(args, conf, scenes) -> list:
    """(row name, checkpoint path, test windows) triples for eval commands."""
    ckpts = args.checkpoint or []
    if not ckpts:
        raise ConfigError("this command needs at least one --checkpoint")
    folds = args.fold or ([conf["data"]["fold"]] if conf["data"]["fold"] else [])
    if len(folds) not in (0, len(ckpts)):
        raise ConfigError(f"got {len(ckpts)} checkpoints but {len(folds)} folds")
    pairs = []
    for i, ckpt in enumerate(ckpts):
        if folds:
            fold = _pick_fold(scenes, folds[i])
            pairs.append((fold.test_scene, Path(ckpt), scenes[fold.test_scene]))
        else:
            name = sorted(scenes)[0] if len(scenes) == 1 else None
            if name is None:
                raise ConfigError("multiple scenes prepared; pass --fold per checkpoint")
            pairs.append((name, Path(ckpt), scenes[name]))
    return pairs


def _run_rows(pairs, row_fn) -> list:
    workers = min(thread_limit(), len(pairs))
    if workers <= 1:
        return [row_fn(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(row_fn, pairs))


def _write_metrics(out: Path, stem: str, report: MetricsReport, row_configs) -> None:
    payload = report.to_dict()
    for row, extra in zip(payload["rows"], row_configs + [None]):
        if extra is not None:
            row.update(extra)
    (out / f"{stem}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (out / f"{stem}.tsv").write_text(report.to_table())


def cmd_eval(args, conf) -> int:
    data_dir = _require_dir(conf["data"]["dataset_dir"], "cache")
    out = _out_dir(args)
    scenes = _cached_scene_windows(data_dir)
    pairs = _eval_pairs(args, conf, scenes)

    def row_fn(pair):
        name, ckpt, windows = pair
        if not ckpt.is_file():
            raise DataError(f"checkpoint not found: {ckpt}")
        forecaster, _ = ckpt_io.load_checkpoint(ckpt)
        mad, fad = evaluate_mad_fad(forecaster, windows)
        cfg = forecaster.config
        extra = {"architecture": cfg.architecture, "head": cfg.head,
                 "config_hash": config_hash(cfg.to_dict())}
        return MetricsRow(dataset=name, mad=mad, fad=fad, n_windows=len(windows)), extra

    rows_extra = _run_rows(pairs, row_fn)
    report = MetricsReport(rows=[r for r, _ in rows_extra]).with_average()
    _write_metrics(out, "metrics", report, [e for _, e in rows_extra])
    finish_outputs(out, "eval", conf)
    print(report.to_table(), end="")
    return 0


def cmd_best_of_n(args, conf) -> int:
    data_dir = _require_dir(conf["data"]["dataset_dir"], "cache")
    out = _out_dir(args)
    scenes = _cached_scene_windows(data_dir)
    pairs = _eval_pairs(args, conf, scenes)
    n = _conf_int(conf, "eval", "n_samples")
    temperature = _conf_float(conf, "eval", "temperature")
    select = conf["eval"]["select"]
    seed = _conf_int(conf, "train", "seed")

    def row_fn(pair):
        name, ckpt, windows = pair
        if not ckpt.is_file():
            raise DataError(f"checkpoint not found: {ckpt}")
        forecaster, _ = ckpt_io.load_checkpoint(ckpt)
        mad, fad = evaluate_best_of_n(forecaster, windows, n, seed,
                                      temperature=temperature, select=select)
        cfg = forecaster.config
        extra = {"architecture": cfg.architecture, "head": cfg.head,
                 "config_hash": config_hash(cfg.to_dict())}
        return MetricsRow(dataset=name, mad=mad, fad=fad, n_windows=len(windows)), extra

    rows_extra = _run_rows(pairs, row_fn)
    report = MetricsReport(rows=[r for r, _ in rows_extra], mode="sampled",
                           n_samples=n).with_average()
    _write_metrics(out, "metrics_best_of_n", report, [e for _, e in rows_extra])
    finish_outputs(out, "best-of-n", conf)
    print(report.to_table(), end="")
    return 0


def cmd_horizon(args, conf) -> int:
    cfg_file = model_config_from(conf)
    data_dir = _require_dir(conf["data"]["dataset_dir"], "dataset")
    out = _out_dir(args)
    horizons = _parse_horizons(conf["eval"]["horizons"])
    if not args.checkpoint or len(args.checkpoint) != 1:
        raise ConfigError("horizon needs exactly one --checkpoint")
    ckpt = Path(args.checkpoint[0])
    if not ckpt.is_file():
        raise DataError(f"checkpoint not found: {ckpt}")
    forecaster, _ = ckpt_io.load_checkpoint(ckpt)
    # longer futures than the training protocol, so re-window the raw scenes
    scenes = _raw_scene_windows(data_dir, cfg_file.t_obs, max(horizons))
    fold = _pick_fold(scenes, conf["data"]["fold"])
    windows = scenes[fold.test_scene]
    if not windows:
        raise DataError(f"scene {fold.test_scene!r} yields no windows at horizon {max(horizons)}")
    sweep = horizon_sweep(forecaster, windows, horizons)
    mono = horizon_monotonicity(sweep)
    payload = {
        "fold": fold.test_scene,
        "n_windows": len(windows),
        "horizons": {str(h): {"mad": m, "fad": f} for h, (m, f) in sweep.items()},
        "monotonicity": mono,
    }
    (out / "horizon.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    lines = ["horizon\tmad\tfad"]
    for h in sorted(sweep):
        m, f = sweep[h]
        lines.append(f"{h}\t{m:.6f}\t{f:.6f}")
    (out / "horizon.tsv").write_text("\n".join(lines) + "\n")
    finish_outputs(out, "horizon", conf)
    print("\n".join(lines))
    return 0


def cmd_analyze_multimodal(args, conf) -> int:
    cfg_file = model_config_from(conf)
    data_dir = _require_dir(conf["data"]["dataset_dir"], "dataset")
    out = _out_dir(args)
    scenes = _raw_scene_windows(data_dir, cfg_file.t_obs, cfg_file.t_pred)
    names = sorted(scenes)
    fold_name = conf["data"]["fold"] or ("zara2" if "zara2" in scenes else names[-1])
    fold = _pick_fold(scenes, fold_name)

    train_canon = canonicalize_windows(
        [w for name in fold.train_scenes for w in scenes[name]])
    clusters = cluster_motion_types(train_canon, n_clusters=args.clusters,
                                    seed=_conf_int(conf, "train", "seed"))
    by_id = {w.window_id: w for w in train_canon}
    summary = [{
        "cluster_id": c.cluster_id,
        "size": len(c.member_ids),
        "medoid_id": c.medoid_id,
        "mean_speed": c.mean_speed,
        "mean_heading_spread": float(c.features[:, 1].mean()),
    } for c in clusters]
    (out / "clusters.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    emit_cluster_figures(clusters, by_id, out / "figures")

    if args.checkpoint:
        if len(args.checkpoint) != 1:
            raise ConfigError("analyze-multimodal takes at most one --checkpoint")
        forecaster, _ = ckpt_io.load_checkpoint(Path(args.checkpoint[0]))
        test_canon = canonicalize_windows(scenes[fold.test_scene])
        if not test_canon:
            raise DataError(f"scene {fold.test_scene!r} yields no windows")
        medoid_endpoints = [by_id[c.medoid_id].future[-1] for c in clusters]
        for cluster in clusters:
            probe, _ = nearest_to_medoid(test_canon, by_id[cluster.medoid_id])[0]
            entries = endpoint_sweep(forecaster, probe, medoid_endpoints)
            emit_sweep_figure(entries, probe, out / "figures", cluster_id=cluster.cluster_id)

    finish_outputs(out, "analyze-multimodal", conf)
    for row in summary:
        print(f"cluster {row['cluster_id']}: {row['size']} members, "
              f"speed {row['mean_speed']:.3f}, spread {row['mean_heading_spread']:.3f}")
    return 0


def cmd_report(args, conf) -> int:
    data_dir = _require_dir(conf["data"]["dataset_dir"], "metrics")
    out = _out_dir(args)
    cells = {}
    for path in sorted(data_dir.rglob("metrics*.json")):
        payload = json.loads(path.read_text())
        for row in payload.get("rows", []):
            if row.get("dataset") == "Avg" or "architecture" not in row:
                continue
            cells.setdefault((row["architecture"], row["head"]), []).append(
                (row["mad"], row["fad"]))
    if not cells:
        raise DataError(f"no metrics*.json rows with model tags under {data_dir}")

    heads = ["regressive", "gaussian", "quantized"]
    archs = ["lstm", "tf", "bert_ar", "bert_os"]
    archs = [a for a in archs if any(k[0] == a for k in cells)] or sorted({k[0] for k in cells})
    lines = ["model\t" + "\t".join(heads)]
    matrix = {}
    for arch in archs:
        row = [arch]
        for head in heads:
            entries = cells.get((arch, head))
            if entries:
                mad = float(np.mean([m for m, _ in entries]))
                fad = float(np.mean([f for _, f in entries]))
                matrix[f"{arch}/{head}"] = {"mad": mad, "fad": fad, "n_rows": len(entries)}
                row.append(f"{mad:.3f}/{fad:.3f}")
            else:
                row.append("-")
        lines.append("\t".join(row))
    table = "\n".join(lines) + "\n"
    (out / "matrix.tsv").write_text(table)
    payload = {"matrix": matrix, "scale": scale_report()}
    (out / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    finish_outputs(out, "report", conf)
    print(table, end="")
    return 0


# ---- argument parsing ----------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage problems exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajlab", description="Trajectory forecasting workbench")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--data", help="input directory (overrides [data] dataset_dir)")
        p.add_argument("--seed", type=int, help="training / sampling seed")
        p.add_argument("--fold", action="append",
                       help="test scene name; repeatable for multi-checkpoint eval")
        p.add_argument("--arch", choices=("lstm", "tf", "bert_ar", "bert_os"))
        p.add_argument("--head", choices=("regressive", "gaussian", "quantized"))
        p.add_argument("--repr", choices=("speeds", "relative_positions"))
        p.add_argument("--k", type=int, help="codebook size")
        p.add_argument("--n-samples", type=int, dest="n_samples")
        p.add_argument("--horizons", help="comma-separated decode horizons")
        p.add_argument("--oracle", action="store_true",
                       help="feed the true endpoint to a one-shot model")
        p.add_argument("--checkpoint", action="append", help="model checkpoint; repeatable")
        p.add_argument("--quiet", action="store_true", default=True)
        return p

    add("prepare", cmd_prepare, "parse raw scenes into window caches")
    add("fit-codebook", cmd_fit_codebook, "fit a motion codebook on training windows")
    add("train", cmd_train, "train one model on a fold")
    add("eval", cmd_eval, "deterministic MAD/FAD per fold plus average")
    add("best-of-n", cmd_best_of_n, "sampled best-of-N MAD/FAD per fold")
    add("horizon", cmd_horizon, "decode at growing horizons")
    mm = add("analyze-multimodal", cmd_analyze_multimodal,
             "cluster motion types and run endpoint sweeps")
    mm.add_argument("--clusters", type=int, default=6)
    add("report", cmd_report, "aggregate metrics files into the model matrix")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        conf = load_run_config(args.config)
        apply_overrides(conf, args)
        return args.func(args, conf)
    except ConfigError as exc:
        print(f"trajlab: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"trajlab: {exc}", file=sys.stderr)
        return 2
    except (TrajlabError, FloatingPointError) as exc:
        print(f"trajlab: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"trajlab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
