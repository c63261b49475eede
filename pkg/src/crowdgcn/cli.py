"""Command-line surface: train, eval, predict, bench and export.

Every command resolves its configuration from defaults, an optional JSON
config file and command-line flags (flags win), writes the resolved config
next to its outputs so runs are reproducible, and exits non-zero without
partial silent output when anything fails.  Report paths write delimited
text plus rendered figures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import figures
from .data import COLUMN_ORDERS, WINDOW_PRESETS, load_scene, split_dataset, window_sequences
from .errors import CrowdGcnError, TrainingDiverged
from .evaluation import (
    benchmark_inference,
    cvm_predict,
    evaluate_baseline,
    evaluate_model,
    linear_predict,
    sample_trajectories,
)
from .graph import SIGN_MODES, build_graph_sequence
from .model import predict_deterministic, predict_probabilistic, relative_to_absolute
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

SPLIT_PARTS = ("train", "val", "test", "all")

PREDICTION_HEADER = ["scene_id", "ped_id", "step", "sample_id", "x", "y",
                     "mu_x", "mu_y", "sigma_x", "sigma_y", "rho"]


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CrowdGcnError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="crowdgcn",
        description="Attention-weighted graph-convolutional pedestrian trajectory forecasting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write checkpoints/logs")
    _add_common(p_train)
    _add_data_options(p_train)
    p_train.add_argument("--mode", choices=("probabilistic", "deterministic"))
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--batch-size", type=int)
    p_train.add_argument("--optimizer", choices=("sgd", "adam"))
    p_train.add_argument("--learning-rate", type=float)
    p_train.add_argument("--lr-decay", type=float, help="per-epoch learning-rate factor (default 1.0)")
    p_train.add_argument("--alpha", type=float, help="CDE mix between average and final error")
    p_train.add_argument("--f-hidden", type=int)
    p_train.add_argument("--k-residual", type=int)
    p_train.add_argument("--resume", help="checkpoint to continue from")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint and baselines")
    _add_common(p_eval)
    _add_data_options(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--eval-mode", choices=("deterministic", "most_likely", "best_of_n"))
    p_eval.add_argument("--bon-n", type=int)
    p_eval.add_argument("--split-part", choices=SPLIT_PARTS)
    p_eval.add_argument("--no-baselines", action="store_true")
    p_eval.set_defaults(func=cmd_eval)

    p_pred = sub.add_parser("predict", help="write predicted trajectories as CSV")
    _add_common(p_pred)
    _add_data_options(p_pred)
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--samples", type=int, help="sampled trajectories per pedestrian")
    p_pred.add_argument("--split-part", choices=SPLIT_PARTS)
    p_pred.add_argument("--limit", type=int, help="max windows to predict")
    p_pred.add_argument("--figure-limit", type=int, help="max windows rendered as figures")
    p_pred.set_defaults(func=cmd_predict)

    p_bench = sub.add_parser("bench", help="measure inference latency and model size")
    _add_common(p_bench)
    _add_data_options(p_bench)
    p_bench.add_argument("--checkpoint", action="append", required=True,
                         help="repeatable; one report entry per checkpoint")
    p_bench.add_argument("--samples", type=int, help="draws per window in probabilistic timing")
    p_bench.add_argument("--repetitions", type=int)
    p_bench.add_argument("--limit", type=int, help="max windows to benchmark")
    p_bench.set_defaults(func=cmd_bench)

    p_export = sub.add_parser("export", help="dump windowed sequences as CSV for plotting")
    _add_common(p_export)
    _add_data_options(p_export)
    p_export.add_argument("--split-part", choices=SPLIT_PARTS)
    p_export.set_defaults(func=cmd_export)

    return parser


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")


def _add_data_options(p):
    p.add_argument("--data", action="append", help="trajectory file (repeatable)")
    p.add_argument("--column-order", choices=sorted(COLUMN_ORDERS))
    p.add_argument("--window-preset", choices=sorted(WINDOW_PRESETS),
                   help="named (t_obs, t_pred) pair; explicit --t-obs/--t-pred win")
    p.add_argument("--t-obs", type=int)
    p.add_argument("--t-pred", type=int)
    p.add_argument("--window-stride", type=int)
    p.add_argument("--sign-mode", choices=SIGN_MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", help="train,val,test ratios, e.g. 0.6,0.2,0.2")


DATA_DEFAULTS = {
    "data": None,
    "column_order": "frame_ped_xy",
    "window_preset": None,
    "t_obs": 8,
    "t_pred": 12,
    "window_stride": 1,
    "sign_mode": "negated",
    "seed": 0,
    "split": "0.6,0.2,0.2",
}


def _resolve(args, defaults):
    """defaults <- config file <- explicit flags."""
    resolved = dict(defaults)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            file_cfg = json.load(f)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValueError(f"config file keys not recognized: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            resolved[key] = value
    # a named preset sets the window geometry; explicit --t-obs/--t-pred win
    if resolved.get("window_preset"):
        preset_obs, preset_pred = WINDOW_PRESETS[resolved["window_preset"]]
        if getattr(args, "t_obs", None) is None:
            resolved["t_obs"] = preset_obs
        if getattr(args, "t_pred", None) is None:
            resolved["t_pred"] = preset_pred
    if not resolved.get("data"):
        raise ValueError("no input data: pass --data or put \"data\" in the config file")
    return resolved


def _parse_ratios(text):
    parts = [float(x) for x in str(text).split(",")]
    if len(parts) != 3:
        raise ValueError(f"--split needs three comma-separated ratios, got {text!r}")
    return tuple(parts)


def _load_samples(cfg):
    samples = []
    for path in cfg["data"]:
        scene = load_scene(path, column_order=cfg["column_order"])
        samples.extend(window_sequences(scene, t_obs=cfg["t_obs"], t_pred=cfg["t_pred"],
                                        stride=cfg["window_stride"]))
    if not samples:
        raise ValueError("input data produced no usable windows "
                         f"(t_obs={cfg['t_obs']}, t_pred={cfg['t_pred']})")
    return samples


def _pick_split(samples, cfg, part):
    train_set, val_set, test_set = split_dataset(samples, _parse_ratios(cfg["split"]),
                                                 seed=cfg["seed"])
    return {"train": train_set, "val": val_set, "test": test_set, "all": samples}[part]


def _prepare_out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config_record(out, name, resolved):
    with open(out / name, "w", encoding="utf-8") as f:
        json.dump(resolved, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------

def cmd_train(args):
    defaults = dict(DATA_DEFAULTS)
    defaults.update({
        "mode": "probabilistic", "epochs": 150, "batch_size": 128,
        "optimizer": None, "learning_rate": None, "lr_decay": 1.0, "alpha": 0.5,
        "f_hidden": 42, "k_residual": 4, "resume": None,
    })
    cfg = _resolve(args, defaults)
    out = _prepare_out(args)

    config = TrainConfig(
        mode=cfg["mode"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        optimizer=cfg["optimizer"], learning_rate=cfg["learning_rate"],
        lr_decay=cfg["lr_decay"], alpha=cfg["alpha"],
        seed=cfg["seed"], t_obs=cfg["t_obs"], t_pred=cfg["t_pred"],
        f_hidden=cfg["f_hidden"], k_residual=cfg["k_residual"], sign_mode=cfg["sign_mode"],
    )
    cfg["optimizer"], cfg["learning_rate"] = config.optimizer, config.learning_rate
    _write_config_record(out, "train_config.json", cfg)

    samples = _load_samples(cfg)
    train_set, val_set, _ = split_dataset(samples, _parse_ratios(cfg["split"]), seed=cfg["seed"])
    if not train_set:
        raise ValueError("training split is empty; adjust --split or provide more data")
    print(f"training on {len(train_set)} windows "
          f"({len(val_set)} validation) in {cfg['mode']} mode for {cfg['epochs']} epochs")

    resume_state = {}
    if cfg["resume"]:
        params, opt_state, _, rng_state, epoch = load_checkpoint(cfg["resume"])
        resume_state = dict(params=params, optimizer_state=opt_state,
                            rng_state=rng_state, start_epoch=epoch)
        print(f"resuming from {cfg['resume']} at epoch {epoch}")

    log_path = out / "train_log.jsonl"
    diverged = None
    with open(log_path, "w", encoding="utf-8") as log_file:
        def progress(record):
            log_file.write(json.dumps(record) + "\n")
            log_file.flush()
            if record["epoch"] % 10 == 0 or record["epoch"] == 1:
                val = f"  val ADE {record['val_ade']:.3f}" if "val_ade" in record else ""
                print(f"epoch {record['epoch']:4d}  loss {record['train_loss']:.5f}{val}")

        try:
            result = train(train_set, config, val_samples=val_set or None,
                           progress=progress, **resume_state)
        except TrainingDiverged as exc:
            diverged = exc

    if diverged is not None:
        ckpt = out / "checkpoint_last_good.ckpt"
        save_checkpoint(ckpt, diverged.params, diverged.optimizer_state, config,
                        np.random.default_rng(config.seed).bit_generator.state,
                        epoch=diverged.epoch)
        print(f"error: {diverged}; last good state written to {ckpt}", file=sys.stderr)
        return 1

    ckpt = out / "checkpoint.ckpt"
    save_checkpoint(ckpt, result.params, result.optimizer_state, config,
                    result.rng_state, epoch=result.epoch)
    if not args.no_figures and result.log:
        figures.save_loss_curve(out / "loss_curve.png", result.log,
                                title=f"{cfg['mode']} training")
    print(f"wrote {ckpt}")
    return 0


def cmd_eval(args):
    defaults = dict(DATA_DEFAULTS)
    defaults.update({"checkpoint": None, "eval_mode": None, "bon_n": 20,
                     "split_part": "test", "no_baselines": False})
    params, cfg = _load_checkpoint_with_defaults(args, defaults)
    out = _prepare_out(args)
    if cfg["eval_mode"] is None:
        cfg["eval_mode"] = "deterministic" if params.mode == "deterministic" else "best_of_n"
    _check_eval_mode_compatible(cfg["eval_mode"], params.mode)
    _write_config_record(out, "eval_config.json", cfg)

    samples = _pick_split(_load_samples(cfg), cfg, cfg["split_part"])
    if not samples:
        raise ValueError(f"split part {cfg['split_part']!r} contains no windows")

    reports = {}
    label = cfg["eval_mode"] if cfg["eval_mode"] != "best_of_n" else f"best_of_{cfg['bon_n']}"
    reports[label] = evaluate_model(
        params, samples, mode=cfg["eval_mode"], bon_n=cfg["bon_n"],
        rng=np.random.default_rng(cfg["seed"]), sign_mode=cfg["sign_mode"])
    if not cfg["no_baselines"]:
        reports["cvm"] = evaluate_baseline(cvm_predict, samples)
        reports["linear"] = evaluate_baseline(linear_predict, samples)

    report_path = out / "metrics.csv"
    with open(report_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=["model", "scene", "mode", "ade", "fde", "n_samples"])
        writer.writeheader()
        for name, report in reports.items():
            for row in report.rows():
                writer.writerow({"model": name, **row})
    if not args.no_figures:
        figures.save_metrics_figure(out / "metrics.png", reports,
                                    title=f"{cfg['split_part']} split")
    headline = reports[label]
    print(f"{label}: ADE {headline.ade:.4f} m  FDE {headline.fde:.4f} m "
          f"({headline.n_samples_used} windows)")
    print(f"wrote {report_path}")
    return 0


def cmd_predict(args):
    defaults = dict(DATA_DEFAULTS)
    defaults.update({"checkpoint": None, "samples": 20, "split_part": "test",
                     "limit": None, "figure_limit": 4})
    params, cfg = _load_checkpoint_with_defaults(args, defaults)
    out = _prepare_out(args)
    _write_config_record(out, "predict_config.json", cfg)

    chosen = _pick_split(_load_samples(cfg), cfg, cfg["split_part"])
    if cfg["limit"] is not None:
        chosen = chosen[: cfg["limit"]]
    if not chosen:
        raise ValueError(f"split part {cfg['split_part']!r} contains no windows")

    rng = np.random.default_rng(cfg["seed"])
    rows = []
    rendered = 0
    fig_dir = out / "figures"
    for window_id, sample in enumerate(chosen):
        graph = build_graph_sequence(sample, cfg["sign_mode"])
        origin = sample.abs_obs[:, -1, :]
        if params.mode == "probabilistic":
            field = predict_probabilistic(graph, params)
            mu, sigma, rho = field.arrays()
            draws = sample_trajectories(field, origin, cfg["samples"], rng)
            for ped_idx, ped in enumerate(sample.ped_ids):
                for s in range(cfg["samples"]):
                    for step in range(sample.t_pred):
                        rows.append([sample.scene_id, ped, step + 1, s,
                                     draws[s, ped_idx, step, 0], draws[s, ped_idx, step, 1],
                                     mu[ped_idx, step, 0], mu[ped_idx, step, 1],
                                     sigma[ped_idx, step, 0], sigma[ped_idx, step, 1],
                                     rho[ped_idx, step]])
            if not args.no_figures and rendered < cfg["figure_limit"]:
                fig_dir.mkdir(exist_ok=True)
                pred_abs = relative_to_absolute(mu, origin)
                figures.save_prediction_figure(
                    fig_dir / f"window_{window_id:04d}.png", sample,
                    pred_abs=pred_abs, sampled_abs=draws, field=(mu, sigma, rho),
                    title=f"{sample.scene_id} @ frame {sample.start_frame}")
                rendered += 1
        else:
            disp = predict_deterministic(graph, params).data
            pred_abs = relative_to_absolute(disp, origin)
            for ped_idx, ped in enumerate(sample.ped_ids):
                for step in range(sample.t_pred):
                    rows.append([sample.scene_id, ped, step + 1, 0,
                                 pred_abs[ped_idx, step, 0], pred_abs[ped_idx, step, 1],
                                 pred_abs[ped_idx, step, 0], pred_abs[ped_idx, step, 1],
                                 "", "", ""])
            if not args.no_figures and rendered < cfg["figure_limit"]:
                fig_dir.mkdir(exist_ok=True)
                figures.save_prediction_figure(
                    fig_dir / f"window_{window_id:04d}.png", sample, pred_abs=pred_abs,
                    title=f"{sample.scene_id} @ frame {sample.start_frame}")
                rendered += 1

    csv_path = out / "predictions.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(PREDICTION_HEADER)
        writer.writerows(rows)
    print(f"wrote {csv_path} ({len(rows)} rows, {len(chosen)} windows)")
    return 0


def cmd_bench(args):
    defaults = dict(DATA_DEFAULTS)
    defaults.update({"checkpoint": None, "samples": 20, "repetitions": 50, "limit": 32})
    cfg = _resolve(args, {**defaults, "checkpoint": args.checkpoint})
    first_config = load_checkpoint(cfg["checkpoint"][0])[2]
    for key in ("t_obs", "t_pred", "sign_mode"):
        if getattr(args, key, None) is None:
            cfg[key] = getattr(first_config, key)
    out = _prepare_out(args)
    _write_config_record(out, "bench_config.json", cfg)

    samples = _load_samples(cfg)[: cfg["limit"]]
    reports = {}
    for path in cfg["checkpoint"]:
        params, _, _, _, _ = load_checkpoint(path)
        if params.t_obs != cfg["t_obs"] or params.t_pred != cfg["t_pred"]:
            raise ValueError(
                f"{path}: checkpoint expects t_obs={params.t_obs}, t_pred={params.t_pred}; "
                f"benchmark requested {cfg['t_obs']}/{cfg['t_pred']}")
        label = f"{Path(path).stem}:{params.mode}"
        reports[label] = benchmark_inference(
            params, samples, n_samples=cfg["samples"], repetitions=cfg["repetitions"],
            sign_mode=cfg["sign_mode"])

    report_path = out / "bench.json"
    with open(report_path, "w", encoding="utf-8") as f:
        json.dump({k: r.as_dict() for k, r in reports.items()}, f, indent=2, sort_keys=True)
        f.write("\n")
    if not args.no_figures:
        figures.save_bench_figure(out / "bench.png", reports)
    for label, r in reports.items():
        print(f"{label}: forward {r.forward_ms:.3f} ms/window "
              f"(+ graph build {r.graph_build_ms:.3f} ms), {r.param_count} params")
    print(f"wrote {report_path}")
    return 0


def cmd_export(args):
    defaults = dict(DATA_DEFAULTS)
    defaults.update({"split_part": "all"})
    cfg = _resolve(args, defaults)
    out = _prepare_out(args)
    _write_config_record(out, "export_config.json", cfg)

    samples = _pick_split(_load_samples(cfg), cfg, cfg["split_part"])
    csv_path = out / "sequences.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["scene_id", "window_id", "start_frame", "ped_id", "step",
                         "phase", "x", "y", "rel_x", "rel_y"])
        for window_id, sample in enumerate(samples):
            for ped_idx, ped in enumerate(sample.ped_ids):
                for step in range(sample.t_obs):
                    writer.writerow([sample.scene_id, window_id, sample.start_frame, ped,
                                     step + 1, "obs",
                                     sample.abs_obs[ped_idx, step, 0],
                                     sample.abs_obs[ped_idx, step, 1],
                                     sample.rel_obs[ped_idx, step, 0],
                                     sample.rel_obs[ped_idx, step, 1]])
                for step in range(sample.t_pred):
                    writer.writerow([sample.scene_id, window_id, sample.start_frame, ped,
                                     step + 1, "fut",
                                     sample.abs_fut[ped_idx, step, 0],
                                     sample.abs_fut[ped_idx, step, 1],
                                     sample.rel_fut[ped_idx, step, 0],
                                     sample.rel_fut[ped_idx, step, 1]])
    if not args.no_figures:
        figures.save_scene_figure(out / "scenes.png", samples,
                                  title=f"{cfg['split_part']} windows")
    print(f"wrote {csv_path} ({len(samples)} windows)")
    return 0


# ---------------------------------------------------------------------------

def _load_checkpoint_with_defaults(args, defaults):
    """Resolve config, letting the checkpoint supply window geometry defaults."""
    cfg = _resolve(args, {**defaults, "checkpoint": args.checkpoint})
    params, _, ckpt_config, _, _ = load_checkpoint(cfg["checkpoint"])
    for key in ("t_obs", "t_pred", "sign_mode", "seed"):
        if getattr(args, key, None) is None:
            cfg[key] = getattr(ckpt_config, key)
    if params.t_obs != cfg["t_obs"] or params.t_pred != cfg["t_pred"]:
        raise ValueError(
            f"checkpoint expects t_obs={params.t_obs}, t_pred={params.t_pred}; "
            f"got {cfg['t_obs']}/{cfg['t_pred']}")
    return params, cfg


def _check_eval_mode_compatible(eval_mode, model_mode):
    if eval_mode == "deterministic" and model_mode != "deterministic":
        raise ValueError("eval mode 'deterministic' needs a deterministic checkpoint")
    if eval_mode in ("most_likely", "best_of_n") and model_mode != "probabilistic":
        raise ValueError(f"eval mode {eval_mode!r} needs a probabilistic checkpoint")


if __name__ == "__main__":
    sys.exit(main())
