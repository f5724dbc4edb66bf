"""Command-line entry point.

Subcommands: synth, preprocess, train-gns, train-unet, rollout, eval, ablate.
Every run writes a manifest (command, config hash, seed, input digests, output
files, wall time) into its output directory. Exit codes: 2 missing inputs,
3 config schema violation, 1 other errors.

``POREFLOW_THREADS`` caps worker parallelism (numba threads and the
per-trajectory smoothing pool); ``POREFLOW_BACKEND`` picks the kernel backend.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import config_hash, default_config, load_config, scenario_config_from
from .coupling import ReconstructionConfig
from .errors import ConfigError, PoreflowError
from .evaluation import evaluate_rollout, jump_window_frames, mean_dice_over
from .gns import GnsModel
from .grids import (OccupancyField, Trajectory, read_trajectories, read_vgrid,
                    write_trajectories, write_vgrid)
from .preprocess import KalmanConfig, kalman_rts_smooth, resample_sequence
from .rollout import RolloutConfig, initial_state_from_sequence, rollout
from .synthdata import generate_sequence
from .training import SequenceDataset, train_gns, train_unet
from .unet import UNetModel

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_INPUT = 2
EXIT_BAD_CONFIG = 3


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _worker_count() -> int:
    env = os.environ.get("POREFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _write_manifest(outdir, command, cfg, seed, inputs, outputs, t0) -> None:
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": [os.path.relpath(p, outdir) for p in outputs],
        "wall_time_s": round(time.time() - t0, 3),
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _require(path, what) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing {what}: {path}")
    return path


def _load_dataset(datadir) -> SequenceDataset:
    _require(datadir, "dataset directory")
    return SequenceDataset.load(datadir)


def _rollout_config(cfg) -> RolloutConfig:
    r = cfg["rollout"]
    return RolloutConfig(
        radius=cfg["gns"]["radius"],
        max_neighbors=cfg["gns"]["max_neighbors"],
        pool_factor=r["pool_factor"],
        reconstruction=ReconstructionConfig(r["boundary_ratio"], r["dilation_radius"]),
        n_in=cfg["unet"]["n_in"],
    )


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth(args, cfg) -> int:
    t0 = time.time()
    seq = generate_sequence(scenario_config_from(cfg))
    os.makedirs(args.out, exist_ok=True)
    written = seq.save(args.out)
    _write_manifest(args.out, "synth", cfg, cfg["seed"], [], written, t0)
    print(f"synth: {len(seq.occupancy)} frames, {len(seq.trajectories)} tracers -> {args.out}")
    return EXIT_OK


def cmd_preprocess(args, cfg) -> int:
    t0 = time.time()
    tracks_path = _require(os.path.join(args.data, "tracks.csv"), "tracks.csv")
    tracks = read_trajectories(tracks_path)
    kcfg = KalmanConfig(cfg["preprocess"]["dt"], cfg["preprocess"]["q_jerk"],
                        cfg["preprocess"]["r_meas"])
    workers = _worker_count()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        smoothed = list(pool.map(lambda tr: kalman_rts_smooth(tr, kcfg), tracks))
    os.makedirs(args.out, exist_ok=True)
    out_tracks = os.path.join(args.out, "tracks.csv")
    write_trajectories(out_tracks, smoothed)
    outputs = [out_tracks]
    inputs = [tracks_path]

    factor = cfg["preprocess"]["resample_factor"]
    occ_paths = []
    t = 0
    while True:
        p = os.path.join(args.data, f"occ_{t:04d}.vgrid")
        if not os.path.exists(p):
            break
        occ_paths.append(p)
        t += 1
    if factor >= 2 and occ_paths:
        frames = [OccupancyField(read_vgrid(p)) for p in occ_paths]
        inputs.extend(occ_paths)
        resampled = resample_sequence(frames, factor)
        for i, occ in enumerate(resampled):
            p = os.path.join(args.out, f"occ_{i:04d}.vgrid")
            write_vgrid(p, occ.grid)
            outputs.append(p)
    _write_manifest(args.out, "preprocess", cfg, cfg["seed"], inputs, outputs, t0)
    print(f"preprocess: smoothed {len(smoothed)} tracks -> {args.out}")
    return EXIT_OK


def _train_command(args, cfg, kind) -> int:
    t0 = time.time()
    ds = _load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, f"{kind}_losses.jsonl")
    ckpt_path = os.path.join(args.out, f"{kind}.ckpt")
    with open(log_path, "w") as logf:
        def log_fn(rec):
            logf.write(json.dumps(rec, sort_keys=True) + "\n")

        if kind == "gns":
            tcfg = dict(cfg["gns"])
            tcfg["no_geometry"] = args.ablation == "no-geometry"
            model, _ = train_gns(ds, tcfg, cfg["seed"], log_fn)
        else:
            tcfg = dict(cfg["unet"])
            tcfg["no_velocity"] = args.ablation == "no-velocity"
            model, _ = train_unet(ds, tcfg, cfg["rollout"], cfg["seed"], log_fn)
    model.save(ckpt_path)
    inputs = [os.path.join(args.data, "tracks.csv"), os.path.join(args.data, "geometry.vgrid")]
    _write_manifest(args.out, f"train-{kind}", cfg, cfg["seed"], inputs,
                    [ckpt_path, log_path], t0)
    print(f"train-{kind}: checkpoint -> {ckpt_path}")
    return EXIT_OK


def cmd_train_gns(args, cfg) -> int:
    if args.ablation not in (None, "none", "no-geometry"):
        raise ConfigError(f"train-gns supports --ablation no-geometry, got {args.ablation}")
    return _train_command(args, cfg, "gns")


def cmd_train_unet(args, cfg) -> int:
    if args.ablation not in (None, "none", "no-velocity"):
        raise ConfigError(f"train-unet supports --ablation no-velocity, got {args.ablation}")
    return _train_command(args, cfg, "unet")


def _run_rollout(ds, gns_model, unet_model, cfg, n_steps, start_frame=None):
    if start_frame is None:
        start_frame = ds.n_train - 1
    state = initial_state_from_sequence(ds, start_frame)
    frames, final_state = rollout(state, gns_model, unet_model, n_steps, _rollout_config(cfg))
    return start_frame, frames, final_state


def _write_rollout(outdir, ds, start_frame, frames) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    outputs = []
    n = frames[0].positions.shape[0]
    frame_ids = np.array([start_frame + f.step for f in frames], dtype=np.int64)
    tracks = []
    for i in range(n):
        pos = np.stack([f.positions[i] for f in frames])
        vel = np.stack([f.velocities[i] for f in frames])
        tracks.append(Trajectory(i, frame_ids.copy(), pos, vel))
    p = os.path.join(outdir, "pred_tracks.csv")
    write_trajectories(p, tracks)
    outputs.append(p)
    for f in frames:
        p = os.path.join(outdir, f"occ_pred_{start_frame + f.step:04d}.vgrid")
        write_vgrid(p, f.occupancy.grid)
        outputs.append(p)
    return outputs


def cmd_rollout(args, cfg) -> int:
    t0 = time.time()
    ds = _load_dataset(args.data)
    gns_path = _require(args.gns, "gns checkpoint")
    unet_path = _require(args.unet, "unet checkpoint")
    gns_model = GnsModel.load(gns_path)
    unet_model = UNetModel.load(unet_path)
    n_steps = args.steps or cfg["rollout"]["steps"]
    start_frame, frames, _ = _run_rollout(ds, gns_model, unet_model, cfg, n_steps,
                                          args.start_frame)
    outputs = _write_rollout(args.out, ds, start_frame, frames)
    run_info = {
        "seed": cfg["seed"],
        "config_hash": config_hash(cfg),
        "checkpoints": {"gns": _sha256(gns_path), "unet": _sha256(unet_path)},
        "n_steps": n_steps,
        "start_frame": start_frame,
    }
    p = os.path.join(args.out, "run.json")
    with open(p, "w") as fh:
        json.dump(run_info, fh, indent=2, sort_keys=True)
    outputs.append(p)
    _write_manifest(args.out, "rollout", cfg, cfg["seed"],
                    [gns_path, unet_path], outputs, t0)
    print(f"rollout: {n_steps} steps from frame {start_frame} -> {args.out}")
    return EXIT_OK


def _load_rollout_dir(rundir, ds):
    run_info = json.loads(open(_require(os.path.join(rundir, "run.json"), "run.json")).read())
    start_frame = run_info["start_frame"]
    tracks = read_trajectories(_require(os.path.join(rundir, "pred_tracks.csv"),
                                        "pred_tracks.csv"))
    k = len(tracks[0].frames)
    pos = np.stack([tr.positions for tr in tracks], axis=1)
    vel = np.stack([tr.velocities for tr in tracks], axis=1)
    occ = []
    for step in range(1, k + 1):
        p = os.path.join(rundir, f"occ_pred_{start_frame + step:04d}.vgrid")
        if not os.path.exists(p):
            break
        occ.append(OccupancyField(read_vgrid(p)))
    return run_info, start_frame, pos[:len(occ)], vel[:len(occ)], occ


def cmd_eval(args, cfg) -> int:
    t0 = time.time()
    ds = _load_dataset(args.data)
    run_info, start_frame, pos, vel, occ = _load_rollout_dir(args.run, ds)
    r = cfg["rollout"]
    report = evaluate_rollout(ds, pos, vel, occ, start_frame,
                              ReconstructionConfig(r["boundary_ratio"], r["dilation_radius"]),
                              interface_pool=r["pool_factor"])
    report["config_hash"] = config_hash(cfg)
    report["run"] = run_info
    if ds.jump_frames:
        last = start_frame + report["aggregate"]["frames_evaluated"]
        window = jump_window_frames(ds.jump_frames, start_frame, last, cfg["eval"]["jump_halo"])
        if window:
            report["jump_window"] = {"frames": window,
                                     "dice": mean_dice_over(report, window)}
    os.makedirs(args.out, exist_ok=True)
    p = os.path.join(args.out, "metrics.json")
    with open(p, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    _write_manifest(args.out, "eval", cfg, cfg["seed"],
                    [os.path.join(args.run, "run.json")], [p], t0)
    print(f"eval: dice={report['aggregate']['dice']:.4f} "
          f"r2={report['aggregate']['trajectory_r2']:.4f} -> {p}")
    return EXIT_OK


def cmd_ablate(args, cfg) -> int:
    """Train the ablated variants, roll out alongside the full models, and
    report the pairwise orderings the ablation study asserts."""
    t0 = time.time()
    ds = _load_dataset(args.data)
    gns_full = GnsModel.load(_require(args.gns, "gns checkpoint"))
    unet_full = UNetModel.load(_require(args.unet, "unet checkpoint"))
    os.makedirs(args.out, exist_ok=True)
    n_steps = args.steps or cfg["rollout"]["steps"]
    recon = ReconstructionConfig(cfg["rollout"]["boundary_ratio"],
                                 cfg["rollout"]["dilation_radius"])

    def run_and_eval(gm, um):
        start, frames, _ = _run_rollout(ds, gm, um, cfg, n_steps)
        pos = np.stack([f.positions for f in frames])
        vel = np.stack([f.velocities for f in frames])
        occ = [f.occupancy for f in frames]
        rep = evaluate_rollout(ds, pos, vel, occ, start, recon,
                               interface_pool=cfg["rollout"]["pool_factor"])
        last = start + rep["aggregate"]["frames_evaluated"]
        window = jump_window_frames(ds.jump_frames, start, last, cfg["eval"]["jump_halo"])
        out = dict(rep["aggregate"])
        out["jump_window_frames"] = window
        out["jump_window_dice"] = mean_dice_over(rep, window) if window else None
        return out

    report = {"config_hash": config_hash(cfg), "variants": {}}
    report["variants"]["full"] = run_and_eval(gns_full, unet_full)

    variants = cfg["ablate"]["variants"]
    if "no-geometry" in variants:
        tcfg = dict(cfg["gns"])
        tcfg["no_geometry"] = True
        gns_ng, _ = train_gns(ds, tcfg, cfg["seed"])
        report["variants"]["no-geometry"] = run_and_eval(gns_ng, unet_full)
    if "no-velocity" in variants:
        tcfg = dict(cfg["unet"])
        tcfg["no_velocity"] = True
        unet_nv, _ = train_unet(ds, tcfg, cfg["rollout"], cfg["seed"])
        report["variants"]["no-velocity"] = run_and_eval(gns_full, unet_nv)

    full = report["variants"]["full"]
    orderings = {}
    if "no-velocity" in report["variants"]:
        nv = report["variants"]["no-velocity"]
        orderings["velocity_improves_jump_dice"] = (
            nv["jump_window_dice"] is not None
            and full["jump_window_dice"] > nv["jump_window_dice"])
    if "no-geometry" in report["variants"]:
        ng = report["variants"]["no-geometry"]
        orderings["geometry_reduces_escapes"] = (
            1.0 - full["in_pore_fraction"]) < (1.0 - ng["in_pore_fraction"])
    report["orderings"] = orderings

    p = os.path.join(args.out, "ablate_report.json")
    with open(p, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    _write_manifest(args.out, "ablate", cfg, cfg["seed"], [args.gns, args.unet], [p], t0)
    print(f"ablate: orderings={orderings} -> {p}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="poreflow",
                                 description="Pore-scale flow surrogate toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override config seed")
        if data:
            p.add_argument("--data", required=True, help="dataset directory")

    p = sub.add_parser("synth", help="generate a synthetic drainage dataset")
    common(p, data=False)
    p = sub.add_parser("preprocess", help="smooth tracks; optionally resample interfaces")
    common(p)
    p = sub.add_parser("train-gns", help="train the particle velocity network")
    common(p)
    p.add_argument("--ablation", choices=["none", "no-geometry"], default=None)
    p = sub.add_parser("train-unet", help="train the interface network")
    common(p)
    p.add_argument("--ablation", choices=["none", "no-velocity"], default=None)
    p = sub.add_parser("rollout", help="autoregressive coupled rollout")
    common(p)
    p.add_argument("--gns", required=True, help="gns checkpoint")
    p.add_argument("--unet", required=True, help="unet checkpoint")
    p.add_argument("--steps", type=int, help="number of rollout steps")
    p.add_argument("--start-frame", type=int, dest="start_frame",
                   help="history frame to start from (default: train/test boundary)")
    p = sub.add_parser("eval", help="score a rollout against ground truth")
    common(p)
    p.add_argument("--run", required=True, help="rollout output directory")
    p = sub.add_parser("ablate", help="train + evaluate ablation variants")
    common(p)
    p.add_argument("--gns", required=True, help="full gns checkpoint")
    p.add_argument("--unet", required=True, help="full unet checkpoint")
    p.add_argument("--steps", type=int, help="number of rollout steps")
    return ap


_COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train-gns": cmd_train_gns,
    "train-unet": cmd_train_unet,
    "rollout": cmd_rollout,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.seed is not None:
            cfg["seed"] = args.seed
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except PoreflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
