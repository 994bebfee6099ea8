"""Command-line front end: scene simulation, training, evaluation, RIR export.

Every flag has a config-file equivalent (flat JSON keyed by the flag name
with dashes replaced by underscores); explicit command-line values win.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import write_wav
from .errors import ConfigurationError, TrainingImpossibleError
from .loop import LoopConfig, LoopMode
from .metrics import evaluate, summarize_scores, write_scene_csv, write_summary_csv
from .rir import RoomSpec, generate_rir_pair, save_rir_csv, save_rir_wav
from .scenes import ExperimentSpec, loop_config_for, sample_scenes, simulate_scene
from .suppressor import MaskModel, SuppressorKind
from .training import train_recursive, write_loss_history_csv


class UsageError(Exception):
    pass


_DEFAULTS = {
    "mode": "no-ahs",
    "suppressor": "passthrough",
    "scenes": 5,
    "gain": None,
    "gain_range": (1.0, 3.0),
    "delay_range": (0.15, 0.25),
    "rt60_range": (0.0, 0.6),
    "duration": 3.0,
    "rir_length": 0.4,
    "speech": "synthetic",
    "seed": 0,
    "hd": "on",
    "jobs": 1,
    "out": "howlsim-out",
    "epochs": 20,
    "step_size": 1e-2,
    "grad_clip": 10.0,
    "init": "identity",
    "model": None,
    "gain_levels": (1.5, 2.0, 2.5, 3.0),
    "rt60": 0.3,
    "room": (5.0, 4.0, 3.0),
    "pairs": 1,
    "format": "wav",
}


def _add_common(parser):
    parser.add_argument("--config", help="flat JSON file with defaults for any flag")
    parser.add_argument("--mode", choices=[m.value for m in LoopMode])
    parser.add_argument("--suppressor", choices=[k.value for k in SuppressorKind])
    parser.add_argument("--scenes", type=int)
    parser.add_argument("--gain", type=float)
    parser.add_argument("--gain-range", type=float, nargs=2, metavar=("LO", "HI"))
    parser.add_argument("--delay-range", type=float, nargs=2, metavar=("LO", "HI"))
    parser.add_argument("--rt60-range", type=float, nargs=2, metavar=("LO", "HI"))
    parser.add_argument("--duration", type=float, help="utterance length in seconds")
    parser.add_argument("--rir-length", type=float, help="impulse-response budget in seconds")
    parser.add_argument("--speech", help="'synthetic', 'noise', or a WAV directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--hd", choices=["on", "off"], help="howling detection")
    parser.add_argument("--jobs", type=int, help="parallel scene workers")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--model", help="mask-model file (trained suppressor)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="howlsim",
        description="Closed-loop acoustic howling simulation and suppression laboratory",
    )
    parser.add_argument("--version", action="version", version=f"howlsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run closed-loop scenes and export signals")
    _add_common(sim)

    train = sub.add_parser("train", help="recursively train the mask model")
    _add_common(train)
    train.add_argument("--epochs", type=int)
    train.add_argument("--step-size", type=float)
    train.add_argument("--grad-clip", type=float)
    train.add_argument(
        "--init", choices=["identity", "random", "reference-passthrough"],
        help="initial parameters when --model is not given",
    )

    ev = sub.add_parser("eval", help="score a suppressor over per-gain scene sets")
    _add_common(ev)
    ev.add_argument("--gain-levels", type=float, nargs="+", metavar="G")

    rg = sub.add_parser("rir-gen", help="generate and export image-method responses")
    rg.add_argument("--config", help="flat JSON file with defaults for any flag")
    rg.add_argument("--rt60", type=float)
    rg.add_argument("--room", type=float, nargs=3, metavar=("LX", "LY", "LZ"))
    rg.add_argument("--pairs", type=int)
    rg.add_argument("--seed", type=int)
    rg.add_argument("--out", help="output directory")
    rg.add_argument("--rir-length", type=float)
    rg.add_argument("--format", choices=["wav", "csv", "both"])
    return parser


def _resolve(args) -> dict:
    """Merge CLI > config file > built-in defaults."""
    file_values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}")
        if not isinstance(file_values, dict):
            raise UsageError("config file must hold a flat JSON object")
    opts = {}
    for key, default in _DEFAULTS.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            opts[key] = cli_value
        elif key in file_values:
            opts[key] = file_values[key]
        else:
            opts[key] = default
    for key in ("gain_range", "delay_range", "rt60_range", "gain_levels", "room"):
        if opts.get(key) is not None:
            opts[key] = tuple(float(v) for v in opts[key])
    return opts


def _config_hash(opts: dict) -> str:
    semantic = {k: v for k, v in opts.items() if k not in ("out", "jobs")}
    blob = json.dumps(semantic, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _header(opts: dict) -> dict:
    return {
        "version": __version__,
        "seed": opts["seed"],
        "config_hash": _config_hash(opts),
    }


def _experiment_spec(opts: dict, **overrides) -> ExperimentSpec:
    spec = ExperimentSpec(
        mode=LoopMode(opts["mode"]),
        suppressor=SuppressorKind(opts["suppressor"]),
        scenes=int(opts["scenes"]),
        gain=opts["gain"],
        gain_range=opts["gain_range"],
        delay_range=opts["delay_range"],
        rt60_range=opts["rt60_range"],
        duration_s=float(opts["duration"]),
        rir_length_s=float(opts["rir_length"]),
        speech=opts["speech"],
        seed=int(opts["seed"]),
        hd=opts["hd"] == "on",
        jobs=int(opts["jobs"]),
    )
    for key, value in overrides.items():
        setattr(spec, key, value)
    return spec


def _load_model(opts) -> MaskModel | None:
    if opts.get("model"):
        return MaskModel.load(opts["model"])
    return None


def _simulate_one(payload):
    scene, spec, cfg_overrides, kind_value, model = payload
    kind = SuppressorKind(kind_value)
    cfg = loop_config_for(spec, scene, **cfg_overrides)
    return scene.index, simulate_scene(scene, cfg, suppressor=kind, model=model)


def _run_scene_batch(spec: ExperimentSpec, scenes, kind: SuppressorKind, model,
                     cfg_overrides=None):
    payloads = [(s, spec, cfg_overrides or {}, kind.value, model) for s in scenes]
    if spec.jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            indexed = list(pool.map(_simulate_one, payloads))
    else:
        indexed = [_simulate_one(p) for p in payloads]
    indexed.sort(key=lambda pair: pair[0])
    return [res for _, res in indexed]


def _validate_wiring(spec: ExperimentSpec, model) -> None:
    if spec.suppressor is SuppressorKind.TRAINED_MASK and model is None:
        raise UsageError("the trained suppressor needs --model FILE")
    if spec.mode is LoopMode.NO_AHS and spec.suppressor is not SuppressorKind.PASSTHROUGH:
        raise UsageError("mode no-ahs bypasses suppression; use --suppressor passthrough")
    if spec.suppressor is SuppressorKind.KALMAN_ONLY and spec.mode is not LoopMode.HYBRID:
        raise UsageError("the kalman-only suppressor requires --mode hybrid")


def cmd_simulate(opts: dict) -> int:
    spec = _experiment_spec(opts)
    if spec.scenes < 1:
        raise UsageError("need at least one scene")
    model = _load_model(opts)
    _validate_wiring(spec, model)
    scenes = sample_scenes(spec)
    results = _run_scene_batch(spec, scenes, spec.suppressor, model)
    report = evaluate(results)

    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    header = _header(opts)
    write_scene_csv(report, out / "report.csv", header)
    for scene, result in zip(scenes, results):
        scene_dir = out / f"scene_{scene.index:03d}"
        scene_dir.mkdir(exist_ok=True)
        write_wav(scene_dir / "estimated.wav", result.estimated)
        write_wav(scene_dir / "microphone.wav", result.microphone)
        write_wav(scene_dir / "loudspeaker.wav", result.loudspeaker)
        write_wav(scene_dir / "target.wav", result.target)
        meta = {
            "gain": result.gain,
            "delay_s": result.delay_s,
            "mode": result.mode.value,
            "suppressor": result.suppressor.value,
            "halted": result.halted,
            "halt_frame": result.halt.frame_index if result.halted else None,
            "halt_sample": result.halt.sample_index if result.halted else None,
            "halt_reason": result.halt.reason if result.halted else None,
            "seed": scene.seed,
            "rt60": scene.rt60,
            "frames_emitted": result.frames_emitted,
            **header,
        }
        with open(scene_dir / "meta.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
    print(
        f"simulated {len(results)} scenes: howling rate "
        f"{report.howling_rate:.2f}, mean SI-SDR {report.mean_sdr_db:.2f} dB"
    )
    print(f"report: {out / 'report.csv'}")
    return 0


def cmd_train(opts: dict) -> int:
    spec = _experiment_spec(opts)
    if spec.scenes < 1:
        raise UsageError("need at least one training scene")
    if spec.mode is LoopMode.NO_AHS:
        raise UsageError("training needs a suppression mode (nn-only, hybrid, teacher-forced)")
    spec.suppressor = SuppressorKind.TRAINED_MASK
    n_bins = LoopConfig().framing.n_bins

    start = _load_model(opts)
    if start is None:
        rng = np.random.default_rng(spec.seed)
        start = {
            "identity": lambda: MaskModel.identity(n_bins),
            "random": lambda: MaskModel.randomized(n_bins, rng),
            "reference-passthrough": lambda: MaskModel.reference_passthrough(n_bins),
        }[opts["init"]]()

    scenes = sample_scenes(spec)
    base_cfg = loop_config_for(spec, scenes[0])
    result = train_recursive(
        start, scenes, base_cfg,
        epochs=int(opts["epochs"]),
        step_size=float(opts["step_size"]),
        grad_clip=float(opts["grad_clip"]),
    )

    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    header = _header(opts)
    result.model.save(out / "model.csv", meta=header)
    write_loss_history_csv(result, out / "loss_history.csv", header)
    overflow_total = sum(h.overflow_halts for h in result.history)
    status = "converged" if result.converged else f"not converged ({result.message})"
    print(
        f"trained {len(result.history)} epochs on {spec.scenes} scenes: {status}; "
        f"overflow halts {overflow_total}"
    )
    print(f"model: {out / 'model.csv'}")
    return 0


def cmd_eval(opts: dict) -> int:
    spec = _experiment_spec(opts)
    if spec.scenes < 1:
        raise UsageError("need at least one scene")
    model = _load_model(opts)
    _validate_wiring(spec, model)

    all_scores = []
    reports = []
    for level in opts["gain_levels"]:
        level_spec = _experiment_spec(opts, gain=float(level))
        scenes = sample_scenes(level_spec)
        results = _run_scene_batch(level_spec, scenes, level_spec.suppressor, model)
        report = evaluate(results)
        all_scores.extend(report.scores)
        reports.append(report)

    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    header = _header(opts)
    method = spec.suppressor.value if spec.mode is not LoopMode.NO_AHS else "no-ahs"
    merged = summarize_scores(all_scores)
    write_scene_csv(merged, out / "report.csv", header)
    write_summary_csv([(method, merged)], out / "summary.csv", header)
    for gain in sorted(merged.per_gain):
        g = merged.per_gain[gain]
        print(
            f"G={gain:g}: SI-SDR {g.sdr_mean_db:+.2f} +- {g.sdr_std_db:.2f} dB, "
            f"howling rate {g.howling_rate:.2f} ({g.n_scenes} scenes, "
            f"{g.n_excluded} excluded)"
        )
    print(f"summary: {out / 'summary.csv'}")
    return 0


def cmd_rir_gen(opts: dict) -> int:
    if int(opts["pairs"]) < 1:
        raise UsageError("need at least one pair")
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(int(opts["seed"]))
    dims = np.asarray(opts["room"], dtype=float)
    rows = []
    for i in range(int(opts["pairs"])):
        margin = 0.5
        mic = rng.uniform(margin, dims - margin)
        near = rng.uniform(margin, dims - margin)
        loud = rng.uniform(margin, dims - margin)
        room = RoomSpec(
            dimensions=dims,
            rt60=float(opts["rt60"]),
            source_pos=loud,
            mic_pos=mic,
            sample_rate=16000.0,
            rir_length=int(round(float(opts["rir_length"]) * 16000.0)),
        )
        near_rir, loud_rir = generate_rir_pair(room, near, seed=int(opts["seed"]) + i)
        for tag, rir in (("near", near_rir), ("loud", loud_rir)):
            stem = out / f"pair_{i:03d}_{tag}"
            if opts["format"] in ("wav", "both"):
                save_rir_wav(rir, f"{stem}.wav")
            if opts["format"] in ("csv", "both"):
                save_rir_csv(rir, f"{stem}.csv")
        rows.append((i, near_rir.direct_path_delay, loud_rir.direct_path_delay))
    with open(out / "pairs.csv", "w", newline="") as fh:
        for key, value in sorted(_header(opts).items()):
            fh.write(f"# {key}={value}\n")
        fh.write("pair,near_direct_delay,loud_direct_delay\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    print(f"wrote {len(rows)} pairs to {out}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = _resolve(args)
        if args.command == "simulate":
            return cmd_simulate(opts)
        if args.command == "train":
            return cmd_train(opts)
        if args.command == "eval":
            return cmd_eval(opts)
        if args.command == "rir-gen":
            return cmd_rir_gen(opts)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, TrainingImpossibleError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
