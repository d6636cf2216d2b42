"""Command-line front end: ``seldkit {simulate-rirs,synth,features,eval}``.

The pipeline configuration is a JSON file; every key is optional::

    {
      "roles": {"train": [3, 4, 5, 6], "val": [2], "test": [1]},
      "split_rooms": {"1": ["1"]},
      "scenes_per_split": 10,
      "duration": 60.0,
      "polyphony": [1, 2],
      "snr_range": [6, 30],
      "seed": 0,
      "output_root": "seld_out",
      "formats": ["foa", "mic"],
      "wav_dtype": "float32",
      "rooms": {"1": {"rt60": 0.4, "drr_db": 6.0}},
      "trajectory_elevations": [-20, 0, 20],
      "rir_len": 4096,
      "events_per_class": 4,
      "noise_segments": 2
    }

``SELDKIT_OUTPUT_ROOT`` overrides ``output_root``. Exit codes: 0 ok,
1 user error, 2 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .array_models import FORMATS, TetraArraySpec
from .features import FeatureStats, extract_features
from .labels import max_polyphony, read_label_file, write_label_file
from .metrics import SeldCounts, seld_counts
from .rir_toolkit import FS, RoomSpec, circle_track, simulate_trajectory_rirs
from .scene_synth import (
    SceneSpec,
    make_event_bank,
    make_noise_bank,
    plan_scene,
    synthesize_scene,
)

log = logging.getLogger("seldkit")

ROLES = ("train", "val", "test")
DEFAULT_ROLES = {"train": [3, 4, 5, 6], "val": [2], "test": [1]}
OUTPUT_ENV = "SELDKIT_OUTPUT_ROOT"
STEM_RE = re.compile(r"^fold(?P<split>\d+)_room(?P<room>[^_]+)_mix(?P<mix>\d{3})$")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    splits: dict  # split id -> {"role": ..., "rooms": [...]}
    scenes_per_split: int = 10
    duration: float = 60.0
    polyphony: tuple = (1, 2)
    snr_range: tuple = (6.0, 30.0)
    seed: int = 0
    output_root: Path = Path("seld_out")
    formats: tuple = FORMATS
    wav_dtype: str = "float32"
    rooms: dict = field(default_factory=dict)
    trajectory_elevations: tuple = (-20.0, 0.0, 20.0)
    rir_len: int = 4096
    events_per_class: int = 4
    noise_segments: int = 2

    @classmethod
    def from_dict(cls, raw, env=None):
        env = os.environ if env is None else env
        raw = dict(raw)
        roles = raw.pop("roles", DEFAULT_ROLES)
        split_rooms = raw.pop("split_rooms", {})
        splits = {}
        for role, ids in roles.items():
            if role not in ROLES:
                raise ConfigError(f"unknown split role {role!r}")
            for sid in ids:
                sid = int(sid)
                if sid in splits:
                    raise ConfigError(
                        f"split {sid} assigned to both {splits[sid]['role']!r} and {role!r}")
                rooms = [str(r) for r in split_rooms.get(str(sid), [str(sid)])]
                if not rooms:
                    raise ConfigError(f"split {sid} has no rooms")
                splits[sid] = {"role": role, "rooms": rooms}
        if not splits:
            raise ConfigError("no splits configured")
        known = {f for f in cls.__dataclass_fields__} - {"splits"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(splits=splits, **raw)
        if env.get(OUTPUT_ENV):
            cfg.output_root = env[OUTPUT_ENV]
        cfg.output_root = Path(cfg.output_root)
        cfg.polyphony = tuple(int(p) for p in cfg.polyphony)
        cfg.snr_range = tuple(float(s) for s in cfg.snr_range)
        cfg.formats = tuple(cfg.formats)
        cfg.trajectory_elevations = tuple(float(e) for e in cfg.trajectory_elevations)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, env=None):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(raw, env)

    def validate(self):
        if self.scenes_per_split < 1:
            raise ConfigError("scenes_per_split must be >= 1")
        if not self.polyphony or any(p not in (1, 2) for p in self.polyphony):
            raise ConfigError("polyphony values must be 1 or 2")
        lo, hi = self.snr_range
        if not 6.0 <= lo <= hi <= 30.0:
            raise ConfigError("snr_range must lie within [6, 30] dB")
        if any(f not in FORMATS for f in self.formats):
            raise ConfigError(f"formats must be among {FORMATS}")
        if self.wav_dtype not in io.WAV_DTYPES:
            raise ConfigError(f"wav_dtype must be one of {io.WAV_DTYPES}")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        for room in self.all_rooms():
            try:
                self.room_spec(room)
            except ValueError as exc:
                raise ConfigError(f"room {room}: {exc}") from None

    def all_rooms(self):
        return sorted({r for s in self.splits.values() for r in s["rooms"]})

    def room_spec(self, room):
        params = self.rooms.get(str(room))
        if params is None:
            # deterministic variety for rooms without explicit parameters
            k = sum(ord(c) for c in str(room))
            params = {"rt60": 0.25 + 0.05 * (k % 5), "drr_db": 2.0 + 2.0 * (k % 4)}
        return RoomSpec(float(params["rt60"]), float(params["drr_db"]), str(room))

    def role_of(self, split):
        return self.splits[int(split)]["role"]


def scene_stem(split, room, index):
    return f"fold{split}_room{room}_mix{index:03d}"


def _seed(*parts):
    return np.random.SeedSequence([int(p) for p in parts])


def _room_number(room):
    return sum((i + 1) * ord(c) for i, c in enumerate(str(room)))


def room_trajectories(cfg, room, fmt):
    spec = cfg.room_spec(room)
    spec_array = TetraArraySpec()
    out = []
    for k, el in enumerate(cfg.trajectory_elevations):
        seed = _seed(cfg.seed, _room_number(room), k)
        out.append(simulate_trajectory_rirs(spec, circle_track(el), spec_array, seed=seed, fmt=fmt,
                                            rir_len=cfg.rir_len, trajectory_id=str(k),
                                            closed=True))
    return out


# --- synth ----------------------------------------------------------------------


_WORKER = {}


def _synth_scene(job):
    cfg, split, room, index = job
    trajs = _WORKER[(room, "trajs")]
    bank = _WORKER[(split, "bank")]
    noises = _WORKER[(room, "noise")]
    rng = np.random.default_rng(_seed(cfg.seed, split, _room_number(room), index, 1))
    poly = cfg.polyphony[(index - 1) % len(cfg.polyphony)]
    snr = float(rng.uniform(*cfg.snr_range))
    scene_seed = int(rng.integers(2**31))
    stem = scene_stem(split, room, index)
    root = cfg.output_root
    planning_spec = SceneSpec(cfg.duration, poly, snr, FS, cfg.formats[0], scene_seed)
    placements = plan_scene(bank, trajs[cfg.formats[0]], planning_spec)
    written = []
    frames = None
    for fmt in cfg.formats:
        spec = SceneSpec(cfg.duration, poly, snr, FS, fmt, scene_seed)
        rec = synthesize_scene(placements, bank, trajs[fmt], noises[fmt], spec, room_id=room)
        path = root / f"{fmt}_dev" / f"{stem}.wav"
        io.write_wav(path, rec.audio, FS, cfg.wav_dtype)
        written.append(path)
        frames = rec.frames
    label_path = root / "metadata_dev" / f"{stem}.csv"
    with io.atomic_path(label_path) as tmp:
        write_label_file(frames, tmp)
    written.append(label_path)
    return written


def _prepare_room(cfg, room):
    _WORKER[(room, "trajs")] = {fmt: room_trajectories(cfg, room, fmt) for fmt in cfg.formats}
    _WORKER[(room, "noise")] = {
        fmt: make_noise_bank(fmt, cfg.noise_segments, cfg.duration,
                             seed=_seed(cfg.seed, _room_number(room), 2))
        for fmt in cfg.formats
    }


def cmd_synth(cfg, jobs=1):
    """Synthesize every split/room/scene in all configured formats."""
    written = []
    for split in sorted(cfg.splits):
        _WORKER[(split, "bank")] = make_event_bank(cfg.events_per_class,
                                                   seed=_seed(cfg.seed, split, 3))
        for room in cfg.splits[split]["rooms"]:
            if (room, "trajs") not in _WORKER:
                _prepare_room(cfg, room)
            todo = [(cfg, split, room, i) for i in range(1, cfg.scenes_per_split + 1)]
            log.info("split %s room %s: %d scenes", split, room, len(todo))
            if jobs > 1:
                # fork shares the prepared banks and RIRs with the workers
                with ProcessPoolExecutor(jobs) as pool:
                    for paths in pool.map(_synth_scene, todo):
                        written.extend(paths)
            else:
                for job in todo:
                    written.extend(_synth_scene(job))
        _WORKER.pop((split, "bank"), None)
    _WORKER.clear()
    update_manifest(cfg.output_root)
    return written


def cmd_simulate_rirs(cfg, rooms=None, formats=None):
    written = []
    for room in rooms or cfg.all_rooms():
        for fmt in formats or cfg.formats:
            for traj in room_trajectories(cfg, room, fmt):
                written.extend(io.save_rir_set(cfg.output_root / "rirs" / fmt, traj, cfg.wav_dtype))
    return written


# --- features ------------------------------------------------------------------------


def _scene_files(folder):
    folder = Path(folder)
    if not folder.is_dir():
        return []
    return sorted(p for p in folder.glob("*.wav") if STEM_RE.match(p.stem))


def cmd_features(cfg, formats=None):
    """Feature files for every scene, normalized with train-split statistics."""
    written = []
    for fmt in formats or cfg.formats:
        wavs = _scene_files(cfg.output_root / f"{fmt}_dev")
        if not wavs:
            raise FileNotFoundError(f"no synthesized scenes in {cfg.output_root / f'{fmt}_dev'}")
        train = [p for p in wavs if _split_of(p.stem) in cfg.splits
                 and cfg.role_of(_split_of(p.stem)) == "train"]
        if not train:
            raise ConfigError(f"no train-split scenes found for {fmt}")
        out_dir = cfg.output_root / f"feat_{fmt}"
        stats = FeatureStats.fit(_features(p, fmt) for p in train)
        stats_path = out_dir / "stats.bin"
        io.save_stats(stats_path, stats, fmt)
        written.append(stats_path)
        for wav in wavs:
            tensor = stats.apply(_features(wav, fmt))
            path = out_dir / f"{wav.stem}.feat"
            io.save_feature_file(path, tensor, stats_path.name)
            written.append(path)
    update_manifest(cfg.output_root)
    return written


def _features(path, fmt):
    fs, audio = io.read_wav(path)
    return extract_features(audio, fmt, fs)


def _split_of(stem):
    m = STEM_RE.match(stem)
    return int(m["split"]) if m else None


# --- eval ----------------------------------------------------------------------------


class StemMismatch(Exception):
    def __init__(self, missing_pred, missing_ref):
        self.missing_pred, self.missing_ref = missing_pred, missing_ref
        super().__init__(
            f"predictions missing for {missing_pred}; references missing for {missing_ref}")


def cmd_eval(ref_dir, pred_dir, allow_partial=False, n_frames=None):
    """Score matching-stem label files; returns the structured report."""
    ref_dir, pred_dir = Path(ref_dir), Path(pred_dir)
    refs = {p.stem: p for p in ref_dir.glob("*.csv")}
    preds = {p.stem: p for p in pred_dir.glob("*.csv")}
    if not refs:
        raise FileNotFoundError(f"no reference CSVs in {ref_dir}")
    missing_pred = sorted(set(refs) - set(preds))
    missing_ref = sorted(set(preds) - set(refs))
    if (missing_pred or missing_ref) and not allow_partial:
        raise StemMismatch(missing_pred, missing_ref)
    groups = {"overall": SeldCounts()}
    per_file = {}
    for stem in sorted(set(refs) & set(preds)):
        ref = read_label_file(refs[stem], n_frames)
        pred = read_label_file(preds[stem], n_frames)
        counts = seld_counts(ref, pred)
        per_file[stem] = counts.report().as_dict()
        keys = ["overall", f"overlap{min(max(max_polyphony(ref), 1), 2)}"]
        split = _split_of(stem)
        if split is not None:
            keys.append(f"split{split}")
        for key in keys:
            groups[key] = groups.get(key, SeldCounts()) + counts
    return {
        "files": len(per_file),
        "missing_predictions": missing_pred,
        "groups": {k: groups[k].report().as_dict() for k in sorted(groups)},
        "per_file": per_file,
    }


def format_report(report):
    lines = [f"{'group':<10} {'ER20':>6} {'F20':>6} {'LE_CD':>7} {'LR_CD':>6}"
             f" {'ER':>6} {'F':>6} {'DE':>7} {'FR':>6}"]

    def deg(v):
        return "   n/a" if v is None else f"{v:6.1f}"

    for name, r in report["groups"].items():
        lines.append(
            f"{name:<10} {r['er_20']:6.2f} {100 * r['f_20']:6.1f} {deg(r['le_cd'])} "
            f"{100 * r['lr_cd']:6.1f} {r['er_2019']:6.2f} {100 * r['f_2019']:6.1f} "
            f"{deg(r['de_2019'])} {100 * r['fr_2019']:6.1f}")
    return "\n".join(lines)


# --- manifest ---------------------------------------------------------------------------

MANIFEST_DIRS = ("foa_dev", "mic_dev", "metadata_dev", "feat_foa", "feat_mic", "reports")


def update_manifest(root):
    root = Path(root)
    paths = [p for d in MANIFEST_DIRS if (root / d).is_dir()
             for p in sorted((root / d).iterdir()) if p.is_file() and not p.name.startswith(".")]
    return io.write_manifest(root, paths)


# --- entry point ------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="seldkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="pipeline config JSON (defaults if omitted)")
        p.add_argument("--output-root", help=f"override output_root (also ${OUTPUT_ENV})")
        p.add_argument("--seed", type=int, help="override the config seed")
        return p

    p = with_config(sub.add_parser("synth", help="synthesize FOA/MIC scenes and labels"))
    p.add_argument("--scenes-per-split", type=int, help="override scenes per split (full-size dataset: 100)")
    p.add_argument("--jobs", type=int, default=1)

    p = with_config(sub.add_parser("features", help="extract normalized feature files"))
    p.add_argument("--format", choices=FORMATS, action="append", dest="formats")

    p = with_config(sub.add_parser("simulate-rirs", help="write synthetic trajectory RIR sets"))
    p.add_argument("--room", action="append", dest="rooms")
    p.add_argument("--format", choices=FORMATS, action="append", dest="formats")

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("ref_dir")
    p.add_argument("pred_dir")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--output-root",
                   help="also write reports/eval_report.json here and refresh its manifest")
    p.add_argument("--allow-partial", action="store_true")
    p.add_argument("--frames", type=int, help="frames per file (pads short files)")
    return parser


def _load_config(args):
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
    if args.seed is not None:
        raw["seed"] = args.seed
    if getattr(args, "scenes_per_split", None):
        raw["scenes_per_split"] = args.scenes_per_split
    cfg = PipelineConfig.from_dict(raw)
    if args.output_root:
        cfg.output_root = Path(args.output_root)
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "eval":
            report = cmd_eval(args.ref_dir, args.pred_dir, args.allow_partial, args.frames)
            print(format_report(report))
            text = json.dumps(report, indent=2, sort_keys=True) + "\n"
            targets = [Path(args.report)] if args.report else []
            if args.output_root:
                targets.append(Path(args.output_root) / "reports" / "eval_report.json")
            for path in targets:
                with io.atomic_path(path) as tmp:
                    tmp.write_text(text)
            if args.output_root:
                update_manifest(args.output_root)
            return 0
        cfg = _load_config(args)
        if args.command == "synth":
            paths = cmd_synth(cfg, jobs=args.jobs)
        elif args.command == "features":
            paths = cmd_features(cfg, args.formats)
        else:
            paths = cmd_simulate_rirs(cfg, args.rooms, args.formats)
        print(f"{args.command}: wrote {len(paths)} files under {cfg.output_root}")
        return 0
    except StemMismatch as exc:
        for stem in exc.missing_pred:
            print(f"missing prediction: {stem}", file=sys.stderr)
        for stem in exc.missing_ref:
            print(f"missing reference: {stem}", file=sys.stderr)
        return 1
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
