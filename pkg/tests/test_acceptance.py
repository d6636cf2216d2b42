"""Acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL`` line (also repeated in
the terminal summary) and then asserts.
"""

import json
import math
import time
import warnings

import numpy as np
import pytest
from scipy.signal import fftconvolve

from seldkit import io
from seldkit.array_models import FOA, MIC, Direction, TetraArraySpec, angular_distance, foa_response
from seldkit.array_models import rigid_sphere_response, synthesize_array_ir
from seldkit.cli import main
from seldkit.features import compute_stft, extract_features, foa_intensity, gcc_doa
from seldkit.features import gcc_phat_features, intensity_doa
from seldkit.labels import SeldEvent, SeldFrame
from seldkit.metrics import (
    class_aware_localization,
    doa_error_frame_recall,
    evaluate,
    location_aware_detection,
    rotate_away,
    seld_counts,
    segment_er_f,
)
from seldkit.rir_toolkit import (
    FS,
    Rir,
    RoomSpec,
    TrajectoryRIRSet,
    circle_track,
    extract_rirs_sliding,
    generate_mls,
    music_doa_broadband,
    simulate_trajectory_rirs,
    window_direct_path,
)
from seldkit.scene_synth import (
    EventSample,
    SceneSpec,
    Speed,
    make_event_bank,
    make_noise_bank,
    measured_snr_db,
    plan_scene,
    spatialize_moving,
    spatialize_static,
    synthesize_scene,
)

import acceptance_log
from oracles import brute_force_segment_counts, rigid_sphere_series


class Criterion:
    """Collects named checks, prints one verdict line, then fails if any check did."""

    def __init__(self, number, limit_s=None):
        self.number, self.limit_s = number, limit_s
        self.failures, self.notes = [], []
        self.start = time.perf_counter()

    def check(self, ok, what):
        if not ok:
            self.failures.append(what)

    def note(self, text):
        self.notes.append(text)

    def finish(self, capsys):
        elapsed = time.perf_counter() - self.start
        if self.limit_s is not None:
            self.check(elapsed < self.limit_s, f"runtime {elapsed:.1f}s over {self.limit_s}s")
        verdict = "PASS" if not self.failures else "FAIL"
        detail = "; ".join(self.notes + self.failures)
        line = f"criterion {self.number}: {verdict} ({elapsed:.1f}s) {detail}"
        acceptance_log.record(self.number, line)
        with capsys.disabled():
            print("\n" + line)
        assert not self.failures, line


def relative_db(a, b):
    return 10 * np.log10(np.sum((a - b) ** 2) / np.sum(b**2))


def deg(a, b):
    return math.degrees(angular_distance(a, b))


def random_directions(rng, n, max_el_deg=90.0):
    lim = math.radians(max_el_deg)
    return [Direction(rng.uniform(-math.pi, math.pi), rng.uniform(-lim, lim)) for _ in range(n)]


def test_criterion_1_foa_responses(capsys):
    c = Criterion(1, limit_s=1.0)
    rng = np.random.default_rng(1)
    worst = norm_dev = 0.0
    for d in random_directions(rng, 1000):
        az, el = d.azimuth, d.elevation
        expected = np.array([1.0, math.sin(az) * math.cos(el), math.sin(el),
                             math.cos(az) * math.cos(el)])
        g = foa_response(d)
        worst = max(worst, float(np.max(np.abs(g - expected))))
        norm_dev = max(norm_dev, abs(float(g[1:] @ g[1:]) - 1.0))
    c.note(f"max abs dev {worst:.1e}, unit-norm dev {norm_dev:.1e}")
    c.check(worst <= 1e-12, "response deviation")
    c.check(norm_dev <= 1e-12, "unit-vector invariant")
    c.finish(capsys)


def test_criterion_2_rigid_sphere_oracle(capsys):
    c = Criterion(2, limit_s=10.0)
    rng = np.random.default_rng(2)
    spec = TetraArraySpec()
    worst = 0.0
    for d in random_directions(rng, 50):
        freq = float(rng.uniform(20.0, 20000.0))
        mic = int(rng.integers(4))
        cos_gamma = float(np.clip(spec.mic_vectors()[mic] @ d.unit_vector(), -1, 1))
        expected = rigid_sphere_series(cos_gamma, freq)
        got = rigid_sphere_response(spec, mic, d, freq)
        worst = max(worst, abs(got - expected) / abs(expected))
    c.note(f"max relative error {worst:.1e}")
    c.check(worst < 1e-6, "oracle mismatch")
    c.finish(capsys)


def test_criterion_3_mls_identification(capsys):
    c = Criterion(3, limit_s=30.0)
    rng = np.random.default_rng(3)
    h = rng.standard_normal((4, 512)) * np.exp(-np.arange(512) / 120)
    mls = generate_mls(14, seed=3).samples
    x = np.tile(mls, 4)[: 3 * FS]
    y = fftconvolve(x[None, :], h, axes=1)[:, : len(x)]
    noise = rng.standard_normal(y.shape)
    noise *= np.sqrt(np.mean(y**2) / np.mean(noise**2) / 10 ** (30 / 10))

    def worst(signal):
        return max(np.linalg.norm(r.channels - h) / np.linalg.norm(h)
                   for r in extract_rirs_sliding(x, signal, 512))

    clean, noisy = worst(y), worst(y + noise)
    c.note(f"noiseless {clean:.1e}, 30 dB {noisy:.3f}")
    c.check(clean < 1e-6, "noiseless error")
    c.check(noisy < 0.1, "30 dB error")
    c.finish(capsys)


def test_criterion_4_music_closed_loop(capsys):
    c = Criterion(4, limit_s=120.0)
    rng = np.random.default_rng(4)
    # directions within the +-60 degree elevation span of the search grid
    track = random_directions(rng, 50, max_el_deg=60.0)
    for drr, tol in ((math.inf, 2.0), (3.0, 5.0)):
        traj = simulate_trajectory_rirs(RoomSpec(0.5, drr), track, seed=4)
        errors = []
        for rir, d in traj.entries:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                windowed = window_direct_path(rir)
            errors.append(deg(music_doa_broadband(windowed), d))
        c.note(f"DRR {drr:g} dB max {max(errors):.2f} deg")
        c.check(max(errors) <= tol, f"DRR {drr:g} beyond {tol} deg")
    c.finish(capsys)


def test_criterion_5_moving_special_case(capsys):
    c = Criterion(5)
    rng = np.random.default_rng(5)
    rir = Rir(rng.standard_normal((4, 1500)) * np.exp(-np.arange(1500) / 300))
    traj = TrajectoryRIRSet("same", [(rir, d) for d in circle_track(0, 1.0)[:400]])
    x = rng.standard_normal(int(3.2 * FS))
    sample = EventSample(0, x / np.max(np.abs(x)))
    static = spatialize_static(sample, rir)
    for speed in Speed:
        err = relative_db(spatialize_moving(sample, traj, 10, 1, speed).audio, static)
        c.note(f"{speed.name} {err:.0f} dB")
        c.check(err < -40, f"{speed.name} relative error")
    fast = spatialize_moving(EventSample(0, x[: 3 * FS] / np.max(np.abs(x))), traj, 0, 1, Speed.FAST)
    c.note(f"FAST consumed {fast.entries_consumed} entries in 3 s")
    c.check(fast.entries_consumed == 120, "FAST entry count")
    c.finish(capsys)


def test_criterion_6_scene_snr(capsys):
    c = Criterion(6)
    bank = make_event_bank(per_class=2, seed=6)
    worst = 0.0
    for fmt in (FOA, MIC):
        trajs = [simulate_trajectory_rirs(RoomSpec(0.3, 6.0), circle_track(el), seed=i, fmt=fmt,
                                          rir_len=1024, trajectory_id=str(i), closed=True)
                 for i, el in enumerate((-20, 0, 20))]
        noises = make_noise_bank(fmt, 2, 60.0, seed=6)
        for snr in (6.0, 18.0, 30.0):
            for seed in range(2):
                spec = SceneSpec(max_polyphony=1 + seed, snr_db=snr, fmt=fmt, seed=seed)
                rec = synthesize_scene(plan_scene(bank, trajs, spec), bank, trajs, noises, spec,
                                       keep_dry=True)
                worst = max(worst, abs(measured_snr_db(rec) - snr))
    c.note(f"12 scenes, max |SNR error| {worst:.3f} dB")
    c.check(worst <= 0.5, "SNR beyond 0.5 dB")
    c.finish(capsys)


def test_criterion_7_features(capsys):
    c = Criterion(7)
    bank = make_event_bank(per_class=1, seed=7)
    for fmt, channels in ((FOA, 7), (MIC, 10)):
        trajs = [simulate_trajectory_rirs(RoomSpec(0.3, 6.0), circle_track(0), seed=7, fmt=fmt,
                                          rir_len=1024, closed=True)]
        spec = SceneSpec(fmt=fmt, seed=7)
        rec = synthesize_scene(plan_scene(bank, trajs, spec), bank, trajs,
                               make_noise_bank(fmt, 2, 60.0, seed=7), spec)
        shape = extract_features(rec.audio, fmt).shape
        c.note(f"{fmt} {shape}, {len(rec.frames)} frames")
        c.check(shape == (channels, 2999, 64), f"{fmt} feature shape")
        c.check(len(rec.frames) == 600, f"{fmt} metadata frames")
    rng = np.random.default_rng(7)
    s = rng.standard_normal(2 * FS)
    worst_iv = worst_gcc = 0.0
    for src in random_directions(rng, 10, max_el_deg=60.0):
        foa = fftconvolve(s[None, :], synthesize_array_ir(src, FOA, 512, FS), axes=1)
        worst_iv = max(worst_iv, deg(intensity_doa(foa_intensity(compute_stft(foa, fmt=FOA))), src))
        mic = fftconvolve(s[None, :], synthesize_array_ir(src, MIC, 512, FS), axes=1)
        worst_gcc = max(worst_gcc, deg(gcc_doa(gcc_phat_features(compute_stft(mic, fmt=MIC))), src))
    c.note(f"intensity cue {worst_iv:.1f} deg, GCC cue {worst_gcc:.1f} deg")
    c.check(worst_iv <= 10 and worst_gcc <= 10, "DoA cue beyond 10 deg")
    c.finish(capsys)


def _scene(rng, n_frames=20, n_classes=3, max_events=2):
    frames = []
    for _ in range(n_frames):
        k = int(rng.integers(0, max_events + 1))
        events = tuple(SeldEvent(int(rng.integers(n_classes)),
                                 Direction(rng.uniform(-math.pi, math.pi), rng.uniform(-1.2, 1.2)), t)
                       for t in range(k))
        frames.append(SeldFrame(events))
    return frames


def test_criterion_8_metrics(capsys):
    c = Criterion(8)

    def D(az, el=0.0):
        return Direction.from_degrees(az, el)

    def constant(events, n=10):
        return [SeldFrame(tuple(SeldEvent(*e) for e in events))] * n

    rng = np.random.default_rng(8)
    ref = _scene(rng, 200)
    ideal = evaluate(ref, ref)
    c.check((ideal.er_20, ideal.f_20, ideal.le_cd, ideal.lr_cd) == (0.0, 1.0, 0.0, 1.0),
            "ideal scores")

    # hand case 1: one segment, {A,B} against {A,C}
    r1 = constant([(0, D(0), 0), (1, D(30), 1)])
    p1 = constant([(0, D(0), 0), (2, D(30), 1)])
    k = seld_counts(r1, p1)
    c.check((k.tp, k.fp, k.fn, k.subs) == (1, 1, 1, 1) and segment_er_f(r1, p1) == (0.5, 0.5),
            "segment hand case")
    # hand case 2: two refs, two preds, assignment avoids the crossed pairing
    r2 = constant([(0, D(0), 0), (1, D(90), 1)], 1)
    p2 = constant([(0, D(10), 0), (1, D(80), 1)], 1)
    de, fr = doa_error_frame_recall(r2, p2)
    # 10 degrees through trig round-off: exact to 1e-12 rather than bitwise
    c.check(abs(de - 10.0) <= 1e-12 and fr == 1.0, "frame DoA hand case")
    # hand case 3: right class 25 degrees off
    r3 = constant([(3, D(0), 0)])
    p3 = constant([(3, D(25), 0)])
    k = seld_counts(r3, p3)
    c.check((k.tp20, k.fp20, k.fn20, k.subs20) == (0, 1, 1, 1)
            and location_aware_detection(r3, p3) == (1.0, 0.0)
            and class_aware_localization(r3, p3) == (25.0, 1.0), "25 degree hand case")

    base = D(10, 5)
    flips = [location_aware_detection(constant([(3, base, 0)]),
                                      constant([(3, rotate_away(base, math.radians(a), 0.7), 0)]))
             for a in (19.9, 20.0, 20.1)]
    c.check(flips == [(0.0, 1.0), (0.0, 1.0), (1.0, 0.0)], "20 degree boundary")

    rng = np.random.default_rng(2020)
    mismatches = sum(segment_er_f(a, b) != brute_force_segment_counts(a, b)
                     for a, b in ((_scene(rng), _scene(rng)) for _ in range(200)))
    c.note(f"DE hand case {de!r}; oracle mismatches {mismatches}/200")
    c.check(mismatches == 0, "segment oracle")
    c.finish(capsys)


def _pipeline(root):
    root.mkdir()
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({"roles": {"train": [3], "test": [1]}, "scenes_per_split": 5,
                               "seed": 9, "output_root": str(root / "out")}))
    out = root / "out"
    meta = out / "metadata_dev"
    codes = [main(["synth", "--config", str(cfg)]),
             main(["features", "--config", str(cfg)]),
             main(["eval", str(meta), str(meta), "--output-root", str(out)])]
    return codes, out


@pytest.mark.slow
def test_criterion_9_end_to_end_determinism(tmp_path, capsys):
    c = Criterion(9)
    runs = []
    for k in range(2):
        t0 = time.perf_counter()
        codes, out = _pipeline(tmp_path / f"run{k}")
        seconds = time.perf_counter() - t0
        c.check(codes == [0, 0, 0], f"run {k} exit codes {codes}")
        c.check(seconds < 300, f"run {k} took {seconds:.0f}s")
        runs.append((out / "manifest.tsv").read_bytes())
        c.note(f"run {k} {seconds:.0f}s")
    rows = io.read_manifest(tmp_path / "run0" / "out" / "manifest.tsv")
    c.note(f"{len(rows)} manifest rows")
    c.check(len(rows) == 10 * 3 + 2 * 11 + 1, "manifest row count")
    c.check(runs[0] == runs[1], "manifests differ")
    c.finish(capsys)
