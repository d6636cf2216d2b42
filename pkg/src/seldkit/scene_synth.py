"""Scene synthesis: event planning, spatialization, ambience and labels.

A scene is planned once (onsets, static/moving assignment, trajectory
choices) and can then be rendered in either format from trajectory RIR sets
that share the same directions, so FOA and MIC renders carry identical
metadata.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy import signal

from .array_models import FOA, FORMATS, MIC, angular_distance
from .labels import FRAME_SECONDS, SeldEvent, SeldFrame, write_label_file
from .rir_toolkit import FS, diffuse_noise

N_CLASSES = 14
MIN_MOVING_DURATION = 2.0
BLOCK = 512
FFT_SIZE = 2 * BLOCK


class Speed(enum.IntEnum):
    """Trajectory entries consumed per second (entries are ~1 degree apart)."""

    SLOW = 10
    MEDIUM = 20
    FAST = 40


@dataclass
class EventSample:
    class_id: int
    waveform: np.ndarray
    fs: int = FS
    name: str = ""

    def __post_init__(self):
        self.waveform = np.asarray(self.waveform, dtype=float)
        if not 0 <= self.class_id < N_CLASSES:
            raise ValueError(f"class_id must lie in [0, {N_CLASSES - 1}]")
        if self.waveform.ndim != 1 or len(self.waveform) == 0:
            raise ValueError("waveform must be a non-empty mono signal")
        if np.max(np.abs(self.waveform)) > 1.0 + 1e-12:
            raise ValueError("waveform must be peak-normalized to <= 1")

    @property
    def duration(self):
        return len(self.waveform) / self.fs


@dataclass(frozen=True)
class StaticMotion:
    trajectory_index: int
    entry_index: int


@dataclass(frozen=True)
class MovingMotion:
    trajectory_index: int
    start_index: int
    sign: int
    speed: Speed


Motion = Union[StaticMotion, MovingMotion]


@dataclass(frozen=True)
class EventPlacement:
    sample_index: int
    class_id: int
    onset: float
    duration: float
    motion: Motion
    track_id: int

    @property
    def offset(self):
        return self.onset + self.duration


@dataclass(frozen=True)
class SceneSpec:
    duration: float = 60.0
    max_polyphony: int = 1
    snr_db: float = 20.0
    fs: int = FS
    fmt: str = FOA
    seed: int = 0
    p_moving: float = 0.5
    gap_range: tuple = (0.5, 4.0)

    def __post_init__(self):
        if self.max_polyphony not in (1, 2):
            raise ValueError("max_polyphony must be 1 or 2")
        if not 6.0 <= self.snr_db <= 30.0:
            raise ValueError("snr_db must lie in [6, 30] dB")
        if self.fmt not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        if self.duration <= 0 or self.fs <= 0:
            raise ValueError("duration and fs must be positive")
        if not 0.0 <= self.p_moving <= 1.0:
            raise ValueError("p_moving must be a probability")

    @property
    def n_samples(self):
        return int(round(self.duration * self.fs))

    @property
    def n_frames(self):
        return int(round(self.duration / FRAME_SECONDS))


@dataclass
class SceneRecording:
    audio: np.ndarray
    frames: list
    room_id: str
    spec: SceneSpec
    placements: list = field(default_factory=list)
    dry: np.ndarray | None = None


# --- procedural event bank -----------------------------------------------------


def _envelope(n, fs, rng):
    attack = max(1, int(rng.uniform(0.005, 0.05) * fs))
    release = max(1, int(rng.uniform(0.05, 0.3) * fs))
    env = np.ones(n)
    attack, release = min(attack, n // 2), min(release, n // 2)
    env[:attack] = np.linspace(0, 1, attack, endpoint=False)
    env[n - release :] = np.linspace(1, 0, release)
    rate = rng.uniform(0.5, 6.0)
    depth = rng.uniform(0.0, 0.6)
    env *= 1 - depth * 0.5 * (1 + np.sin(2 * np.pi * rate * np.arange(n) / fs))
    return env


def make_event_sample(class_id, duration, rng, fs=FS):
    """Band-limited noise burst (odd classes) or tone complex (even classes).

    The class sets the spectral centre, so each class has its own
    spectral envelope.
    """
    n = max(1, int(round(duration * fs)))
    centre = 150.0 * (40.0 ** (class_id / (N_CLASSES - 1)))  # 150 Hz .. 6 kHz
    t = np.arange(n) / fs
    if class_id % 2:
        lo, hi = centre / 1.6, min(centre * 1.6, 0.45 * fs)
        sos = signal.butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos")
        wave = signal.sosfilt(sos, rng.standard_normal(n))
    else:
        f0 = centre * rng.uniform(0.9, 1.1)
        wave = np.zeros(n)
        for h in range(1, 9):
            if h * f0 >= 0.45 * fs:
                break
            vibrato = 1 + 0.01 * np.sin(2 * np.pi * rng.uniform(3, 7) * t)
            wave += np.sin(2 * np.pi * h * f0 * t * vibrato + rng.uniform(0, 2 * np.pi)) / h
    wave *= _envelope(n, fs, rng)
    wave /= np.max(np.abs(wave)) or 1.0
    return EventSample(class_id, wave, fs, f"class{class_id:02d}")


def make_event_bank(per_class=4, seed=0, fs=FS, duration_range=(0.5, 8.0)):
    """Seeded procedural stand-in for a labelled event database."""
    rng = np.random.default_rng(seed)
    bank = []
    for class_id in range(N_CLASSES):
        for k in range(per_class):
            dur = rng.uniform(*duration_range)
            sample = make_event_sample(class_id, dur, rng, fs)
            sample.name = f"class{class_id:02d}_{k:03d}"
            bank.append(sample)
    return bank


# --- planning --------------------------------------------------------------------


def plan_scene(event_bank, trajectories, spec, rng=None):
    """Random event placements honouring the polyphony limit.

    Events are laid out on ``max_polyphony`` independent layers; within a
    layer events never overlap, so at most ``max_polyphony`` are active at
    any instant. Events of 2 s or less are always static; longer ones are
    moving with probability ``spec.p_moving``.
    """
    if not event_bank or not trajectories:
        raise ValueError("need a non-empty event bank and trajectories")
    durations = np.array([s.duration for s in event_bank])
    if np.all(durations > spec.duration):
        raise ValueError("every event is longer than the scene")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    entry_counts = [len(t) for t in trajectories]
    flat_entries = [(ti, ei) for ti, n in enumerate(entry_counts) for ei in range(n)]
    placements = []
    for _ in range(spec.max_polyphony):
        t = rng.uniform(0.0, spec.gap_range[1])
        while True:
            fits = np.flatnonzero(durations <= spec.duration - t)
            if not len(fits):
                break
            idx = int(rng.choice(fits))
            sample = event_bank[idx]
            dur = sample.duration
            motion = _draw_motion(dur, trajectories, flat_entries, spec, rng)
            placements.append((t, idx, sample.class_id, dur, motion))
            t += dur + rng.uniform(*spec.gap_range)
    placements.sort(key=lambda p: (p[0], p[1]))
    return [
        EventPlacement(idx, cls, onset, dur, motion, track_id)
        for track_id, (onset, idx, cls, dur, motion) in enumerate(placements)
    ]


def _draw_motion(duration, trajectories, flat_entries, spec, rng):
    moving = duration > MIN_MOVING_DURATION and rng.random() < spec.p_moving
    if not moving:
        ti, ei = flat_entries[int(rng.integers(len(flat_entries)))]
        return StaticMotion(ti, ei)
    ti = int(rng.integers(len(trajectories)))
    start = int(rng.integers(len(trajectories[ti])))
    sign = 1 if rng.random() < 0.5 else -1
    speed = list(Speed)[int(rng.integers(3))]
    return MovingMotion(ti, start, sign, speed)


def polyphony_profile(placements, duration, resolution=0.01):
    """Number of active events on a fine time grid."""
    grid = np.arange(0.0, duration, resolution)
    count = np.zeros(len(grid), dtype=int)
    for p in placements:
        count += (grid >= p.onset) & (grid < p.offset)
    return count


# --- spatialization ----------------------------------------------------------------


def spatialize_static(sample, rir):
    """Full linear convolution of the mono event with each RIR channel."""
    if sample.fs != rir.fs:
        raise ValueError(f"sample rate mismatch: {sample.fs} vs {rir.fs}")
    return signal.fftconvolve(sample.waveform[None, :], rir.channels, axes=1)


@dataclass
class MovingRender:
    audio: np.ndarray
    path: list  # (trajectory, entry index) per consumed entry, in order
    speed: Speed
    fs: int = FS

    @property
    def entries_consumed(self):
        return len(self.path)

    def direction_at(self, t):
        k = min(max(int(math.floor(t * int(self.speed) + 1e-9)), 0), len(self.path) - 1)
        traj, idx = self.path[k]
        return traj.entries[idx][1]

    def doa_track(self, duration):
        n = int(math.ceil(duration / FRAME_SECONDS - 1e-9))
        return [self.direction_at((j + 0.5) * FRAME_SECONDS) for j in range(n)]


def _adjacent_path(current, alternates):
    others = [t for t in alternates if t is not current]
    if not others:
        return None
    el = current.mean_elevation
    different = [t for t in others if abs(t.mean_elevation - el) > 1e-9]
    if not different:
        return None
    # nearest elevation; on a tie the higher path wins
    return min(different, key=lambda t: (abs(t.mean_elevation - el), -t.mean_elevation))


def walk_trajectory(traj, start_index, sign, n_entries, alternates=()):
    """Sequence of (trajectory, index) visited by a moving event.

    Closed loops wrap around. At the end of an open path the event jumps to
    the adjacent-elevation path (entering at the entry closest to its
    current direction) if one exists, otherwise it reverses.
    """
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if not 0 <= start_index < len(traj):
        raise ValueError("start index outside the trajectory")
    cur, idx, step = traj, start_index, sign
    path = [(cur, idx)]
    just_jumped = False
    while len(path) < n_entries:
        nxt = idx + step
        if cur.closed:
            idx = nxt % len(cur)
        elif 0 <= nxt < len(cur):
            idx = nxt
            just_jumped = False
        else:
            target = None if just_jumped else _adjacent_path(cur, alternates)
            if target is not None:
                here = cur.entries[idx][1]
                idx = min(range(len(target)),
                          key=lambda i: angular_distance(target.entries[i][1], here))
                cur = target
                just_jumped = True
            elif len(cur) > 1:
                step = -step
                idx += step
                just_jumped = False
        path.append((cur, idx))
    return path


def _partition_spectra(rir_channels, n_parts):
    pad = np.zeros((rir_channels.shape[0], n_parts * BLOCK))
    pad[:, : rir_channels.shape[1]] = rir_channels
    parts = pad.reshape(rir_channels.shape[0], n_parts, BLOCK).transpose(1, 0, 2)
    return np.fft.rfft(parts, n=FFT_SIZE, axis=-1)


def spatialize_moving(sample, traj, start_index, sign, speed, alternates=()):
    """Time-variant partitioned convolution along a trajectory.

    The input is cut into 512-sample blocks; each block is convolved (via
    zero-padded 1024-point FFTs, uniformly partitioned) with the full RIR
    active when the block was emitted. Output partition p of frame t
    therefore comes from the RIR active at frame t - p: recent RIRs carry
    the direct path, older ones the tail. ``speed`` entries are consumed per
    second of input.
    """
    speed = Speed(speed)
    if sample.fs != traj.entries[0][0].fs:
        raise ValueError("sample rate mismatch")
    x = sample.waveform
    fs = sample.fs
    n_entries = max(1, int(math.ceil(int(speed) * len(x) / fs - 1e-9)))
    path = walk_trajectory(traj, start_index, sign, n_entries, alternates)

    rir_len = max(t.entries[i][0].length for t, i in path)
    n_parts = int(math.ceil(rir_len / BLOCK))
    n_blocks = int(math.ceil(len(x) / BLOCK))
    xb = np.zeros(n_blocks * BLOCK)
    xb[: len(x)] = x
    xspec = np.fft.rfft(xb.reshape(n_blocks, BLOCK), n=FFT_SIZE, axis=-1)

    cache = {}
    acc = np.zeros((n_blocks + n_parts, 4, FFT_SIZE // 2 + 1), dtype=complex)
    for s in range(n_blocks):
        k = min(int(math.floor(int(speed) * s * BLOCK / fs + 1e-9)), n_entries - 1)
        key = (id(path[k][0]), path[k][1])
        if key not in cache:
            t, i = path[k]
            cache[key] = _partition_spectra(t.entries[i][0].channels, n_parts)
        acc[s : s + n_parts] += xspec[s][None, None, :] * cache[key]

    frames = np.fft.irfft(acc, n=FFT_SIZE, axis=-1)
    n_out = (n_blocks + n_parts + 1) * BLOCK
    out = np.zeros((4, n_out))
    head = frames[:, :, :BLOCK].transpose(1, 0, 2).reshape(4, -1)
    tail = frames[:, :, BLOCK:].transpose(1, 0, 2).reshape(4, -1)
    out[:, : head.shape[1]] += head
    out[:, BLOCK : BLOCK + tail.shape[1]] += tail
    length = len(x) + rir_len - 1
    return MovingRender(out[:, :length], path, speed, fs)


# --- ambience ---------------------------------------------------------------------


def extract_omni(audio, fmt):
    """Omnidirectional component: W for FOA, the channel mean for MIC."""
    audio = np.asarray(audio, dtype=float)
    if audio.shape[0] != 4:
        raise ValueError("expected 4 channels")
    if fmt == FOA:
        return audio[0]
    if fmt == MIC:
        return audio.mean(axis=0)
    raise ValueError(f"unknown format {fmt!r}")


def omni_power(audio, fmt):
    omni = extract_omni(audio, fmt)
    return float(np.mean(omni**2))


def noise_gain(mixture, noise, snr_db, fmt):
    p_noise = omni_power(noise, fmt)
    if p_noise <= 0:
        raise ValueError("noise segment is silent")
    return math.sqrt(omni_power(mixture, fmt) / (p_noise * 10 ** (snr_db / 10)))


def mix_ambience(mixture, noise, snr_db, fmt):
    """Add ``noise`` scaled so the omni SNR of the result equals ``snr_db``."""
    mixture = np.asarray(mixture, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if mixture.shape != noise.shape:
        raise ValueError("mixture and noise must have equal shapes")
    return mixture + noise_gain(mixture, noise, snr_db, fmt) * noise


def extend_noise(segments, count, rng, fmt=FOA):
    """New segments, each the sum of two distinct originals at mean power."""
    if len(segments) < 2:
        raise ValueError("need at least two noise segments")
    target = np.mean([omni_power(s, fmt) for s in segments])
    out = []
    for _ in range(count):
        i, j = rng.choice(len(segments), size=2, replace=False)
        mix = np.asarray(segments[i], dtype=float) + np.asarray(segments[j], dtype=float)
        out.append(mix * math.sqrt(target / omni_power(mix, fmt)))
    return out


def make_noise_bank(fmt, n_segments=2, duration=60.0, seed=0, fs=FS):
    """Synthetic ambience: diffuse noise with a gentle low-pass tilt."""
    rng = np.random.default_rng(seed)
    sos = signal.butter(1, 800.0, btype="lowpass", fs=fs, output="sos")
    n = int(round(duration * fs))
    bank = []
    for _ in range(n_segments):
        noise = diffuse_noise(n, fmt, rng, fs)
        noise = 0.7 * signal.sosfilt(sos, noise, axis=1) + 0.3 * noise
        bank.append(noise / np.sqrt(np.mean(extract_omni(noise, fmt) ** 2)) * 0.01)
    return bank


# --- scene assembly -----------------------------------------------------------------


def active_frames(onset, offset, n_frames, frame=FRAME_SECONDS):
    """Frames whose span is covered at least halfway by [onset, offset)."""
    first = max(0, int(math.floor(onset / frame)))
    last = min(n_frames - 1, int(math.ceil(offset / frame)))
    out = []
    for k in range(first, last + 1):
        overlap = min(offset, (k + 1) * frame) - max(onset, k * frame)
        if overlap >= 0.5 * frame - 1e-9:
            out.append(k)
    return out


def synthesize_scene(placements, event_bank, trajectories, noise_bank, spec, room_id="room",
                     keep_dry=False):
    """Render a planned scene in ``spec.fmt`` and label it at 100 ms."""
    n = spec.n_samples
    n_frames = spec.n_frames
    dry = np.zeros((4, n))
    frame_events = [[] for _ in range(n_frames)]
    for p in placements:
        sample = event_bank[p.sample_index]
        if sample.fs != spec.fs:
            raise ValueError("event sample rate differs from the scene rate")
        if isinstance(p.motion, StaticMotion):
            rir, direction = trajectories[p.motion.trajectory_index].entries[p.motion.entry_index]
            wet = spatialize_static(sample, rir)
            locate = lambda tau, d=direction: d  # noqa: E731
        else:
            m = p.motion
            render = spatialize_moving(sample, trajectories[m.trajectory_index], m.start_index,
                                       m.sign, m.speed, alternates=trajectories)
            wet = render.audio
            locate = render.direction_at
        start = int(round(p.onset * spec.fs))
        stop = min(n, start + wet.shape[1])
        if stop > start:
            dry[:, start:stop] += wet[:, : stop - start]
        for k in active_frames(p.onset, p.offset, n_frames):
            tau = min(max((k + 0.5) * FRAME_SECONDS - p.onset, 0.0), p.duration - 1e-9)
            frame_events[k].append(SeldEvent(p.class_id, locate(tau), p.track_id))

    audio = dry
    if noise_bank:
        rng = np.random.default_rng(spec.seed)
        noise = noise_bank[int(rng.integers(len(noise_bank)))]
        if noise.shape[1] < n:
            raise ValueError("noise segments are shorter than the scene")
        if np.any(dry):
            audio = mix_ambience(dry, noise[:, :n], spec.snr_db, spec.fmt)
    frames = [SeldFrame(tuple(evs)) for evs in frame_events]
    return SceneRecording(audio, frames, room_id, spec, list(placements),
                          dry if keep_dry else None)


def emit_metadata(recording, path):
    """Write the recording's frame labels as a CSV."""
    write_label_file(recording.frames, path)


def measured_snr_db(recording):
    """Omni SNR of a recording synthesized with ``keep_dry=True``."""
    if recording.dry is None:
        raise ValueError("recording does not keep its dry mixture")
    fmt = recording.spec.fmt
    return 10 * math.log10(omni_power(recording.dry, fmt)
                           / omni_power(recording.audio - recording.dry, fmt))
