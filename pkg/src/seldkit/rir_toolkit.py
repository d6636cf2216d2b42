"""Trajectory RIR tools: MLS excitation, sliding RIR extraction, reference DoAs.

The measurement chain is

    MLS -> moving-source recording -> extract_rirs_sliding
        -> window_direct_path -> music_doa_broadband -> select_reference_pairs

and ``simulate_trajectory_rirs`` stands in for the physical rooms.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, signal

from .array_models import (
    FOA,
    MIC,
    Direction,
    TetraArraySpec,
    angular_distance,
    angular_distance_arrays,
    steering_matrix,
    synthesize_array_ir,
)

FS = 24000
DIRECT_LEN = 256


@dataclass(frozen=True)
class MLSSignal:
    order: int
    samples: np.ndarray
    taps: int

    def __len__(self):
        return len(self.samples)


@dataclass
class Rir:
    """Multichannel impulse response; ``flags`` marks degraded entries."""

    channels: np.ndarray
    fs: int = FS
    flags: frozenset = frozenset()

    def __post_init__(self):
        self.channels = np.atleast_2d(np.asarray(self.channels, dtype=float))

    @property
    def length(self):
        return self.channels.shape[1]

    @property
    def ok(self):
        return not self.flags


@dataclass
class TrajectoryRIRSet:
    room_id: str
    entries: list
    spacing: float = 1.0
    trajectory_id: str = "0"
    sparse: bool = False
    closed: bool = False

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a trajectory needs at least one entry")

    def __len__(self):
        return len(self.entries)

    @property
    def directions(self):
        return [d for _, d in self.entries]

    @property
    def mean_elevation(self):
        return float(np.mean([d.elevation for d in self.directions]))

    def spacing_deviation(self):
        """Largest |step - spacing| between consecutive entries, in degrees."""
        dirs = self.directions
        if len(dirs) < 2:
            return 0.0
        steps = [math.degrees(angular_distance(a, b)) for a, b in zip(dirs, dirs[1:])]
        return max(abs(s - self.spacing) for s in steps)


# --- MLS -------------------------------------------------------------------


def _gf2_mulmod(a, b, poly, degree):
    result = 0
    top = 1 << degree
    while b:
        if b & 1:
            result ^= a
        b >>= 1
        a <<= 1
        if a & top:
            a ^= poly
    return result


def _gf2_powmod(exponent, poly, degree):
    result, base = 1, 2  # the polynomial "x"
    while exponent:
        if exponent & 1:
            result = _gf2_mulmod(result, base, poly, degree)
        base = _gf2_mulmod(base, base, poly, degree)
        exponent >>= 1
    return result


def _prime_factors(n):
    factors, p = [], 2
    while p * p <= n:
        if n % p == 0:
            factors.append(p)
            while n % p == 0:
                n //= p
        p += 1
    if n > 1:
        factors.append(n)
    return factors


def is_primitive(poly, degree):
    """Primitivity test of a GF(2) polynomial given as an int bit mask."""
    if not (poly >> degree) & 1 or not poly & 1:
        return False
    period = (1 << degree) - 1
    if _gf2_powmod(period, poly, degree) != 1:
        return False
    return all(_gf2_powmod(period // q, poly, degree) != 1 for q in _prime_factors(period))


@lru_cache(maxsize=None)
def primitive_polynomials(degree, count=8):
    """First ``count`` primitive polynomials of ``degree`` in increasing order."""
    found = []
    for poly in range((1 << degree) | 1, 1 << (degree + 1), 2):
        if is_primitive(poly, degree):
            found.append(poly)
            if len(found) == count:
                break
    return tuple(found)


def generate_mls(order, seed=0, min_order=2, max_order=20):
    """Maximum-length sequence of length 2**order - 1 as +-1 samples.

    The seed selects one of several primitive feedback polynomials, so
    different seeds give different (not merely shifted) sequences.
    """
    if int(order) != order or not min_order <= order <= max_order:
        raise ValueError(f"MLS order must be an integer in [{min_order}, {max_order}]")
    order = int(order)
    polys = primitive_polynomials(order)
    poly = polys[np.random.default_rng(seed).integers(len(polys))]
    toggle = poly >> 1
    n = (1 << order) - 1
    state = 1
    bits = np.empty(n, dtype=np.int8)
    for i in range(n):
        lsb = state & 1
        bits[i] = lsb
        state >>= 1
        if lsb:
            state ^= toggle
    return MLSSignal(order, 1.0 - 2.0 * bits, poly)


def circular_autocorrelation(x):
    x = np.asarray(x, dtype=float)
    spec = np.fft.rfft(x)
    return np.fft.irfft(spec * np.conj(spec), n=len(x))


# --- RIR extraction ----------------------------------------------------------


def _gram_matrix(xpad, start, window, rir_len):
    """X^T X for the convolution matrix of one analysis window.

    ``xpad`` is the excitation left-padded by ``rir_len - 1`` zeros and
    ``start`` indexes the padded signal. Column k of X is x delayed by k.
    """
    seg = xpad[start : start + window + rir_len - 1]
    top = rir_len - 1
    base = seg[top:]
    gram = np.empty((rir_len, rir_len))
    for d in range(rir_len):
        m = rir_len - d
        k = np.arange(1, m)
        # moving one lag down the diagonal adds one sample at the window start
        # and drops one at its end
        step = seg[top - k] * seg[top - k - d] - seg[top + window - k] * seg[top + window - k - d]
        diag = np.empty(m)
        diag[0] = base @ seg[top - d : top - d + window]
        diag[1:] = diag[0] + np.cumsum(step)
        idx = np.arange(m)
        gram[idx, idx + d] = diag
        gram[idx + d, idx] = diag
    return gram


def extract_rirs_sliding(
    excitation, recording, rir_len, hop=4800, window=24000, fs=FS, ridge=1e-8
):
    """Least-squares FIR identification over sliding analysis windows.

    For each window start ``0, hop, 2*hop, ...`` the per-channel filter h
    minimizing ||y - X h|| is solved through regularized normal equations,
    with X the convolution matrix of the excitation (history included).
    Windows whose excitation is silent come back zero with the
    ``"rank_deficient"`` flag.
    """
    x = np.asarray(excitation, dtype=float)
    y = np.atleast_2d(np.asarray(recording, dtype=float))
    n = min(len(x), y.shape[1])
    if n < window:
        raise ValueError("recording shorter than one analysis window")
    if rir_len > window // 2:
        raise ValueError("rir_len must not exceed half the analysis window")
    xpad = np.concatenate([np.zeros(rir_len - 1), x[:n]])
    rirs = []
    for start in range(0, n - window + 1, hop):
        gram = _gram_matrix(xpad, start, window, rir_len)
        trace = np.trace(gram)
        if trace <= 1e-12 * rir_len:
            rirs.append(Rir(np.zeros((y.shape[0], rir_len)), fs, frozenset({"rank_deficient"})))
            continue
        gram[np.diag_indices(rir_len)] += ridge * trace / rir_len
        seg = xpad[start : start + window + rir_len - 1]
        ywin = y[:, start : start + window]
        # X^T y: correlation of each channel with lagged excitation
        rhs = np.stack([signal.correlate(seg, ych, mode="valid")[::-1] for ych in ywin])
        try:
            factor = linalg.cho_factor(gram, check_finite=False)
            h = linalg.cho_solve(factor, rhs.T, check_finite=False).T
            flags = frozenset()
        except linalg.LinAlgError:
            h = np.zeros((y.shape[0], rir_len))
            flags = frozenset({"rank_deficient"})
        rirs.append(Rir(h, fs, flags))
    return rirs


# --- direct path & MUSIC --------------------------------------------------------


def estimate_direct_delay(rir):
    """Peak of the channel-sum energy envelope, refined by parabolic fit."""
    total = rir.channels.sum(axis=0)
    env = np.abs(signal.hilbert(total)) ** 2
    k = int(np.argmax(env))
    if 0 < k < len(env) - 1:
        a, b, c = env[k - 1], env[k], env[k + 1]
        denom = a - 2 * b + c
        if denom != 0:
            return k + 0.5 * (a - c) / denom
    return float(k)


def window_direct_path(rir, direct_delay=None, win_len=64, taper=0.5):
    """Keep only the samples around the direct path.

    A Tukey window of ``win_len`` samples (flat center, raised-cosine edges)
    is centered on ``direct_delay``; everything outside is zeroed. Windows
    reaching past the RIR bounds are cut and flagged ``"truncated"``.
    """
    if direct_delay is None:
        direct_delay = estimate_direct_delay(rir)
    center = int(round(direct_delay))
    start = center - win_len // 2
    win = signal.windows.tukey(win_len + 1, taper)[:win_len]
    lo, hi = max(start, 0), min(start + win_len, rir.length)
    flags = set(rir.flags)
    if lo != start or hi != start + win_len:
        flags.add("truncated")
        warnings.warn("direct-path window truncated at RIR bounds", stacklevel=2)
    out = np.zeros_like(rir.channels)
    if hi > lo:
        out[:, lo:hi] = rir.channels[:, lo:hi] * win[lo - start : hi - start]
    return Rir(out, rir.fs, frozenset(flags))


@dataclass(frozen=True)
class DoaGrid:
    """Equiangular az x el grid; linear index = i_el * n_az + i_az."""

    step_deg: float = 1.0
    el_limit_deg: float = 60.0

    @property
    def azimuths(self):
        n_az = int(round(360 / self.step_deg))
        return np.radians(-180 + self.step_deg * np.arange(1, n_az + 1))

    @property
    def elevations(self):
        n_el = int(math.floor(2 * self.el_limit_deg / self.step_deg + 1e-9)) + 1
        return np.radians(-self.el_limit_deg + self.step_deg * np.arange(n_el))

    def mesh(self):
        el, az = np.meshgrid(self.elevations, self.azimuths, indexing="ij")
        return az.ravel(), el.ravel()

    def direction(self, index):
        az, el = self.mesh()
        return Direction(az[index], el[index])


@lru_cache(maxsize=4)
def _unit_steering(spec, grid, freqs):
    az, el = grid.mesh()
    steer = steering_matrix(spec, az, el, np.asarray(freqs)).astype(np.complex64)
    steer /= np.linalg.norm(steer, axis=-1, keepdims=True)
    return steer


def music_pseudospectrum(windowed, spec=None, grid_step=1.0, band=(200.0, 8000.0),
                         n_fft=None, el_limit=60.0):
    """Broadband MUSIC pseudospectrum summed over the bins inside ``band``."""
    spec = spec or TetraArraySpec()
    ch = windowed.channels
    if ch.shape[0] != 4:
        raise ValueError("MUSIC expects 4 channels")
    if not np.any(ch):
        raise ValueError("degenerate RIR")
    nz = np.flatnonzero(np.any(ch != 0, axis=0))
    support = ch[:, nz[0] : nz[-1] + 1]
    if n_fft is None:
        n_fft = max(128, 1 << int(math.ceil(math.log2(support.shape[1]))))
    spectrum = np.fft.rfft(support, n=n_fft, axis=1).T
    freqs = np.fft.rfftfreq(n_fft, 1 / windowed.fs)
    energy = np.sum(np.abs(spectrum) ** 2, axis=1)
    use = (freqs >= band[0]) & (freqs <= band[1]) & (energy > 1e-20 * energy.max())
    if use.sum() < 3:
        raise ValueError("fewer than 3 usable frequency bins")
    vecs = spectrum[use]
    cov = vecs[:, :, None] * vecs[:, None, :].conj()
    _, eigvec = np.linalg.eigh(cov)
    noise = eigvec[:, :, :3].astype(np.complex64)
    grid = DoaGrid(grid_step, el_limit)
    steer = _unit_steering(spec, grid, tuple(freqs[use].tolist()))
    total = np.zeros(steer.shape[1])
    for f in range(len(noise)):
        proj = steer[f] @ noise[f].conj()
        denom = np.sum(np.abs(proj) ** 2, axis=1)
        total += 1.0 / np.maximum(denom, 1e-12)
    return total, grid


def music_doa_broadband(windowed, spec=None, grid_step=1.0, band=(200.0, 8000.0),
                        n_fft=None, el_limit=60.0):
    """Single-source DoA of a windowed 4-channel MIC RIR.

    Ties go to the smallest linear grid index.
    """
    total, grid = music_pseudospectrum(windowed, spec, grid_step, band, n_fft, el_limit)
    return grid.direction(int(np.argmax(total)))


# --- reference selection ------------------------------------------------------


def _slerp(a, b, t):
    omega = math.acos(max(-1.0, min(1.0, float(a @ b))))
    if omega < 1e-12:
        return a
    return (math.sin((1 - t) * omega) * a + math.sin(t * omega) * b) / math.sin(omega)


def resample_track(track, spacing_deg):
    """Points every ``spacing_deg`` of arc along the planned polyline."""
    vecs = [d.unit_vector() for d in track]
    if len(vecs) == 1:
        return list(track)
    seg = np.degrees([angular_distance(a, b) for a, b in zip(track, track[1:])])
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.arange(0.0, cum[-1] + 1e-6 * spacing_deg, spacing_deg)
    points = []
    for s in targets:
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        t = 0.0 if seg[i] == 0 else min(1.0, (s - cum[i]) / seg[i])
        v = _slerp(vecs[i], vecs[i + 1], t)
        el = math.asin(max(-1.0, min(1.0, v[2])))
        points.append(Direction(math.atan2(v[1], v[0]), el))
    return points


def select_reference_pairs(doas, planned_track, spacing_deg=1.0, room_id="room",
                           trajectory_id="0"):
    """Pick, every ``spacing_deg`` along the planned track, the closest measurement.

    When the measurements are sparser than the targets the same measurement
    can be picked repeatedly; the result is then marked ``sparse``.
    """
    if not doas or not planned_track:
        raise ValueError("need measurements and a planned track")
    meas_az = np.array([d.azimuth for _, d in doas])
    meas_el = np.array([d.elevation for _, d in doas])
    chosen = []
    for target in resample_track(planned_track, spacing_deg):
        dist = angular_distance_arrays(meas_az, meas_el, target.azimuth, target.elevation)
        chosen.append(int(np.argmin(dist)))
    sparse = len(set(chosen)) < len(chosen)
    return TrajectoryRIRSet(room_id, [doas[i] for i in chosen], spacing_deg,
                            trajectory_id, sparse)


# --- synthetic rooms ------------------------------------------------------------


@dataclass(frozen=True)
class RoomSpec:
    """Synthetic room: reverberation time and direct-to-tail ratio.

    ``drr_db = math.inf`` gives anechoic responses.
    """

    rt60: float = 0.4
    drr_db: float = 6.0
    room_id: str = "room"

    def __post_init__(self):
        if not 0.2 <= self.rt60 <= 2.0:
            raise ValueError("rt60 must lie in [0.2, 2.0] s")
        if math.isnan(self.drr_db) or self.drr_db == -math.inf:
            raise ValueError("drr_db must be a number or +inf")


def diffuse_noise(n_samples, fmt, rng, fs=FS, coherent_below=500.0):
    """Four channels of Gaussian noise approximating a diffuse field.

    MIC channels share a common component below ``coherent_below`` Hz and
    are independent above it. FOA channels are independent, with the
    first-order channels at a third of the W power (SN3D diffuse field).
    """
    own = rng.standard_normal((4, n_samples))
    if fmt == FOA:
        own[1:] /= math.sqrt(3.0)
        return own
    common = rng.standard_normal(n_samples)
    freqs = np.fft.rfftfreq(n_samples, 1 / fs)
    low = freqs < coherent_below
    own_f = np.fft.rfft(own, axis=1)
    own_f[:, low] = np.fft.rfft(common)[low]
    return np.fft.irfft(own_f, n=n_samples, axis=1)


def simulate_trajectory_rirs(room, track, spec=None, seed=0, fmt=MIC, rir_len=None,
                             fs=FS, tail_gap=36, trajectory_id="0", closed=False):
    """Synthetic RIRs along ``track``: anechoic direct part plus a noise tail.

    The direct part occupies the first ``DIRECT_LEN`` samples (direct path at
    ``DIRECT_LEN // 2``). The tail starts ``tail_gap`` samples after the
    direct path and decays by 60 dB over ``room.rt60``; it is scaled so the
    direct/tail energy ratio, summed over channels, equals ``room.drr_db``.
    """
    spec = spec or TetraArraySpec()
    if not track:
        raise ValueError("empty track")
    if rir_len is None:
        rir_len = 1 << int(math.ceil(math.log2(max(room.rt60 * fs, DIRECT_LEN))))
    if rir_len < DIRECT_LEN:
        raise ValueError(f"rir_len must be at least {DIRECT_LEN}")
    rng = np.random.default_rng(seed)
    t0 = DIRECT_LEN // 2 + tail_gap
    t = np.arange(rir_len - t0) / fs
    envelope = 10 ** (-3.0 * t / room.rt60)
    entries = []
    for d in track:
        direct = synthesize_array_ir(d, fmt, DIRECT_LEN, fs, spec)
        rir = np.zeros((4, rir_len))
        rir[:, :DIRECT_LEN] = direct
        if math.isfinite(room.drr_db) and rir_len > t0:
            tail = diffuse_noise(rir_len - t0, fmt, rng, fs) * envelope
            gain = math.sqrt(np.sum(direct**2) / (np.sum(tail**2) * 10 ** (room.drr_db / 10)))
            rir[:, t0:] += gain * tail
        entries.append((Rir(rir, fs), d))
    return TrajectoryRIRSet(room.room_id, entries, track_spacing(track), trajectory_id,
                            closed=closed)


def track_spacing(track):
    if len(track) < 2:
        return 1.0
    steps = [math.degrees(angular_distance(a, b)) for a, b in zip(track, track[1:])]
    return float(np.median(steps))


def circle_track(elevation_deg, spacing_deg=1.0, start_deg=-180.0, span_deg=360.0):
    """Planned circular trajectory at constant elevation, ``spacing_deg`` of arc apart.

    Azimuth steps are widened by 1/cos(elevation) so consecutive points are
    ``spacing_deg`` apart on the sphere.
    """
    el = math.radians(elevation_deg)
    # chord-exact azimuth step for the requested great-circle separation
    c = math.cos(el) ** 2
    cos_step = (math.cos(math.radians(spacing_deg)) - math.sin(el) ** 2) / c
    az_step = math.degrees(math.acos(max(-1.0, min(1.0, cos_step))))
    n = int(math.floor(span_deg / az_step + 1e-9))
    if span_deg < 360:
        n += 1
    return [Direction.from_degrees(start_deg + i * az_step, elevation_deg) for i in range(n)]


def schroeder_decay_db(x, fs=FS):
    """Backward-integrated energy decay curve in dB (0 dB at the start)."""
    energy = np.asarray(x, dtype=float) ** 2
    if energy.ndim > 1:
        energy = energy.sum(axis=0)
    edc = np.cumsum(energy[::-1])[::-1]
    return 10 * np.log10(edc / edc[0] + 1e-300)


def estimate_rt60(x, fs=FS, lo_db=-5.0, hi_db=-25.0):
    """T20-style estimate: line fit of the decay between ``lo_db`` and ``hi_db``."""
    edc = schroeder_decay_db(x, fs)
    idx = np.flatnonzero((edc <= lo_db) & (edc >= hi_db))
    if len(idx) < 2:
        raise ValueError("decay range not reached")
    slope, _ = np.polyfit(idx / fs, edc[idx], 1)
    return -60.0 / slope


# --- moving-source rendering for the measurement chain -------------------------


def render_moving_excitation(excitation, trajectory, speed_deg_s, fs=FS):
    """Record ``excitation`` emitted by a source moving along ``trajectory``.

    Entry k is reached at ``k * spacing / speed`` seconds; between entries
    the output crossfades linearly between the two neighbouring LTI renders.
    The source stops at the last entry.
    """
    x = np.asarray(excitation, dtype=float)
    n = len(x)
    rirs = [r.channels for r, _ in trajectory.entries]
    times = np.arange(len(rirs)) * trajectory.spacing / speed_deg_s
    pos = np.arange(n) / fs
    weights = np.clip(np.interp(pos, times, np.arange(len(rirs))), 0, len(rirs) - 1)
    out = np.zeros((rirs[0].shape[0], n))
    for k, h in enumerate(rirs):
        w = np.clip(1.0 - np.abs(weights - k), 0.0, 1.0)
        active = np.flatnonzero(w > 0)
        if not len(active):
            continue
        lo, hi = active[0], active[-1] + 1
        start = max(0, lo - h.shape[1] + 1)
        seg = x[start:hi] * w[start:hi]
        y = signal.fftconvolve(seg[None, :], h, axes=1)[:, : hi - start]
        out[:, start:hi] += y
    return out


def reference_track_from_recording(excitation, recording, planned_track, spec=None,
                                   rir_len=512, hop=4800, window=24000, fs=FS,
                                   grid_step=1.0, spacing_deg=1.0, room_id="room",
                                   trajectory_id="0"):
    """Full acoustic reference pipeline from one moving-source recording."""
    pairs = []
    for rir in extract_rirs_sliding(excitation, recording, rir_len, hop, window, fs):
        if not rir.ok:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            windowed = window_direct_path(rir)
        pairs.append((rir, music_doa_broadband(windowed, spec, grid_step)))
    return select_reference_pairs(pairs, planned_track, spacing_deg, room_id, trajectory_id)
