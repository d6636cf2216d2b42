"""Baseline input features: log-mel spectra plus FOA intensity or MIC GCC-PHAT.

Shapes per scene: FOA ``(7, T, 64)`` = 4 log-mel + 3 intensity channels,
MIC ``(10, T, 64)`` = 6 GCC-PHAT pairs + 4 log-mel channels.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .array_models import (
    FOA,
    MIC,
    Direction,
    TetraArraySpec,
    direction_from_vector,
    mic_spectrum,
    unit_vectors,
)

FS = 24000
FFT_SIZE = 1024
WIN_LEN = 960
HOP = 480
N_MELS = 64
EPS = 1e-10
N_LAGS = 64
PAIRS = tuple(itertools.combinations(range(4), 2))


@dataclass
class StftTensor:
    """Complex STFT of shape (channels, frames, bins)."""

    data: np.ndarray
    fs: int = FS
    hop: int = HOP
    fft_size: int = FFT_SIZE
    fmt: str | None = None

    @property
    def n_frames(self):
        return self.data.shape[1]


@dataclass
class FeatureTensor:
    data: np.ndarray
    fmt: str

    @property
    def shape(self):
        return self.data.shape


def analysis_window(win_len=WIN_LEN):
    return signal.get_window("hann", win_len)


def n_stft_frames(n_samples, win_len=WIN_LEN, hop=HOP):
    return (n_samples - win_len) // hop + 1


def compute_stft(audio, fs=FS, fft_size=FFT_SIZE, win_len=WIN_LEN, hop=HOP, fmt=None):
    """Hann-windowed STFT, each 960-sample frame zero-padded to 1024 points.

    Frames are taken only where the window fits entirely inside the signal.
    """
    if fs != FS:
        raise ValueError(f"features expect fs = {FS}")
    audio = np.atleast_2d(np.asarray(audio, dtype=float))
    if audio.shape[1] < win_len:
        raise ValueError("audio shorter than one analysis window")
    frames = np.lib.stride_tricks.sliding_window_view(audio, win_len, axis=1)[:, ::hop]
    spec = np.fft.rfft(frames * analysis_window(win_len), n=fft_size, axis=-1)
    return StftTensor(spec, fs, hop, fft_size, fmt)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_mels=N_MELS, fft_size=FFT_SIZE, fs=FS, fmin=0.0, fmax=12000.0):
    """Peak-normalized triangular mel filters, shape (n_mels, fft_size/2 + 1)."""
    freqs = np.fft.rfftfreq(fft_size, 1 / fs)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (centre - lower)
    falling = (upper - freqs) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


def logmel(stft, fb=None):
    """log(mel energies + 1e-10) per channel: (channels, T, 64)."""
    fb = mel_filterbank() if fb is None else fb
    power = np.abs(stft.data) ** 2
    return np.log(power @ fb.T + EPS)


def foa_intensity(stft, fb=None):
    """Mel-band active intensity (x, y, z), normalized by energy density.

    Per bin I = Re{conj(W) [X, Y, Z]} and E = (|W|^2 + |X|^2 + |Y|^2 + |Z|^2)/2;
    both are mel-aggregated before dividing, so |I|/E <= 1.
    """
    if stft.fmt not in (None, FOA):
        raise ValueError("intensity vectors need FOA input")
    fb = mel_filterbank() if fb is None else fb
    w, y, z, x = stft.data
    wc = np.conj(w)
    intensity = np.stack([np.real(wc * x), np.real(wc * y), np.real(wc * z)])
    energy = 0.5 * np.sum(np.abs(stft.data) ** 2, axis=0)
    return (intensity @ fb.T) / (energy @ fb.T + EPS)


def gcc_phat_features(stft, n_lags=N_LAGS, mode="lags", fb=None):
    """GCC-PHAT for the 6 channel pairs: (6, T, 64).

    ``mode="lags"`` keeps lags -31..+32 of the PHAT cross-correlation, a
    positive lag meaning the second channel of the pair arrives later.
    ``mode="melbands"`` instead reports, per mel band, the band-averaged
    cosine of the inter-channel phase difference.
    """
    if stft.fmt not in (None, MIC):
        raise ValueError("GCC-PHAT features need MIC input")
    out = []
    for i, j in PAIRS:
        cross = np.conj(stft.data[i]) * stft.data[j]
        phat = cross / (np.abs(cross) + EPS)
        if mode == "lags":
            cc = np.fft.irfft(phat, n=stft.fft_size, axis=-1)
            half = n_lags // 2
            out.append(np.concatenate([cc[:, -(half - 1) :], cc[:, : half + 1]], axis=-1))
        elif mode == "melbands":
            fb = mel_filterbank() if fb is None else fb
            out.append((np.real(phat) @ fb.T) / fb.sum(axis=1))
        else:
            raise ValueError(f"unknown GCC mode {mode!r}")
    return np.stack(out)


def gcc_lags(n_lags=N_LAGS):
    half = n_lags // 2
    return np.arange(-(half - 1), half + 1)


def stack_features(logmel_part, spatial, fmt):
    """Concatenate along the channel axis in the baseline order."""
    if logmel_part.shape[1] != spatial.shape[1]:
        raise ValueError("log-mel and spatial features differ in frame count")
    if fmt == FOA:
        data = np.concatenate([logmel_part, spatial])
    elif fmt == MIC:
        data = np.concatenate([spatial, logmel_part])
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return FeatureTensor(data, fmt)


def extract_features(audio, fmt, fs=FS, gcc_mode="lags"):
    """Audio (4, N) to the stacked feature tensor for ``fmt``."""
    stft = compute_stft(audio, fs, fmt=fmt)
    fb = mel_filterbank()
    lm = logmel(stft, fb)
    if fmt == FOA:
        spatial = foa_intensity(stft, fb)
    elif fmt == MIC:
        spatial = gcc_phat_features(stft, mode=gcc_mode, fb=fb)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return stack_features(lm, spatial, fmt)


@dataclass
class FeatureStats:
    """Per (channel, band) mean and standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, tensors):
        total = None
        sq = None
        count = 0
        for t in tensors:
            d = t.data if isinstance(t, FeatureTensor) else np.asarray(t)
            s, s2 = d.sum(axis=1), (d**2).sum(axis=1)
            total = s if total is None else total + s
            sq = s2 if sq is None else sq + s2
            count += d.shape[1]
        if not count:
            raise ValueError("no frames to fit statistics on")
        mean = total / count
        var = np.maximum(sq / count - mean**2, 0.0)
        return cls(mean, np.sqrt(var))

    def apply(self, tensor):
        std = np.where(self.std > 0, self.std, 1.0)
        data = (tensor.data - self.mean[:, None, :]) / std[:, None, :]
        return FeatureTensor(data, tensor.fmt)


# --- DoA cues implied by the spatial features -----------------------------------


def intensity_doa(intensity, weights=None):
    """Direction of the (optionally weighted) mean intensity vector."""
    vec = intensity if weights is None else intensity * weights
    return direction_from_vector(vec.reshape(3, -1).sum(axis=1))


def gcc_templates(directions, spec=None, fs=FS, fft_size=FFT_SIZE, n_lags=N_LAGS):
    """Model GCC-PHAT lag vectors (D, 6, n_lags) of plane waves on the MIC array."""
    spec = spec or TetraArraySpec()
    out = np.empty((len(directions), len(PAIRS), n_lags))
    half = n_lags // 2
    for k, d in enumerate(directions):
        h = mic_spectrum(d, fft_size, fs, spec).T
        for p, (i, j) in enumerate(PAIRS):
            cross = np.conj(h[i]) * h[j]
            cc = np.fft.irfft(cross / (np.abs(cross) + EPS), n=fft_size)
            out[k, p] = np.concatenate([cc[-(half - 1) :], cc[: half + 1]])
    return out


def _sphere_grid(step_deg, centre=None, radius_deg=None):
    dirs = []
    for el in np.arange(-90 + step_deg, 90, step_deg):
        for az in np.arange(-180 + step_deg, 180 + 1e-9, step_deg):
            dirs.append(Direction.from_degrees(az, el))
    if centre is not None:
        cv = centre.unit_vector()
        u = unit_vectors([d.azimuth for d in dirs], [d.elevation for d in dirs])
        keep = u @ cv >= math.cos(math.radians(radius_deg))
        dirs = [d for d, k in zip(dirs, keep) if k]
    return dirs


def gcc_doa(gcc, spec=None, coarse_step=5.0, fine_step=1.0):
    """DoA whose modelled GCC-PHAT best correlates with the observed features.

    ``gcc`` is (6, T, n_lags); the search is coarse-to-fine over the sphere.
    """
    observed = gcc.mean(axis=1)
    best = None
    for step, centre, radius in ((coarse_step, None, None), (fine_step, "best", 2 * coarse_step)):
        grid = _sphere_grid(step, best if centre else None, radius)
        scores = np.einsum("dpl,pl->d", gcc_templates(grid, spec, n_lags=gcc.shape[-1]), observed)
        best = grid[int(np.argmax(scores))]
    return best
