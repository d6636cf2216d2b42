"""Directional responses of the FOA and tetrahedral (MIC) formats.

FOA channels are ordered W, Y, Z, X with SN3D normalization and are treated
as frequency independent. The MIC format is four omnidirectional capsules
flush-mounted on a rigid sphere; its response is the classic rigid-baffle
series truncated at order 30.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

SPEED_OF_SOUND = 343.0
ARRAY_RADIUS = 0.042
MAX_ORDER = 30

FOA = "foa"
MIC = "mic"
FORMATS = (FOA, MIC)


def wrap_azimuth(az):
    """Map azimuth(s) in radians into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(az, dtype=float), 2 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Direction:
    """Azimuth/elevation pair in radians.

    Azimuth is wrapped into (-pi, pi]; an elevation outside [-pi/2, pi/2]
    raises ``ValueError``.
    """

    azimuth: float
    elevation: float

    def __post_init__(self):
        el = float(self.elevation)
        if not math.isfinite(el) or abs(el) > math.pi / 2:
            raise ValueError(f"elevation {el!r} outside [-pi/2, pi/2]")
        az = float(self.azimuth)
        if not math.isfinite(az):
            raise ValueError(f"azimuth {az!r} is not finite")
        object.__setattr__(self, "azimuth", wrap_azimuth(az))
        object.__setattr__(self, "elevation", el)

    @classmethod
    def from_degrees(cls, azimuth_deg, elevation_deg):
        return cls(math.radians(azimuth_deg), math.radians(elevation_deg))

    @property
    def azimuth_deg(self):
        return math.degrees(self.azimuth)

    @property
    def elevation_deg(self):
        return math.degrees(self.elevation)

    def unit_vector(self):
        return unit_vectors(self.azimuth, self.elevation)


@dataclass(frozen=True)
class MicPlacement:
    direction: Direction
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")


def _default_mics():
    positions = [(45, 35), (-45, -35), (135, -35), (-135, 35)]
    return tuple(
        MicPlacement(Direction.from_degrees(az, el), ARRAY_RADIUS) for az, el in positions
    )


@dataclass(frozen=True)
class TetraArraySpec:
    """Tetrahedral capsule subset of a rigid spherical array."""

    mics: tuple = field(default_factory=_default_mics)
    radius: float = ARRAY_RADIUS
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        object.__setattr__(self, "mics", tuple(self.mics))
        if len(self.mics) != 4:
            raise ValueError("a tetrahedral array has exactly 4 capsules")
        if any(not math.isclose(m.radius, self.radius) for m in self.mics):
            raise ValueError("all capsules must sit on the sphere radius")
        if not self.speed_of_sound > 0:
            raise ValueError("speed of sound must be positive")

    def mic_vectors(self):
        """(4, 3) unit vectors of the capsule positions."""
        return np.stack([m.direction.unit_vector() for m in self.mics])


def unit_vectors(azimuth, elevation):
    """Cartesian unit vectors (..., 3) for arrays of azimuth and elevation."""
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    return np.stack(
        [np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)], axis=-1
    )


def direction_from_vector(vec):
    x, y, z = (float(v) for v in vec)
    norm = math.sqrt(x * x + y * y + z * z)
    if norm == 0:
        raise ValueError("cannot take the direction of a zero vector")
    return Direction(math.atan2(y, x), math.asin(max(-1.0, min(1.0, z / norm))))


def foa_response(direction):
    """SN3D first-order gains [W, Y, Z, X] for a plane wave from ``direction``."""
    az, el = direction.azimuth, direction.elevation
    return np.array(
        [1.0, math.sin(az) * math.cos(el), math.sin(el), math.cos(az) * math.cos(el)]
    )


def foa_gains(azimuth, elevation):
    """Vectorized :func:`foa_response`; returns (..., 4)."""
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    return np.stack(
        [np.ones_like(az), np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)],
        axis=-1,
    )


def legendre_p(n, x):
    """Unnormalized Legendre polynomial P_n(x) by three-term recurrence."""
    if n < 0 or int(n) != n:
        raise ValueError("degree must be a non-negative integer")
    x_arr = np.asarray(x, dtype=float)
    if np.any(np.abs(x_arr) > 1):
        raise ValueError("x must lie in [-1, 1]")
    table = legendre_table(int(n), x_arr)
    out = table[int(n)]
    return float(out) if out.ndim == 0 else out


def legendre_table(n_max, x):
    """P_0..P_{n_max} evaluated at ``x``; shape (n_max + 1, *x.shape)."""
    x = np.asarray(x, dtype=float)
    table = np.empty((n_max + 1,) + x.shape)
    table[0] = 1.0
    if n_max >= 1:
        table[1] = x
    for n in range(1, n_max):
        table[n + 1] = ((2 * n + 1) * x * table[n] - n * table[n - 1]) / (n + 1)
    return table


def sph_hankel2(n, x):
    """Spherical Hankel function of the second kind, h_n^(2) = j_n - i y_n."""
    return special.spherical_jn(n, x) - 1j * special.spherical_yn(n, x)


def sph_hankel2_deriv(n, x):
    """Derivative of h_n^(2) with respect to its argument.

    Uses h_n' = h_{n-1} - (n + 1)/x h_n for n >= 1 and h_0' = -h_1.
    """
    if n < 0 or int(n) != n:
        raise ValueError("order must be a non-negative integer")
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0):
        raise ValueError("argument must be positive (h_n is singular at 0)")
    n = int(n)
    if n == 0:
        out = -sph_hankel2(1, x_arr)
    else:
        out = sph_hankel2(n - 1, x_arr) - (n + 1) / x_arr * sph_hankel2(n, x_arr)
    return complex(out) if out.ndim == 0 else out


@lru_cache(maxsize=64)
def _series_coefficients(kr_tuple):
    kr = np.asarray(kr_tuple, dtype=float)
    orders = np.arange(MAX_ORDER + 1)
    hp = np.stack([np.atleast_1d(sph_hankel2_deriv(n, kr)) for n in orders], axis=-1)
    coef = (1j ** (orders - 1)) * (2 * orders + 1) / hp
    coef /= (kr ** 2)[:, None]
    coef.setflags(write=False)
    return coef


def series_coefficients(kr):
    """Per-order weights i^(n-1) (2n+1) / (h_n'(kr) kr^2), shape (F, 31).

    Cached per frequency grid, since every capsule shares them.
    """
    kr = np.atleast_1d(np.asarray(kr, dtype=float))
    if np.any(kr <= 0):
        raise ValueError("frequency must be positive")
    return _series_coefficients(tuple(kr.tolist()))


def rigid_sphere_gains(spec, cos_gamma, freqs):
    """Rigid-sphere pressure for arbitrary cos(gamma) arrays.

    Returns an array of shape (F, *cos_gamma.shape).
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if np.any(freqs <= 0):
        raise ValueError("frequency must be positive")
    cos_gamma = np.clip(np.asarray(cos_gamma, dtype=float), -1.0, 1.0)
    kr = 2 * np.pi * freqs * spec.radius / spec.speed_of_sound
    coef = series_coefficients(kr)
    leg = legendre_table(MAX_ORDER, cos_gamma).reshape(MAX_ORDER + 1, -1)
    out = coef @ leg
    return out.reshape((len(freqs),) + cos_gamma.shape)


def rigid_sphere_response(spec, mic_index, src, freq):
    """Complex pressure at capsule ``mic_index`` for a unit plane wave from ``src``."""
    if not 0 < freq <= 20000:
        raise ValueError("frequency must lie in (0, 20000] Hz")
    mic = spec.mics[mic_index].direction.unit_vector()
    cos_gamma = float(np.dot(mic, src.unit_vector()))
    return complex(rigid_sphere_gains(spec, cos_gamma, [freq])[0])


def steering_matrix(spec, azimuth, elevation, freqs):
    """MIC responses for many directions: shape (F, D, 4)."""
    u = unit_vectors(np.ravel(azimuth), np.ravel(elevation))
    cos_gamma = u @ spec.mic_vectors().T
    return rigid_sphere_gains(spec, cos_gamma, freqs)


def angular_distance(a, b):
    """Great-circle angle between two directions, in radians."""
    return float(
        angular_distance_arrays(a.azimuth, a.elevation, b.azimuth, b.elevation)
    )


def angular_distance_arrays(az1, el1, az2, el2):
    """Vectorized great-circle angle.

    atan2(|u1 x u2|, u1 . u2) rather than arccos: symmetric, exactly 0 for
    equal inputs and accurate near 0 and pi.
    """
    u1, u2 = unit_vectors(az1, el1), unit_vectors(az2, el2)
    u1, u2 = np.broadcast_arrays(u1, u2)
    cross = np.linalg.norm(np.cross(u1, u2), axis=-1)
    return np.arctan2(cross, np.sum(u1 * u2, axis=-1))


def mic_spectrum(src, n_fft, fs, spec):
    """Half-spectrum (n_fft/2 + 1, 4) of the MIC response on the FFT grid.

    Bin 0 takes the magnitude of bin 1 because the series diverges at DC.
    The Nyquist bin is reduced to its magnitude so the spectrum stays
    Hermitian.
    """
    freqs = np.arange(1, n_fft // 2 + 1) * fs / n_fft
    u = src.unit_vector()
    cos_gamma = spec.mic_vectors() @ u
    gains = rigid_sphere_gains(spec, cos_gamma, freqs)
    spectrum = np.empty((n_fft // 2 + 1, 4), dtype=complex)
    spectrum[1:] = gains
    spectrum[0] = np.abs(gains[0])
    spectrum[-1] = np.abs(gains[-1])
    return spectrum


def synthesize_array_ir(src, fmt, length, fs, spec=None):
    """Anechoic 4-channel impulse response for a source at ``src``.

    Both formats are centered on sample ``length // 2`` so that FOA and MIC
    renders of the same scene stay time aligned.
    """
    spec = spec or TetraArraySpec()
    if fs <= 0:
        raise ValueError("fs must be positive")
    if length < 256 or length & (length - 1):
        raise ValueError("length must be a power of two >= 256")
    center = length // 2
    if fmt == FOA:
        ir = np.zeros((4, length))
        ir[:, center] = foa_response(src)
        return ir
    if fmt != MIC:
        raise ValueError(f"unknown format {fmt!r}")
    spectrum = mic_spectrum(src, length, fs, spec)
    k = np.arange(length // 2 + 1)
    # centered linear phase; exp(-i*pi*k) is real at DC and Nyquist
    delay = np.exp(-2j * np.pi * k * center / length)
    return np.fft.irfft(spectrum * delay[:, None], n=length, axis=0).T
