"""Feature tensors and the direction cues hidden inside them.

A single static source is rendered in both formats. The FOA intensity
channels and the MIC GCC channels each point back at it.
"""
import numpy as np
from scipy.signal import fftconvolve

from seldkit.array_models import Direction, synthesize_array_ir
from seldkit.features import (
    FS,
    compute_stft,
    extract_features,
    foa_intensity,
    gcc_doa,
    gcc_phat_features,
    intensity_doa,
)

src = Direction.from_degrees(120, -25)
s = np.random.default_rng(0).standard_normal(3 * FS)
audio = {fmt: fftconvolve(s[None, :], synthesize_array_ir(src, fmt, 512, FS), axes=1)
         for fmt in ("foa", "mic")}

for fmt, x in audio.items():
    print(f"{fmt}: feature tensor {extract_features(x, fmt).shape}")

iv = intensity_doa(foa_intensity(compute_stft(audio["foa"], fmt="foa")))
gc = gcc_doa(gcc_phat_features(compute_stft(audio["mic"], fmt="mic")))
print(f"source     az {src.azimuth_deg:7.1f} el {src.elevation_deg:6.1f}")
print(f"intensity  az {iv.azimuth_deg:7.1f} el {iv.elevation_deg:6.1f}")
print(f"GCC-PHAT   az {gc.azimuth_deg:7.1f} el {gc.elevation_deg:6.1f}")
