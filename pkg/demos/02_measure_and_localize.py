"""Measure a simulated room with an MLS, then localize the source.

The "true" room is a simulated RIR. Playing an MLS through it and solving
the sliding least-squares problem recovers the RIR, and MUSIC on its direct
part recovers the direction.
"""
import math
import warnings

import numpy as np
from scipy.signal import fftconvolve

from seldkit.array_models import Direction, angular_distance
from seldkit.rir_toolkit import (
    FS,
    RoomSpec,
    extract_rirs_sliding,
    generate_mls,
    music_doa_broadband,
    simulate_trajectory_rirs,
    window_direct_path,
)

truth = Direction.from_degrees(-70, 15)
room = RoomSpec(rt60=0.4, drr_db=4.0)
rir = simulate_trajectory_rirs(room, [truth], seed=1, rir_len=2048).entries[0][0]

mls = generate_mls(15, seed=0).samples
x = np.tile(mls, 2)[: 2 * FS]
y = fftconvolve(x[None, :], rir.channels, axes=1)[:, : len(x)]
y += 1e-3 * np.random.default_rng(0).standard_normal(y.shape)

measured = extract_rirs_sliding(x, y, 2048)[0]
err = np.linalg.norm(measured.channels - rir.channels) / np.linalg.norm(rir.channels)
print(f"{len(extract_rirs_sliding(x, y, 2048))} windows, relative RIR error {err:.2e}")

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    direct = window_direct_path(measured)
est = music_doa_broadband(direct)
print(f"true  az {truth.azimuth_deg:7.2f} el {truth.elevation_deg:6.2f}")
print(f"MUSIC az {est.azimuth_deg:7.2f} el {est.elevation_deg:6.2f}"
      f"  (off by {math.degrees(angular_distance(est, truth)):.2f} deg)")
