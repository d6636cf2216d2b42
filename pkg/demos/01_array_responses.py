"""Directional gains of the two array formats.

Prints FOA gains for a few directions, then the rigid-baffle pressure
build-up on the capsule facing the source as frequency rises, next to a
capsule 109 degrees away.
"""
import numpy as np

from seldkit.array_models import Direction, TetraArraySpec, foa_response, rigid_sphere_response

for az, el in [(0, 0), (90, 0), (45, 30), (180, -60)]:
    g = foa_response(Direction.from_degrees(az, el))
    print(f"FOA az {az:4d} el {el:4d}  W Y Z X = {np.round(g, 3)}")

spec = TetraArraySpec()
src = Direction.from_degrees(45, 35)  # straight at capsule 0
print("\nfreq [Hz]  front capsule [dB]  rear capsule [dB]")
for f in (100, 500, 1000, 4000, 8000, 16000):
    front = 20 * np.log10(abs(rigid_sphere_response(spec, 0, src, f)))
    rear = 20 * np.log10(abs(rigid_sphere_response(spec, 1, src, f)))
    print(f"{f:9d}  {front:18.2f}  {rear:16.2f}")
