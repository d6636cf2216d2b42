"""Frame-level SELD labels and their CSV representation.

One row per active event per 100 ms frame::

    frame_index,class_id,track_id,azimuth_deg,elevation_deg

Angles are written as rounded integers, azimuth in (-180, 180].
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

from .array_models import Direction

HEADER = ("frame_index", "class_id", "track_id", "azimuth_deg", "elevation_deg")
FRAME_SECONDS = 0.1
FRAMES_PER_SEGMENT = 10


class SeldEvent(NamedTuple):
    class_id: int
    direction: Direction
    track_id: int = 0


@dataclass(frozen=True)
class SeldFrame:
    events: tuple = ()

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


class LabelFormatError(ValueError):
    pass


def _rounded_degrees(direction):
    az = int(round(direction.azimuth_deg))
    if az <= -180:
        az += 360
    return az, int(round(direction.elevation_deg))


def quantize_frames(frames):
    """Frames as they read back from a label file (integer degrees)."""
    out = []
    for frame in frames:
        events = []
        for ev in frame:
            az, el = _rounded_degrees(ev.direction)
            events.append(SeldEvent(int(ev.class_id), Direction.from_degrees(az, el), int(ev.track_id)))
        out.append(SeldFrame(tuple(events)))
    return out


def write_label_file(frames, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for index, frame in enumerate(frames):
            for ev in sorted(frame, key=lambda e: (e.track_id, e.class_id)):
                az, el = _rounded_degrees(ev.direction)
                writer.writerow((index, int(ev.class_id), int(ev.track_id), az, el))


def read_label_file(path, n_frames=None):
    """Parse a label CSV into a list of frames (angles in radians).

    Frames without rows are empty. With ``n_frames`` the list is padded to
    that length; rows beyond it are an error.
    """
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and row and row[0].strip() == HEADER[0]:
                continue
            if not row or not "".join(row).strip():
                continue
            if len(row) != 5:
                raise LabelFormatError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                frame, cls, track = (int(v) for v in row[:3])
                az, el = float(row[3]), float(row[4])
            except ValueError as exc:
                raise LabelFormatError(f"{path}:{lineno}: {exc}") from None
            if frame < 0 or cls < 0:
                raise LabelFormatError(f"{path}:{lineno}: negative frame or class index")
            if not -90 <= el <= 90:
                raise LabelFormatError(f"{path}:{lineno}: elevation {el} outside [-90, 90]")
            if not -180 < az <= 180:
                raise LabelFormatError(f"{path}:{lineno}: azimuth {az} outside (-180, 180]")
            if n_frames is not None and frame >= n_frames:
                raise LabelFormatError(f"{path}:{lineno}: frame {frame} beyond {n_frames} frames")
            ev = SeldEvent(cls, Direction(math.radians(az), math.radians(el)), track)
            rows.setdefault(frame, []).append(ev)
    total = n_frames if n_frames is not None else (max(rows) + 1 if rows else 0)
    return [SeldFrame(tuple(rows.get(i, ()))) for i in range(total)]


def max_polyphony(frames):
    return max((len(f) for f in frames), default=0)
