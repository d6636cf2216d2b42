"""On-disk formats: WAV audio, RIR set directories, feature tensors, manifests.

Feature tensors are stored as one JSON header line followed by the raw
little-endian array bytes::

    {"shape": [7, 2999, 64], "dtype": "<f4", "format": "foa", "stats": "..."}\\n
    <raw bytes>
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .array_models import Direction
from .rir_toolkit import Rir, TrajectoryRIRSet, track_spacing

WAV_DTYPES = ("float32", "int16")


@contextmanager
def atomic_path(path):
    """Yield a temporary path in the target directory; rename on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_wav(path, audio, fs, dtype="float32"):
    """Write (channels, samples) audio; int16 output is clipped to full scale."""
    audio = np.atleast_2d(np.asarray(audio, dtype=float))
    if dtype == "float32":
        data = audio.T.astype("<f4")
    elif dtype == "int16":
        data = np.round(np.clip(audio.T, -1.0, 32767 / 32768) * 32768).astype("<i2")
    else:
        raise ValueError(f"wav dtype must be one of {WAV_DTYPES}")
    with atomic_path(path) as tmp:
        wavfile.write(tmp, int(fs), data)


def read_wav(path):
    """(fs, audio) with audio as float (channels, samples)."""
    fs, data = wavfile.read(path)
    if data.dtype == np.int16:
        audio = data.astype(float) / 32768.0
    else:
        audio = data.astype(float)
    return fs, np.atleast_2d(audio.T) if audio.ndim > 1 else audio[None, :]


# --- RIR sets ---------------------------------------------------------------------


def save_rir_set(root, traj, dtype="float32"):
    """Write ``root/<room_id>/<trajectory_id>/NNNN.wav`` plus ``index.csv``."""
    folder = Path(root) / str(traj.room_id) / str(traj.trajectory_id)
    folder.mkdir(parents=True, exist_ok=True)
    written = []
    for k, (rir, _) in enumerate(traj.entries):
        path = folder / f"{k:04d}.wav"
        write_wav(path, rir.channels, rir.fs, dtype)
        written.append(path)
    index = folder / "index.csv"
    with atomic_path(index) as tmp, open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("index", "azimuth_deg", "elevation_deg"))
        for k, (_, d) in enumerate(traj.entries):
            writer.writerow((k, repr(d.azimuth_deg), repr(d.elevation_deg)))
    written.append(index)
    return written


def load_rir_set(folder, closed=False):
    folder = Path(folder)
    entries = []
    with open(folder / "index.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            k = int(row["index"])
            fs, audio = read_wav(folder / f"{k:04d}.wav")
            d = Direction(math.radians(float(row["azimuth_deg"])),
                          math.radians(float(row["elevation_deg"])))
            entries.append((Rir(audio, fs), d))
    if not entries:
        raise ValueError(f"no RIRs listed in {folder / 'index.csv'}")
    return TrajectoryRIRSet(folder.parent.name, entries,
                            track_spacing([d for _, d in entries]), folder.name, closed=closed)


# --- tensors --------------------------------------------------------------------


def save_tensor(path, array, **meta):
    array = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = {"shape": list(array.shape), "dtype": "<f4", **meta}
    with atomic_path(path) as tmp, open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(array.tobytes(order="C"))


def load_tensor(path):
    """(array, header) from a file written by :func:`save_tensor`."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    array = np.frombuffer(raw, dtype=np.dtype(header["dtype"])).reshape(header["shape"])
    return array, header


def save_feature_file(path, tensor, stats_path=None):
    save_tensor(path, tensor.data, format=tensor.fmt, stats=stats_path)


def load_feature_file(path):
    from .features import FeatureTensor

    array, header = load_tensor(path)
    return FeatureTensor(array, header.get("format")), header


def save_stats(path, stats, fmt):
    save_tensor(path, np.stack([stats.mean, stats.std]), format=fmt, kind="stats")


def load_stats(path):
    from .features import FeatureStats

    array, _ = load_tensor(path)
    return FeatureStats(array[0].astype(float), array[1].astype(float))


# --- manifests ---------------------------------------------------------------------


def sha256_file(path, chunk=1 << 20):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(chunk), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(root, paths, name="manifest.tsv"):
    """Tab-separated ``relative_path, sha256, bytes`` rows, sorted by path."""
    root = Path(root)
    rows = sorted(
        (Path(p).resolve().relative_to(root.resolve()).as_posix(), sha256_file(p),
         os.path.getsize(p))
        for p in paths
    )
    with atomic_path(root / name) as tmp, open(tmp, "w") as fh:
        for rel, digest, size in rows:
            fh.write(f"{rel}\t{digest}\t{size}\n")
    return root / name


def read_manifest(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            rel, digest, size = line.rstrip("\n").split("\t")
            rows.append((rel, digest, int(size)))
    return rows
