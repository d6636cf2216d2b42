"""SELD scoring: 2019 independent metrics and 2020 joint metrics.

All scores are computed from additive count statistics (:class:`SeldCounts`)
so that several files are combined by summing counts, never by averaging
per-file ratios.

2019: segment ER/F on class activity (1 s segments), frame-wise DoA error
(DE) and frame recall (FR).

2020: location-aware detection ER/F with a 20 degree threshold and
class-aware localization error/recall, all on 1 s segments. Inside a
segment each (class, track) is represented by the medoid of its frame
directions; references and predictions of the same class are paired by a
minimum-total-angle assignment.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from .array_models import Direction, angular_distance_arrays
from .labels import FRAMES_PER_SEGMENT, SeldEvent, SeldFrame, read_label_file

DOA_THRESHOLD_DEG = 20.0


def parse_label_file(path, n_frames=None):
    """Label CSV to frames (see :func:`seldkit.labels.read_label_file`)."""
    return read_label_file(path, n_frames)


# --- assignment -------------------------------------------------------------------


def assign(cost):
    """Minimum-cost one-to-one matching; returns a list of (row, col).

    Up to 3x3 every matching is enumerated, larger problems go to the
    Hungarian solver.
    """
    cost = np.asarray(cost, dtype=float)
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return []
    if max(n_rows, n_cols) <= 3:
        best, best_pairs = math.inf, []
        if n_rows <= n_cols:
            for cols in itertools.permutations(range(n_cols), n_rows):
                total = sum(cost[r, c] for r, c in enumerate(cols))
                if total < best:
                    best, best_pairs = total, list(enumerate(cols))
        else:
            for rows in itertools.permutations(range(n_rows), n_cols):
                total = sum(cost[r, c] for c, r in enumerate(rows))
                if total < best:
                    best, best_pairs = total, sorted((r, c) for c, r in enumerate(rows))
        return best_pairs
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def distance_matrix(a, b):
    """Angular distances in radians between two lists of Directions."""
    if not a or not b:
        return np.zeros((len(a), len(b)))
    az1 = np.array([d.azimuth for d in a])[:, None]
    el1 = np.array([d.elevation for d in a])[:, None]
    az2 = np.array([d.azimuth for d in b])[None, :]
    el2 = np.array([d.elevation for d in b])[None, :]
    return angular_distance_arrays(az1, el1, az2, el2)


def medoid(directions):
    """Member with the smallest summed angular distance to the others."""
    if len(directions) == 1:
        return directions[0]
    dist = distance_matrix(directions, directions)
    return directions[int(np.argmin(dist.sum(axis=1)))]


# --- counts ----------------------------------------------------------------------


@dataclass
class SeldCounts:
    # 2019 segment detection
    tp: int = 0
    fp: int = 0
    fn: int = 0
    subs: int = 0
    dels: int = 0
    ins: int = 0
    n_ref: int = 0
    # 2019 frame-wise localization
    de_sum: float = 0.0
    de_count: int = 0
    fr_good: int = 0
    fr_total: int = 0
    # 2020 location-aware detection
    tp20: int = 0
    fp20: int = 0
    fn20: int = 0
    subs20: int = 0
    dels20: int = 0
    ins20: int = 0
    n_ref20: int = 0
    # 2020 class-aware localization
    le_sum: float = 0.0
    le_count: int = 0
    lr_total: int = 0

    def __add__(self, other):
        return SeldCounts(**{f.name: getattr(self, f.name) + getattr(other, f.name)
                             for f in fields(self)})

    def report(self):
        return MetricsReport(
            er_20=_error_rate(self.subs20, self.dels20, self.ins20, self.n_ref20),
            f_20=_f_score(self.tp20, self.fp20, self.fn20),
            le_cd=math.degrees(self.le_sum / self.le_count) if self.le_count else None,
            lr_cd=self.le_count / self.lr_total if self.lr_total else 1.0,
            er_2019=_error_rate(self.subs, self.dels, self.ins, self.n_ref),
            f_2019=_f_score(self.tp, self.fp, self.fn),
            de_2019=math.degrees(self.de_sum / self.de_count) if self.de_count else None,
            fr_2019=self.fr_good / self.fr_total if self.fr_total else 1.0,
        )


@dataclass(frozen=True)
class MetricsReport:
    """All eight scores. ``le_cd``/``de_2019`` are None when nothing matched."""

    er_20: float
    f_20: float
    le_cd: float | None
    lr_cd: float
    er_2019: float
    f_2019: float
    de_2019: float | None
    fr_2019: float

    def as_dict(self):
        return asdict(self)


def _error_rate(s, d, i, n_ref):
    # with no reference events the error count itself is reported
    return (s + d + i) / max(n_ref, 1)


def _f_score(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 1.0


def _sdi(fn, fp):
    return min(fn, fp), max(0, fn - fp), max(0, fp - fn)


def _pad(ref, pred):
    n = max(len(ref), len(pred))
    ref = list(ref) + [SeldFrame()] * (n - len(ref))
    pred = list(pred) + [SeldFrame()] * (n - len(pred))
    return ref, pred


def _segments(frames, size=FRAMES_PER_SEGMENT):
    for start in range(0, len(frames), size):
        yield frames[start : start + size]


def _tracks(segment):
    """{class: {track: [directions...]}} for one segment, in frame order."""
    out = {}
    for frame in segment:
        for ev in frame:
            out.setdefault(ev.class_id, {}).setdefault(ev.track_id, []).append(ev.direction)
    return out


def _count_detection(ref, pred, counts):
    for r_seg, p_seg in zip(_segments(ref), _segments(pred)):
        r_cls = {ev.class_id for f in r_seg for ev in f}
        p_cls = {ev.class_id for f in p_seg for ev in f}
        tp, fp, fn = len(r_cls & p_cls), len(p_cls - r_cls), len(r_cls - p_cls)
        s, d, i = _sdi(fn, fp)
        counts.tp += tp
        counts.fp += fp
        counts.fn += fn
        counts.subs += s
        counts.dels += d
        counts.ins += i
        counts.n_ref += len(r_cls)


def _count_frame_doa(ref, pred, counts):
    for r, p in zip(ref, pred):
        counts.fr_total += 1
        counts.fr_good += len(r) == len(p)
        if len(r) and len(p):
            dist = distance_matrix([e.direction for e in r], [e.direction for e in p])
            for i, j in assign(dist):
                counts.de_sum += dist[i, j]
                counts.de_count += 1


def _count_joint(ref, pred, counts, threshold):
    for r_seg, p_seg in zip(_segments(ref), _segments(pred)):
        r_tracks, p_tracks = _tracks(r_seg), _tracks(p_seg)
        tp = fp = fn = 0
        n_ref = 0
        for cls in sorted(set(r_tracks) | set(p_tracks)):
            r_reps = [medoid(v) for _, v in sorted(r_tracks.get(cls, {}).items())]
            p_reps = [medoid(v) for _, v in sorted(p_tracks.get(cls, {}).items())]
            n_ref += len(r_reps)
            counts.lr_total += len(r_reps)
            dist = distance_matrix(r_reps, p_reps)
            pairs = assign(dist)
            for i, j in pairs:
                counts.le_sum += dist[i, j]
                counts.le_count += 1
                # arccos round-off must not push an exact 20 degree pair over the line
                if math.degrees(dist[i, j]) <= threshold + 1e-9:
                    tp += 1
                else:
                    fp += 1
                    fn += 1
            fp += len(p_reps) - len(pairs)
            fn += len(r_reps) - len(pairs)
        s, d, i = _sdi(fn, fp)
        counts.tp20 += tp
        counts.fp20 += fp
        counts.fn20 += fn
        counts.subs20 += s
        counts.dels20 += d
        counts.ins20 += i
        counts.n_ref20 += n_ref


def seld_counts(ref, pred, threshold_deg=DOA_THRESHOLD_DEG):
    """Count statistics of every metric for one reference/prediction pair."""
    ref, pred = _pad(ref, pred)
    counts = SeldCounts()
    _count_detection(ref, pred, counts)
    _count_frame_doa(ref, pred, counts)
    _count_joint(ref, pred, counts, threshold_deg)
    return counts


def evaluate(ref, pred, threshold_deg=DOA_THRESHOLD_DEG):
    return seld_counts(ref, pred, threshold_deg).report()


def segment_er_f(ref, pred):
    """2019 segment-based error rate and F-score on class activity."""
    ref, pred = _pad(ref, pred)
    counts = SeldCounts()
    _count_detection(ref, pred, counts)
    report = counts.report()
    return report.er_2019, report.f_2019


def doa_error_frame_recall(ref, pred):
    """2019 DoA error (degrees, mean over matched pairs) and frame recall."""
    ref, pred = _pad(ref, pred)
    counts = SeldCounts()
    _count_frame_doa(ref, pred, counts)
    report = counts.report()
    return report.de_2019, report.fr_2019


def location_aware_detection(ref, pred, threshold_deg=DOA_THRESHOLD_DEG):
    ref, pred = _pad(ref, pred)
    counts = SeldCounts()
    _count_joint(ref, pred, counts, threshold_deg)
    report = counts.report()
    return report.er_20, report.f_20


def class_aware_localization(ref, pred):
    """LE_CD in degrees (None when nothing matched) and LR_CD."""
    ref, pred = _pad(ref, pred)
    counts = SeldCounts()
    _count_joint(ref, pred, counts, DOA_THRESHOLD_DEG)
    report = counts.report()
    return report.le_cd, report.lr_cd


# --- ranking ---------------------------------------------------------------------


@dataclass(frozen=True)
class RankedSystem:
    position: int
    name: str
    ranks: tuple
    rank_sum: int
    report: MetricsReport


RANK_KEYS = (("er_20", 1), ("f_20", -1), ("le_cd", 1), ("lr_cd", -1))


def rank_systems(reports):
    """Order systems by the sum of their per-metric ranks.

    ``reports`` maps system names to reports (a list is named by index).
    Each metric is ranked separately, ties sharing the lowest rank;
    remaining ties are broken by ER_20 and then by name.
    """
    if not isinstance(reports, dict):
        reports = {str(i): r for i, r in enumerate(reports)}
    names = list(reports)
    per_metric = []
    for key, sense in RANK_KEYS:
        vals = []
        for n in names:
            v = getattr(reports[n], key)
            vals.append(math.inf if v is None else sense * v)
        per_metric.append(rankdata(vals, method="min").astype(int))
    ranks = np.stack(per_metric, axis=1)
    sums = ranks.sum(axis=1)
    order = sorted(range(len(names)),
                   key=lambda k: (sums[k], reports[names[k]].er_20, names[k]))
    return [
        RankedSystem(pos + 1, names[k], tuple(ranks[k].tolist()), int(sums[k]), reports[names[k]])
        for pos, k in enumerate(order)
    ]


# --- fixtures ---------------------------------------------------------------------


def rotate_away(direction, angle, bearing):
    """Direction ``angle`` radians from ``direction`` along ``bearing``."""
    u = direction.unit_vector()
    east = np.array([-math.sin(direction.azimuth), math.cos(direction.azimuth), 0.0])
    north = np.cross(u, east)
    tangent = math.cos(bearing) * north + math.sin(bearing) * east
    v = math.cos(angle) * u + math.sin(angle) * tangent
    return Direction(math.atan2(v[1], v[0]), math.asin(max(-1.0, min(1.0, v[2]))))


def jitter_predictions(frames, jitter_deg=15.0, seed=0):
    """Copy of ``frames`` with every direction moved ``jitter_deg`` in a random bearing."""
    rng = np.random.default_rng(seed)
    out = []
    for frame in frames:
        events = tuple(
            SeldEvent(ev.class_id,
                      rotate_away(ev.direction, math.radians(jitter_deg), rng.uniform(0, 2 * np.pi)),
                      ev.track_id)
            for ev in frame
        )
        out.append(SeldFrame(events))
    return out
