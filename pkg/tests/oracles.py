"""Independent reference computations used by the tests.

None of these call into seldkit; they are deliberately slow and simple.
"""
import mpmath
import numpy as np


def mp_hankel2(n, x):
    x = mpmath.mpf(x)
    scale = mpmath.sqrt(mpmath.pi / (2 * x))
    return scale * (mpmath.besselj(n + 0.5, x) - 1j * mpmath.bessely(n + 0.5, x))


def mp_hankel2_deriv(n, x):
    # h_n' = (n/x) h_n - h_{n+1}: a different identity from the library's
    x = mpmath.mpf(x)
    return n / x * mp_hankel2(n, x) - mp_hankel2(n + 1, x)


def rigid_sphere_series(cos_gamma, freq, radius=0.042, c=343.0, order=30, dps=50):
    """Rigid-sphere pressure at ``dps`` digits of working precision."""
    with mpmath.workdps(dps):
        kr = 2 * mpmath.pi * mpmath.mpf(freq) * mpmath.mpf(radius) / mpmath.mpf(c)
        total = mpmath.mpc(0)
        for n in range(order + 1):
            term = mpmath.power(1j, n - 1) / mp_hankel2_deriv(n, kr)
            total += term * (2 * n + 1) * mpmath.legendre(n, mpmath.mpf(cos_gamma))
        value = total / kr**2
        return complex(value)


def h0_closed_form(x):
    return 1j * np.exp(-1j * x) / x


def h_upward(n, x):
    """h_n^(2) by upward recurrence from the closed forms of h_0 and h_1."""
    h_prev = h0_closed_form(x)
    h_cur = np.exp(-1j * x) * (1j / x**2 - 1 / x)
    if n == 0:
        return h_prev
    for k in range(1, n):
        h_prev, h_cur = h_cur, (2 * k + 1) / x * h_cur - h_prev
    return h_cur


def central_difference(f, x, step=1e-6):
    return (f(x + step) - f(x - step)) / (2 * step)


def direct_convolution(x, h):
    """O(N*M) linear convolution by explicit summation."""
    out = np.zeros(len(x) + len(h) - 1)
    for k, hk in enumerate(h):
        out[k : k + len(x)] += hk * x
    return out


def brute_force_segment_counts(ref_frames, pred_frames, size=10):
    """Recount segment TP/FP/FN with plain Python sets and loops."""
    n = max(len(ref_frames), len(pred_frames))
    tp = fp = fn = s = d = i = nref = 0
    for start in range(0, n, size):
        ref_active, pred_active = set(), set()
        for f in range(start, min(start + size, n)):
            if f < len(ref_frames):
                for ev in ref_frames[f]:
                    ref_active.add(ev.class_id)
            if f < len(pred_frames):
                for ev in pred_frames[f]:
                    pred_active.add(ev.class_id)
        seg_tp = sum(1 for c in ref_active if c in pred_active)
        seg_fn = sum(1 for c in ref_active if c not in pred_active)
        seg_fp = sum(1 for c in pred_active if c not in ref_active)
        tp, fp, fn = tp + seg_tp, fp + seg_fp, fn + seg_fn
        s += min(seg_fn, seg_fp)
        d += max(0, seg_fn - seg_fp)
        i += max(0, seg_fp - seg_fn)
        nref += len(ref_active)
    er = (s + d + i) / max(nref, 1)
    denom = 2 * tp + fp + fn
    f_score = 2 * tp / denom if denom else 1.0
    return er, f_score


def great_circle(az1, el1, az2, el2, dps=40):
    """Spherical law of cosines evaluated at ``dps`` digits."""
    with mpmath.workdps(dps):
        az1, el1, az2, el2 = (mpmath.mpf(v) for v in (az1, el1, az2, el2))
        c = mpmath.sin(el1) * mpmath.sin(el2) + mpmath.cos(el1) * mpmath.cos(el2) * mpmath.cos(az1 - az2)
        return float(mpmath.acos(max(-1, min(1, c))))
