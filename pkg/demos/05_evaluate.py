"""Score three mock systems against one reference and rank them."""
import math

import numpy as np

from seldkit.array_models import Direction
from seldkit.labels import SeldEvent, SeldFrame
from seldkit.metrics import evaluate, jitter_predictions, rank_systems

rng = np.random.default_rng(0)
ref = []
for t in range(300):
    # two slowly circling sources, the second one active half the time
    evs = [SeldEvent(2, Direction(math.radians(t * 0.6 - 180), 0.2), 0)]
    if (t // 50) % 2:
        evs.append(SeldEvent(7, Direction(math.radians(90 - t * 0.3), -0.4), 1))
    ref.append(SeldFrame(tuple(evs)))

systems = {
    "oracle": ref,
    "jitter10": jitter_predictions(ref, 10.0, seed=1),
    "jitter30": jitter_predictions(ref, 30.0, seed=2),
    "silent": [SeldFrame()] * len(ref),
}
reports = {name: evaluate(ref, pred) for name, pred in systems.items()}

print(f"{'system':<10} {'ER20':>5} {'F20':>6} {'LE_CD':>6} {'LR_CD':>6}")
for r in rank_systems(reports):
    m = r.report
    le = "  n/a" if m.le_cd is None else f"{m.le_cd:6.1f}"
    print(f"{r.name:<10} {m.er_20:5.2f} {100 * m.f_20:6.1f} {le} {100 * m.lr_cd:6.1f}"
          f"   rank {r.position} (rank sum {r.rank_sum})")
