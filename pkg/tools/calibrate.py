"""Calibration driver for the bundled dataset replica.

Evaluates the generated cloud's similarity-network statistics against the
published table anchors and prints deviations. Run stages:
  bulk  - bulk-only density check at reduced n (fast CDF shaping)
  full  - full replica through the real pipeline at final n
"""

import sys

sys.path.insert(0, "src")

import numpy as np

from triage.datagen import CFG, THRESH, COS_THRESH, _Replica, verify_stats

TARGETS = {
    "cosine": {0.90: (22148695, 1), 0.92: (16505521, 2), 0.94: (10810687, 7),
               0.95: (8103196, 22), 0.98: (1578490, 761)},
    "euclidean": {0.20: (3348231, 125), 0.23: (5403317, 33),
                  0.25: (7120567, 14), 0.28: (10279280, 5),
                  0.31: (14086639, 0), 0.38: (25226436, 0)},
    "manhattan": {0.10: (1186583, 947), 0.13: (2838619, 175),
                  0.22: (14688023, 0), 0.31: (35306331, 0),
                  0.33: (41217110, 0)},
    "minkowski10": {0.20: (988835, 892), 0.25: (2146676, 225),
                    0.30: (3942436, 83), 0.35: (6403802, 37),
                    0.40: (9481995, 13)},
    "minkowski4": {0.20: (1630369, 394), 0.25: (3527312, 92)},
}

N_FINAL = 8600


def report(stats, n, label=""):
    print(f"=== {label} (n={n}) ===")
    pairs_full = N_FINAL * (N_FINAL - 1) / 2
    pairs_here = n * (n - 1) / 2
    bad = 0
    for metric in ("cosine", "euclidean", "manhattan", "minkowski4", "minkowski10"):
        for threshold, edges, isolated in stats[metric]:
            t_edges, t_iso = TARGETS[metric][round(threshold, 2)]
            scaled = edges * pairs_full / pairs_here
            rel = scaled / t_edges - 1.0
            ok = abs(rel) <= 0.15
            # isolated counts only meaningful at final n
            iso_note = f" iso={isolated} (target {t_iso})" if n == N_FINAL else ""
            flag = "  " if ok else "!!"
            if not ok:
                bad += 1
            print(f"{flag} {metric:12s} t={threshold:4.2f} "
                  f"edges={scaled / 1e6:8.3f}M target={t_edges / 1e6:8.3f}M "
                  f"rel={rel:+.1%}{iso_note}")
    print(f"{bad} edge cells out of tolerance")
    return bad


def bulk_stage(n_sub=2600, seed=3, overrides=None, label="bulk only"):
    saved = dict(CFG)
    if overrides:
        CFG.update(overrides)
    try:
        rep = _Replica(seed)
        c = int(n_sub / 4)
        counts = {"green": c, "yellow": c, "orange": c, "red": c}
        X, labels = rep.build_bulk(counts)
        stats = verify_stats(X)
        return report(stats, X.shape[0], label)
    finally:
        CFG.clear()
        CFG.update(saved)


def sweep():
    combos = []
    for sa in (0.34, 0.40, 0.46):
        for sr in (0.20, 0.26):
            for cm in (0.52, 0.58):
                combos.append({"sigma_ang": sa, "sigma_rad": sr,
                               "coord_mean": cm, "coord_noise": 0.02})
    best = None
    for ov in combos:
        bad = bulk_stage(overrides=ov, label=str(ov))
        if best is None or bad < best[0]:
            best = (bad, ov)
    print("BEST:", best)


if __name__ == "__main__":
    stage = sys.argv[1] if len(sys.argv) > 1 else "bulk"
    if stage == "bulk":
        bulk_stage()
    elif stage == "sweep":
        sweep()
