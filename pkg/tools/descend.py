"""Coordinate descent on the bulk generator knobs."""

import json
import sys

sys.path.insert(0, "src")
sys.path.insert(0, "tools")

import numpy as np

from calibrate import N_FINAL, TARGETS
from triage.datagen import CFG, _Replica, verify_stats


def rels_for(ov, n_sub=1800, seed=3):
    saved = dict(CFG)
    CFG.update(ov)
    try:
        rep = _Replica(seed)
        c = n_sub // 4
        X, _ = rep.build_bulk({"green": c, "yellow": c, "orange": c, "red": c})
        stats = verify_stats(X)
        pf = N_FINAL * (N_FINAL - 1) / 2
        ph = X.shape[0] * (X.shape[0] - 1) / 2
        return {(m, round(t, 2)): e * pf / ph / TARGETS[m][round(t, 2)][0] - 1.0
                for m, rows in stats.items() for t, e, iso in rows}
    finally:
        CFG.clear()
        CFG.update(saved)


def score(rels):
    return sum(max(0.0, abs(r) - 0.10) ** 2 for r in rels.values())


SCALARS = ["lobe_low", "gap_scale", "up_scale", "shell_step",
           "sigma_within", "flat_within", "spike_prob"]
FACTORS = [0.85, 0.93, 1.07, 1.18]


def main(rounds=8):
    cur = {k: CFG[k] for k in SCALARS}
    cur["shell_probs"] = tuple(CFG["shell_probs"])
    cur["n_clusters"] = CFG["n_clusters"]
    best_rels = rels_for(cur)
    best = score(best_rels)
    print("start", round(best, 4))
    for rnd in range(rounds):
        improved = False
        for key in SCALARS:
            for f in FACTORS:
                trial = dict(cur)
                trial[key] = cur[key] * f
                rels = rels_for(trial)
                s = score(rels)
                if s < best:
                    best, cur, best_rels = s, trial, rels
                    improved = True
                    print(f"  {key} *= {f} -> {s:.4f}")
        for f in (0.8, 1.25):
            trial = dict(cur)
            p = np.array(cur["shell_probs"])
            p[1:] *= f
            trial["shell_probs"] = tuple(p / p.sum())
            rels = rels_for(trial)
            s = score(rels)
            if s < best:
                best, cur, best_rels = s, trial, rels
                improved = True
                print(f"  shell tail *= {f} -> {s:.4f}")
        for ncl in (22, 26, 32, 40, 48):
                trial = dict(cur)
                trial["n_clusters"] = ncl
                rels = rels_for(trial)
                s = score(rels)
                if s < best:
                    best, cur, best_rels = s, trial, rels
                    improved = True
                    print(f"  n_clusters={ncl} -> {s:.4f}")
        print(f"round {rnd}: {best:.4f}")
        if not improved:
            break
    print(json.dumps(cur, indent=1))
    for k, v in sorted(best_rels.items()):
        flag = "!!" if abs(v) > 0.15 else "  "
        print(flag, k, f"{v:+.1%}")
    with open("tools/best_bulk.json", "w") as f:
        json.dump(cur, f, indent=1)


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 4)
