"""Random search + local refinement for the bulk generator knobs."""

import json
import sys

sys.path.insert(0, "src")
sys.path.insert(0, "tools")

import numpy as np

from calibrate import N_FINAL, TARGETS
from triage.datagen import CFG, _Replica, verify_stats


def rels_for(ov, n_sub, seed=3):
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


def sample(rng):
    nl = int(rng.choice([10, 12, 14]))
    return {
        "coord_base": float(rng.uniform(0.06, 0.18)),
        "grid_step": float(rng.uniform(0.055, 0.095)),
        "n_levels": nl,
        "radial_step": float(rng.uniform(0.11, 0.20)),
        "radial_probs": tuple(float(x) for x in
                              rng.uniform(0.55, 0.85) ** np.arange(6)),
        "spike_prob": float(rng.uniform(0.0, 0.3)),
        "spike_mag": (float(rng.uniform(0.12, 0.2)),
                      float(rng.uniform(0.22, 0.38))),
        "jitter": 0.008,
    }


def perturb(rng, ov):
    out = dict(ov)
    key = rng.choice(["coord_base", "grid_step", "radial_step", "spike_prob"])
    out[key] = float(ov[key] * rng.uniform(0.9, 1.1))
    if rng.random() < 0.3:
        lo, hi = ov["spike_mag"]
        out["spike_mag"] = (float(lo * rng.uniform(0.9, 1.1)),
                            float(hi * rng.uniform(0.9, 1.1)))
    if rng.random() < 0.2:
        out["n_levels"] = int(np.clip(ov["n_levels"] + rng.choice([-1, 1]), 5, 9))
    return out


def main(budget=70, n_sub=1400):
    rng = np.random.default_rng(0)
    best = None
    for i in range(budget):
        ov = sample(rng) if best is None or i % 3 else perturb(rng, best[1])
        try:
            rels = rels_for(ov, n_sub)
        except Exception as e:
            print("fail", e)
            continue
        s = score(rels)
        if best is None or s < best[0]:
            best = (s, ov, rels)
            print(f"[{i}] new best {s:.4f}")
    print(json.dumps(best[1], indent=1))
    for k, v in sorted(best[2].items()):
        flag = "!!" if abs(v) > 0.15 else "  "
        print(flag, k, f"{v:+.1%}")
    with open("tools/best_bulk.json", "w") as f:
        json.dump(best[1], f, indent=1)


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 70)
