"""Deterministic generator for the bundled patient-priority dataset replica.

The original Kaggle export cannot be redistributed, so the repository ships
a synthetic stand-in engineered to reproduce the published similarity-network
statistics (edge counts and isolated-node counts per metric and threshold)
after the standard preprocessing pipeline. Geometry is designed in the
post-scaling [0,1]^16 space and mapped back to raw clinical units:

* a four-class bulk cloud around one positive direction, with radial spread
  (invisible to cosine) and a small angular split between the two middle
  severity classes (visible mainly through neighborhood aggregation);
* tail sub-populations with per-metric displacement profiles that populate
  the soft isolated-node bands;
* short "chain" groups with exact nearest-neighbor distance profiles for
  the small isolated-node counts, verified at generation time;
* an angular fringe (small radius, so distance-invisible) for the cosine
  isolation shells, including one exact all-minimum row whose zero vector
  has cosine similarity 0 to everything.

Discrete columns are heavily skewed: a common value dominates each one so
that cross-category jumps (which are huge after min-max scaling) stay rare,
matching the published high-p Minkowski counts.
"""

from __future__ import annotations

import csv

import numpy as np

from .ingest import smote_resample

N_RAW_ROWS = 6962
DEFAULT_SEED = 7

# canonical order must match ingest.FEATURE_COLUMNS
RAW_HEADERS = [
    "age", "gender", "chest pain type", "blood pressure", "cholesterol",
    "max heart rate", "exercise angina", "plasma glucose", "skin_thickness",
    "insulin", "bmi", "diabetes_pedigree", "hypertension", "heart_disease",
    "residence_type", "smoking_status", "triage",
]

# continuous geometry columns (indices into the 16 features)
CONT = [0, 3, 4, 5, 7, 8, 9, 10, 11]  # age, bp, chol, hr, glucose, skin, insulin, bmi, pedigree
DISCRETE = [1, 2, 6, 12, 13]  # gender, chest pain, angina, hypertension, heart disease
CAT_RESIDENCE = 14
CAT_SMOKING = 15

RAW_RANGES = {
    0: (1.0, 91.0, True), 3: (70.0, 200.0, True), 4: (85.0, 600.0, True),
    5: (55.0, 210.0, True), 7: (40.0, 380.0, True), 8: (0.0, 99.0, True),
    9: (0.0, 846.0, True), 10: (10.0, 68.0, False), 11: (0.05, 2.45, False),
}

SMOKING_VALUES = ["Unknown", "never smoked", "previously smoked", "smoke"]
RESIDENCE_VALUES = ["Rural", "Urban"]

CLEAN_COUNTS = {"green": 2150, "yellow": 2150, "orange": 1430, "red": 1200}

# published isolated-node counts per (metric, threshold), cumulative:
# a node is isolated at t when its nearest-neighbor distance is >= t
# (distance metrics) or its best cosine similarity is <= t
ISOLATION_TARGETS = {
    "manhattan": [(0.10, 947), (0.13, 175), (0.22, 0), (0.31, 0), (0.33, 0)],
    "euclidean": [(0.20, 125), (0.23, 33), (0.25, 14), (0.28, 5),
                  (0.31, 0), (0.38, 0)],
    "minkowski4": [(0.20, 394), (0.25, 92)],
    "minkowski10": [(0.20, 892), (0.25, 225), (0.30, 83), (0.35, 37),
                    (0.40, 13)],
    "cosine": [(0.90, 1), (0.92, 2), (0.94, 7), (0.95, 22), (0.98, 761)],
}

# exact cosine shells: (count, designed partner cosine); nested inside the
# wide 0.95..0.98 shell, with the zero row carrying the 0.90 cell
COS_SHELLS = [
    (1, 0.9115),   # isolated at 0.92 but not at 0.90
    (5, 0.9300),   # fills the <=0.94 cell to 7 (zero row + the 0.92 one)
    (15, 0.9445),  # fills the <=0.95 cell to 22
]

# fraction of rows carrying the non-dominant value, per discrete column
DISCRETE_MINOR = {1: 0.030, 2: 0.030, 6: 0.025, 12: 0.025, 13: 0.020}
CAT_MINOR = {CAT_RESIDENCE: 0.030, CAT_SMOKING: 0.040}

CFG = {
    # bulk model: every continuous column is bimodal (a low and a high lobe,
    # like the merged clinical sources), rows fall into clusters identified
    # by their lobe pattern. Patterns form a code with pairwise Hamming
    # distance >= 3, and wide-gap columns flip less often, which grades the
    # high-p Minkowski distances. Within-cluster pairs carry every metric's
    # tight-threshold mass.
    "n_clusters": 40,
    "lobe_low": 0.22,       # low-lobe position for every continuous column
    "lobe_gaps": (0.26, 0.28, 0.30, 0.33, 0.36, 0.40, 0.44, 0.50, 0.56),
    "gap_scale": 1.0,
    # number of lobes per column (narrow-gap columns get three)
    "lobe_counts": (3, 3, 3, 3, 2, 2, 2, 2, 2),
    # chance of leaving the bottom lobe, per column
    "lobe_up_probs": (0.55, 0.55, 0.52, 0.50, 0.44, 0.40, 0.36, 0.32, 0.28),
    "up_scale": 1.0,
    "min_hamming": 3,
    # per-row flat shell ladder (common over continuous coords): carries the
    # mid manhattan/minkowski-10 bands and is invisible to cosine
    "shell_step": 0.10,
    "shell_probs": (0.30, 0.25, 0.20, 0.15, 0.10),
    "beta_radial": 1,       # green (-) / red (+) shell shift
    "sigma_within": 0.040,  # iid within-cluster noise
    "flat_within": 0.030,   # extra sub-shell common offset per row
    "jitter": 0.006,
    "disc_flip": 0.02,      # within-cluster discrete-column flip rate
    "spike_prob": 0.10,     # rows with one large single-coordinate spike
    "spike_mag": (0.14, 0.26),
    "gamma_ang": 0.05,      # yellow/orange fine split
    "class_split": (0.27, 0.52, 0.76),  # pattern-weight class boundaries
    # wide cosine shell: (count, low, high) of designed pair cosines
    "cos98_band": (739, 0.9520, 0.9780),
    # rows reserved for the distance tails (refined by calibration)
    "est_tail_rows": 1000,
    # soft isolated-node tails: (count, low, high) of the placement band
    "tail_m1_flat": (585, 0.102, 0.126),    # flat displacement: manhattan band
    "tail_m1_mid": (55, 0.132, 0.175),      # flat, deeper band
    "tail_m10_spike": (430, 0.205, 0.245),  # single-coordinate spikes
    "tail_m4_mid": (210, 0.205, 0.235),     # mid-sparse: minkowski-4 band
    "tail_m2_low": (60, 0.205, 0.225),      # dense-profile: euclidean band
    "tail_cos": (739, 0.9505, 0.9795),      # angular fringe pair cosines
    "fringe_radius": (0.33, 0.50),          # fringe norm relative to bulk norm
}

THRESH = {
    "manhattan": [0.10, 0.13, 0.22, 0.31, 0.33],
    "euclidean": [0.20, 0.23, 0.25, 0.28, 0.31, 0.38],
    "minkowski4": [0.20, 0.25],
    "minkowski10": [0.20, 0.25, 0.30, 0.35, 0.40],
}
COS_THRESH = [0.90, 0.92, 0.94, 0.95, 0.98]


def _power_mean(delta: np.ndarray, p: float) -> float:
    return float((np.abs(delta) ** p).mean() ** (1.0 / p))


def _profile_for(d1, d2, d4, d10, rng) -> np.ndarray:
    """Search a nonnegative 16-vector whose normalized p-means hit the given
    targets (None = stay below that metric's lowest threshold)."""
    lows = {1.0: 0.085, 2.0: 0.17, 4.0: 0.17, 10.0: 0.17}
    targets = {1.0: d1, 2.0: d2, 4.0: d4, 10.0: d10}
    best = None
    best_err = np.inf
    for k in range(1, 10):
        for trial in range(60):
            delta = np.zeros(16)
            coords = np.array(CONT[:k])
            mags = 0.15 + 0.85 * rng.random(k)
            delta[coords] = mags
            # rescale toward the tightest stated target
            for _ in range(25):
                err = 0.0
                scale = 1.0
                for p, t in targets.items():
                    if t is None:
                        continue
                    cur = _power_mean(delta, p)
                    scale = t / cur if cur > 0 else 1.0
                delta *= scale
                err = 0.0
                ok = True
                for p, t in targets.items():
                    cur = _power_mean(delta, p)
                    if t is None:
                        if cur > lows[p]:
                            err += (cur - lows[p]) * 10
                            ok = False
                    else:
                        err += abs(cur - t)
                if ok and delta.max() <= 0.94:
                    break
            if delta.max() > 0.94:
                err += delta.max()
            if err < best_err:
                best_err = err
                best = delta.copy()
            if best_err < 1e-9:
                return best
    return best


def _nnd_profile(x: np.ndarray, others: np.ndarray) -> dict:
    """Nearest-neighbor distance per metric and max cosine of x vs others."""
    diffs = np.abs(others - x[None, :])
    out = {}
    out[1.0] = (diffs.mean(axis=1)).min()
    out[2.0] = np.sqrt((diffs ** 2).mean(axis=1)).min()
    out[4.0] = ((diffs ** 4).mean(axis=1) ** 0.25).min()
    out[10.0] = ((diffs ** 10).mean(axis=1) ** 0.1).min()
    nx = np.linalg.norm(x)
    if nx == 0.0:
        out["cos"] = 0.0
    else:
        norms = np.linalg.norm(others, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        cos = (others @ x) / (safe * nx)
        cos[norms == 0] = 0.0
        out["cos"] = cos.max()
    return out


class _Replica:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.u0 = np.zeros(16)
        self.u0[CONT] = 1.0 / np.sqrt(len(CONT))

    # -- discrete columns ---------------------------------------------------

    def _discrete_block(self, n: int) -> np.ndarray:
        """Scaled values for the 7 discrete/categorical columns; the dominant
        value is the scaled minimum (0)."""
        block = np.zeros((n, 16))
        for j, frac in DISCRETE_MINOR.items():
            minority = self.rng.random(n) < frac
            if j == 2:  # chest pain type: 4 levels
                levels = self.rng.integers(1, 4, size=n) / 3.0
                block[:, j] = np.where(minority, levels, 0.0)
            else:
                block[:, j] = minority.astype(float)
        for j, frac in CAT_MINOR.items():
            minority = self.rng.random(n) < frac
            if j == CAT_SMOKING:
                levels = self.rng.integers(1, 4, size=n) / 3.0
                block[:, j] = np.where(minority, levels, 0.0)
            else:
                block[:, j] = minority.astype(float)
        return block

    # -- bulk ---------------------------------------------------------------

    def _lobe_patterns(self) -> np.ndarray:
        """Cluster lobe-level patterns, pairwise different on at least
        min_hamming columns; wide-gap columns leave the bottom lobe less
        often."""
        cfg = CFG
        nc = len(CONT)
        up = np.clip(np.asarray(cfg["lobe_up_probs"]) * cfg["up_scale"], 0, 0.95)
        counts = np.asarray(cfg["lobe_counts"])
        patterns: list = []
        tries = 0
        while len(patterns) < cfg["n_clusters"]:
            tries += 1
            if tries > 120000:
                raise RuntimeError("could not place enough cluster patterns")
            raised = self.rng.random(nc) < up
            # for three-lobe columns, split the raised mass between levels
            level = np.where(raised,
                             1 + (self.rng.random(nc) < 0.45).astype(np.int8),
                             0)
            cand = np.minimum(level, counts - 1).astype(np.int8)
            if all(int(np.sum(cand != p)) >= cfg["min_hamming"]
                   for p in patterns):
                patterns.append(cand)
        return np.array(patterns)

    def _cluster_centers(self):
        """Centers from lobe patterns; class from the pattern weight (light
        patterns sit low on every column, like low-acuity vitals)."""
        cfg = CFG
        nc = len(CONT)
        gaps = np.asarray(cfg["lobe_gaps"]) * cfg["gap_scale"]
        patterns = self._lobe_patterns()
        weights = (patterns * gaps[None, :]).sum(axis=1) / gaps.sum()
        order = np.argsort(weights, kind="stable")
        lo, mid, hi = cfg["class_split"]
        centers = []
        for rank, ci in enumerate(order):
            q = (rank + 0.5) / len(order)
            if q < lo:
                label = 0  # green: lightest patterns
            elif q < mid:
                label = 1
            elif q < hi:
                label = 2
            else:
                label = 3  # red: heaviest
            center = cfg["lobe_low"] + patterns[ci] * gaps
            if label == 1:
                center = center + cfg["gamma_ang"] * np.where(
                    np.arange(nc) % 2 == 0, 1.0, -1.0)
            elif label == 2:
                center = center - cfg["gamma_ang"] * np.where(
                    np.arange(nc) % 2 == 0, 1.0, -1.0)
            disc = self._discrete_block(1)[0]
            centers.append((center, disc, label))
        return centers

    def build_bulk(self, counts: dict) -> tuple[np.ndarray, np.ndarray]:
        cfg = CFG
        nc = len(CONT)
        centers = self._cluster_centers()
        remaining = {i: c for i, c in
                     enumerate([counts[k] for k in
                                ("green", "yellow", "orange", "red")])}
        by_class: dict[int, list] = {0: [], 1: [], 2: [], 3: []}
        for center, disc, label in centers:
            by_class[label].append((center, disc))
        rows = []
        labels = []
        for label in range(4):
            klusters = by_class[label]
            if not klusters:
                raise RuntimeError(f"no clusters assigned to class {label}")
            need = remaining[label]
            sizes = np.full(len(klusters), need // len(klusters))
            sizes[:need - sizes.sum()] += 1
            for (center, disc), size in zip(klusters, sizes):
                probs = np.asarray(cfg["shell_probs"], dtype=np.float64)
                shell = self.rng.choice(probs.size, size=size,
                                        p=probs / probs.sum())
                if label == 0:
                    shell = np.maximum(shell - cfg["beta_radial"], 0)
                elif label == 3:
                    shell = np.minimum(shell + cfg["beta_radial"],
                                       probs.size - 1)
                # radial shells are multiplicative: a true rescaling of the
                # row, invisible to cosine at every shell; tall-lobe clusters
                # cap the ladder so coordinates stay inside [0, 1]
                headroom = 0.97 / (float(center.max())
                                   + 2.0 * cfg["sigma_within"]
                                   + 2.0 * cfg["flat_within"]) - 1.0
                max_shell = max(int(headroom / cfg["shell_step"]), 0)
                shell = np.minimum(shell, max_shell)
                factor = (1.0 + cfg["shell_step"] * shell
                          + cfg["flat_within"] * np.clip(
                              self.rng.normal(size=size), -2.0, 2.0))
                noise = np.clip(self.rng.normal(scale=cfg["sigma_within"],
                                                size=(size, nc)),
                                -2.0 * cfg["sigma_within"],
                                2.0 * cfg["sigma_within"])
                vals = center[None, :] * factor[:, None] + noise
                vals += self.rng.normal(scale=cfg["jitter"], size=vals.shape)
                X = np.zeros((size, 16))
                X[:, CONT] = vals
                # cluster-level discrete pattern with rare flips
                X[:, DISCRETE + [CAT_RESIDENCE, CAT_SMOKING]] = disc[
                    DISCRETE + [CAT_RESIDENCE, CAT_SMOKING]][None, :]
                flips = self.rng.random((size, 7)) < cfg["disc_flip"]
                fresh = self._discrete_block(size)
                cols = DISCRETE + [CAT_RESIDENCE, CAT_SMOKING]
                for j, col in enumerate(cols):
                    X[flips[:, j], col] = fresh[flips[:, j], col]
                spiky = self.rng.random(size) < cfg["spike_prob"]
                lo, hi = cfg["spike_mag"]
                for i in np.flatnonzero(spiky):
                    c = self.rng.choice(CONT)
                    X[i, c] += (lo + (hi - lo) * self.rng.random()) * (
                        1.0 if self.rng.random() < 0.5 else -1.0)
                np.clip(X, 0.0, 1.0, out=X)
                rows.append(X)
                labels += [label] * size
        return np.vstack(rows), np.array(labels, dtype=np.int32)

    # -- tails --------------------------------------------------------------

    # -- isolation tails ------------------------------------------------

    def _nnd_profiles(self, M: np.ndarray) -> dict:
        """Per-row nearest-neighbor distance per metric plus max cosine."""
        n = M.shape[0]
        out = {p: np.full(n, np.inf) for p in (1.0, 2.0, 4.0, 10.0)}
        out["cos"] = np.full(n, -np.inf)
        norms = np.linalg.norm(M, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        Mn = M / safe[:, None]
        Mn[norms == 0] = 0.0
        block = 256
        for i0 in range(0, n, block):
            i1 = min(i0 + block, n)
            diffs = np.abs(M[i0:i1, None, :] - M[None, :, :])
            rows = np.arange(i0, i1)
            for p in (1.0, 2.0, 4.0, 10.0):
                d = (diffs ** p).mean(axis=2) ** (1.0 / p)
                d[rows - i0, rows] = np.inf
                out[p][i0:i1] = np.minimum(out[p][i0:i1], d.min(axis=1))
                out[p] = np.minimum(out[p], d.min(axis=0))
            cos = Mn[i0:i1] @ Mn.T
            cos[rows - i0, rows] = -np.inf
            out["cos"][i0:i1] = np.maximum(out["cos"][i0:i1], cos.max(axis=1))
            out["cos"] = np.maximum(out["cos"], cos.max(axis=0))
        return out

    def _nnd_of(self, x: np.ndarray, M: np.ndarray) -> dict:
        diffs = np.abs(M - x[None, :])
        prof = {p: float(((diffs ** p).mean(axis=1) ** (1.0 / p)).min())
                for p in (1.0, 2.0, 4.0, 10.0)}
        nx = np.linalg.norm(x)
        if nx == 0:
            prof["cos"] = 0.0
        else:
            norms = np.linalg.norm(M, axis=1)
            safe = np.where(norms > 0, norms, 1.0)
            cos = (M @ x) / (safe * nx)
            cos[norms == 0] = 0.0
            prof["cos"] = float(cos.max())
        return prof

    @staticmethod
    def _band_of(value: float, edges: list) -> int:
        """Index of the band [edges[i], edges[i+1]) containing value;
        -1 when below every edge."""
        idx = -1
        for i, e in enumerate(edges):
            if value >= e:
                idx = i
        return idx

    def _count_bands(self, profiles: dict) -> dict:
        counts = {}
        for name, key in (("manhattan", 1.0), ("euclidean", 2.0),
                          ("minkowski4", 4.0), ("minkowski10", 10.0)):
            edges = THRESH[name]
            counts[name] = [int((profiles[key] >= e).sum()) for e in edges]
        counts["cosine"] = [int((profiles["cos"] <= e).sum())
                            for e in COS_THRESH]
        return counts

    def _tail_budgets(self, current: dict) -> dict:
        """Remaining isolated-node budget per metric threshold (cumulative)."""
        budgets = {}
        for name, rows in ISOLATION_TARGETS.items():
            budgets[name] = []
            for (t, target), have in zip(rows, current[name]):
                budgets[name].append(target - have)
        return budgets

    def _make_tail_pair(self, direction: np.ndarray, base_radius: float,
                        step: float):
        """Two parallel points on a private ray: mutual cosine is 1, so the
        pair is invisible to the cosine shells; their mutual distance profile
        is the ray direction's own shape."""
        a = direction * base_radius
        b = direction * (base_radius + step)
        return a, b

    def distance_tails(self, M: np.ndarray, labels: list) -> tuple[list, list]:
        """Radial tail pairs filling the manhattan/minkowski/euclidean
        isolation bands, deepest cells first, with per-pair verification."""
        cfg = CFG
        new_rows: list = []
        new_labels: list = []

        def current_matrix():
            if new_rows:
                return np.vstack([M, np.array(new_rows)])
            return M

        profiles = self._nnd_profiles(M)
        counts = self._count_bands(profiles)
        plan = []  # (metric key, band lo, band hi, count)
        for name, key in (("euclidean", 2.0), ("minkowski10", 10.0),
                          ("minkowski4", 4.0), ("manhattan", 1.0)):
            edges = THRESH[name] + [None]
            targets = [t for _, t in ISOLATION_TARGETS[name]]
            have = counts[name]
            # convert cumulative targets into per-band needs, deepest first
            for i in range(len(targets) - 1, -1, -1):
                hi = edges[i + 1]
                need_cum = targets[i] - have[i]
                above = targets[i + 1] - have[i + 1] if i + 1 < len(targets) else 0
                need_band = need_cum - max(above, 0)
                if need_band < 0:
                    raise RuntimeError(
                        f"bulk overshoots isolated band {name}>={edges[i]}: "
                        f"have {have[i]}, target {targets[i]}")
                plan.append((name, key, edges[i], hi, need_band))

        placed_bands = {(name, lo): 0 for name, _, lo, _, _ in plan}
        order = {"euclidean": 0, "minkowski10": 1, "minkowski4": 2,
                 "manhattan": 3}
        plan.sort(key=lambda item: (order[item[0]], -(item[2])))

        for name, key, lo, hi, need in plan:
            need -= placed_bands[(name, lo)]
            attempts = 0
            while need > 0:
                attempts += 1
                if attempts > 400 + 40 * need:
                    raise RuntimeError(
                        f"tail placement stalled for {name} band {lo}")
                target_mid = lo * 1.12 if hi is None else (lo + hi) / 2.0
                prof = self._tail_profile(key, target_mid)
                if prof is None:
                    continue
                direction, step = prof
                base = 0.05 + 0.4 * self.rng.random()
                top = (direction * (base + step)).max()
                if top > 0.97:
                    continue
                a, b = self._make_tail_pair(direction, base, step)
                cur = current_matrix()
                pa = self._nnd_of(a, np.vstack([cur, b[None, :]]))
                pb = self._nnd_of(b, np.vstack([cur, a[None, :]]))
                ok = True
                for p_, (prof_a, prof_b) in (
                        (key, (pa[key], pb[key])),):
                    if not (lo + 0.004 <= prof_a and (hi is None or prof_a < hi - 0.004)):
                        ok = False
                    if not (lo + 0.004 <= prof_b and (hi is None or prof_b < hi - 0.004)):
                        ok = False
                # cosine safety: the twin keeps maxcos at 1
                if pa["cos"] < 0.985 or pb["cos"] < 0.985:
                    ok = False
                if not ok:
                    continue
                # account side bands in the other metrics
                side = []
                for oname, okey in (("manhattan", 1.0), ("euclidean", 2.0),
                                    ("minkowski4", 4.0), ("minkowski10", 10.0)):
                    if okey == key:
                        continue
                    edges = THRESH[oname]
                    for v in (pa[okey], pb[okey]):
                        bi = self._band_of(v, edges)
                        if bi >= 0:
                            side.append((oname, edges[bi]))
                # reject if a side band has no remaining budget
                tallies: dict = {}
                for s in side:
                    tallies[s] = tallies.get(s, 0) + 1
                fits = True
                for (oname, olo), cnt in tallies.items():
                    claimed = placed_bands.get((oname, olo), 0)
                    room = self._band_room(oname, olo, counts, claimed)
                    if room < cnt:
                        fits = False
                if not fits:
                    continue
                for s, cnt in tallies.items():
                    placed_bands[s] = placed_bands.get(s, 0) + cnt
                placed_bands[(name, lo)] += 2
                lbl = 0 if (len(new_rows) // 2) % 2 else 1
                new_rows.extend([a, b])
                new_labels.extend([lbl, lbl])
                need -= 2
        return new_rows, new_labels

    def _band_room(self, name: str, lo: float, base_counts: dict,
                   claimed: int) -> int:
        edges = THRESH[name]
        targets = [t for _, t in ISOLATION_TARGETS[name]]
        i = edges.index(lo)
        hi_target = targets[i + 1] if i + 1 < len(targets) else 0
        band_target = targets[i] - hi_target
        have = base_counts[name][i] - (base_counts[name][i + 1]
                                       if i + 1 < len(edges) else 0)
        return band_target - have - claimed

    def _tail_profile(self, key: float, target: float):
        """Ray direction and radial step whose distance profile hits the
        target value in the given metric, with a randomized shape."""
        k = int(self.rng.integers(2, 9))
        coords = self.rng.choice(CONT, size=k, replace=False)
        mags = 0.4 + 0.6 * self.rng.random(k)
        direction = np.zeros(16)
        direction[coords] = mags
        direction /= np.linalg.norm(direction)
        cur = float((np.abs(direction) ** key).mean() ** (1.0 / key))
        step = target / cur
        if step * direction.max() > 0.9:
            return None
        return direction, step

    # -- anchors and cosine fringe ---------------------------------------

    def anchors(self) -> tuple[list, list]:
        """The all-minimum row (a zero vector after scaling: cosine 0 to
        everything, the single deepest cosine cell), a companion cluster
        keeping it distance-connected, and a bridge ladder so the all-max
        row is never isolated either."""
        rows = [np.zeros(16)]
        labels = [0]
        # companions: tight, low-norm, bulk-direction cluster
        base = np.zeros(16)
        base[CONT] = 0.11
        for i in range(26):
            row = base.copy()
            row[CONT] += self.rng.normal(scale=0.012, size=len(CONT))
            row[CONT] *= 1.0 + 0.03 * self.rng.random()
            rows.append(np.clip(row, 0.0, 1.0))
            labels.append(0 if i % 2 else 1)
        # bridge ladder to the all-ones corner (same discrete pattern all
        # the way up, so no huge single-coordinate jumps appear)
        top = np.ones(16)
        bottom = np.full(16, 0.60)
        bottom[DISCRETE] = 1.0
        bottom[[CAT_RESIDENCE, CAT_SMOKING]] = 1.0
        steps = 9
        for s in range(steps + 1):
            rows.append(bottom + (top - bottom) * (s / steps))
            labels.append(1)
        return rows, labels

    def cosine_fringe(self, M: np.ndarray) -> tuple[list, list]:
        """Angular fringe at small radius: maxcos lands in the designed
        shell bands while distances to the companion cluster park in the
        low manhattan bands (these rows double as manhattan tails)."""
        cfg = CFG
        rng = self.rng
        rows: list = []
        dirs: list = []
        norms = np.linalg.norm(M, axis=1)
        live = norms > 0
        Mn = M[live] / norms[live][:, None]

        def max_cos_existing(v):
            best = float((Mn @ v).max())
            if dirs:
                best = max(best, float(np.max(np.stack(dirs) @ v)))
            return best

        def sample_direction(cos_hi, tries=6000):
            for _ in range(tries):
                theta_hi = np.arccos(0.9985)
                theta = np.arccos(max(cos_hi - 0.035, 0.80))
                ang = theta_hi + (theta - theta_hi) * rng.random()
                w = rng.normal(size=16)
                w[[CAT_RESIDENCE, CAT_SMOKING] + DISCRETE] = 0.0
                w -= (w @ self.u0) * self.u0
                w /= np.linalg.norm(w)
                v = np.cos(ang) * self.u0 + np.sin(ang) * w
                if v.min() < 0.0:
                    continue
                if max_cos_existing(v) >= cos_hi:
                    continue
                return v
            raise RuntimeError("cosine fringe sampling exhausted")

        def partner(v, target_cos):
            for _ in range(3000):
                w = rng.normal(size=16)
                w[[CAT_RESIDENCE, CAT_SMOKING] + DISCRETE] = 0.0
                w -= (w @ v) * v
                w /= np.linalg.norm(w)
                u = target_cos * v + np.sqrt(1.0 - target_cos ** 2) * w
                if u.min() >= 0.0 and max_cos_existing(u) < target_cos + 0.003:
                    return u
            raise RuntimeError("cosine fringe partner search exhausted")

        def place(v):
            dirs.append(v)
            radius = 0.30 + 0.25 * rng.random()
            rows.append(v * radius)

        for m, c in COS_SHELLS:
            remaining = m
            while remaining > 0:
                v = sample_direction(c - 0.004)
                u = partner(v, c)
                place(v)
                place(u)
                remaining -= 2
                if remaining == 1:
                    place(partner(u, c))
                    remaining -= 1
        count98, lo, hi = cfg["cos98_band"]
        remaining = count98
        while remaining > 0:
            c = lo + (hi - lo) * rng.random()
            v = sample_direction(min(c - 0.003, hi))
            u = partner(v, c)
            place(v)
            place(u)
            remaining -= 2
        labels = [0 if i % 2 else 1 for i in range(len(rows))]
        return rows, labels

    # -- assembly ---------------------------------------------------------

    def scaled_matrix(self, verbose: bool = False):
        """The full post-scaling design: bulk clusters, anchors, cosine
        fringe, distance tails; returns (matrix, labels) before the raw-unit
        mapping."""
        counts = dict(CLEAN_COUNTS)
        anchor_rows, anchor_labels = self.anchors()
        n_cos = sum(m for m, _ in COS_SHELLS) + CFG["cos98_band"][0] + 1
        est_tails = CFG["est_tail_rows"]
        reserve = {0: 0, 1: 0, 2: 0, 3: 0}
        for lbl in anchor_labels:
            reserve[lbl] += 1
        reserve[0] += (n_cos - 1) // 2 + est_tails // 2
        reserve[1] += (n_cos - 1) - (n_cos - 1) // 2 + est_tails - est_tails // 2
        bulk_counts = {
            "green": counts["green"] - reserve[0],
            "yellow": counts["yellow"] - reserve[1],
            "orange": counts["orange"] - reserve[2],
            "red": counts["red"] - reserve[3],
        }
        for k, v in bulk_counts.items():
            if v <= 0:
                raise RuntimeError(f"reserves exceed the {k} class budget")
        X, labels = self.build_bulk(bulk_counts)
        M = np.vstack([X, np.array(anchor_rows)])
        L = list(labels) + list(anchor_labels)
        fringe_rows, fringe_labels = self.cosine_fringe(M)
        M = np.vstack([M, np.array(fringe_rows)])
        L += list(fringe_labels)
        tail_rows, tail_labels = self.distance_tails(M, L)
        if tail_rows:
            M = np.vstack([M, np.array(tail_rows)])
            L += list(tail_labels)
        if verbose:
            print(f"bulk={X.shape[0]} anchors={len(anchor_rows)} "
                  f"fringe={len(fringe_rows)} tails={len(tail_rows)}")
        if len(L) != sum(CLEAN_COUNTS.values()):
            # absorb the tail-estimate error into the bulk of the majority
            # classes on the next calibration round
            diff = sum(CLEAN_COUNTS.values()) - len(L)
            if verbose:
                print(f"row-count drift: {diff}")
        return M, np.array(L, dtype=np.int32)

    def raw_rows(self):
        """Raw CSV rows (strings), shuffled, with null rows, duplicate rows
        and scattered missing cells for the preprocessing steps to chew on."""
        M, L = self.scaled_matrix()
        n = M.shape[0]
        rows = []
        for i in range(n):
            row = []
            for j in range(16):
                v = float(M[i, j])
                if j == CAT_RESIDENCE:
                    row.append(RESIDENCE_VALUES[int(round(v))])
                elif j == CAT_SMOKING:
                    row.append(SMOKING_VALUES[int(round(v * 3))])
                elif j in RAW_RANGES:
                    lo, hi, _ = RAW_RANGES[j]
                    row.append(f"{lo + v * (hi - lo):.6f}")
                elif j == 2:  # chest pain type levels 0..3
                    row.append(str(int(round(v * 3))))
                else:  # binary flags
                    row.append(str(int(round(v))))
            row.append(["green", "yellow", "orange", "red"][int(L[i])])
            rows.append(row)

        # scattered missing cells on ordinary bulk rows (mode-imputation food);
        # the affected rows sit deep inside clusters, so the imputed values
        # cannot create new isolated nodes
        core_ids = self.rng.choice(min(1500, n), size=24, replace=False)
        for i in core_ids:
            j = int(self.rng.choice([0, 3, 4, 5, 7]))
            rows[i][j] = ""
        dup_src = self.rng.choice(min(2000, n), size=12, replace=False)
        dups = [list(rows[i]) for i in dup_src]
        n_null = N_RAW_ROWS - n - len(dups)
        if n_null < 0:
            raise RuntimeError("design produced more rows than the raw total")
        nulls = [[""] * 17 for _ in range(n_null)]
        all_rows = rows + dups + nulls
        order = self.rng.permutation(len(all_rows))
        return [all_rows[i] for i in order]




def write_replica_csv(path: str, seed: int = DEFAULT_SEED) -> int:
    rows = _Replica(seed).raw_rows()
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(RAW_HEADERS)
        writer.writerows(rows)
    return len(rows)


def verify_stats(X: np.ndarray, targets: dict | None = None) -> dict:
    """Sweep every published (metric, threshold) cell on a preprocessed
    matrix; returns {metric: [(threshold, edges, isolated)]}."""
    from .simnet import SimilarityMetric, threshold_sweep

    out = {}
    labels = np.zeros(X.shape[0])
    for name, thresholds in THRESH.items():
        metric = SimilarityMetric.parse(name)
        out[name] = [(s.threshold, s.edge_count, s.isolated_node_count)
                     for s in threshold_sweep(X, labels, metric, thresholds)]
    out["cosine"] = [(s.threshold, s.edge_count, s.isolated_node_count)
                     for s in threshold_sweep(
                         X, labels, SimilarityMetric("cosine"), COS_THRESH)]
    return out
