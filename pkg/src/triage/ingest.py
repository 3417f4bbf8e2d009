"""Load the patient-priority CSV and apply the five preprocessing steps:
drop fully-null and duplicate rows, impute scattered missing cells with the
column mode, label-encode categoricals, balance classes with SMOTE, and
min-max scale every column into [0,1].

All steps are deterministic under the pipeline seed. Scaling parameters and
categorical encodings are retained for inference-time reuse.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field

import numpy as np

SEVERITY_LEVELS = ["green", "yellow", "orange", "red"]  # fixed 0..3 mapping

# canonical feature columns, in the order they appear in the feature matrix
FEATURE_COLUMNS = [
    ("Age", "numeric"),
    ("Gender", "numeric"),
    ("Chest pain type", "numeric"),
    ("Blood pressure", "numeric"),
    ("Cholesterol", "numeric"),
    ("Max heart rate", "numeric"),
    ("Exercise angina", "numeric"),
    ("Plasma glucose", "numeric"),
    ("Skin thickness", "numeric"),
    ("Insulin", "numeric"),
    ("BMI", "numeric"),
    ("Diabetes Pedigree", "numeric"),
    ("Hypertension", "numeric"),
    ("Heart disease", "numeric"),
    ("Residence type", "categorical"),
    ("Smoking status", "categorical"),
]
TARGET_COLUMN = "Severity"
N_FEATURES = len(FEATURE_COLUMNS)

_MISSING_TOKENS = {"", "na", "nan", "null", "none"}
_DATA_MAGIC = b"PTRD"
_DATA_VERSION = 1


class SchemaError(ValueError):
    """CSV header cannot be bound to the canonical columns."""


class UnknownCategoryError(ValueError):
    """A categorical value was never seen during preprocessing."""

    def __init__(self, column: str, value):
        self.column = column
        self.value = value
        super().__init__(f"unknown category {value!r} for column {column!r}")


@dataclass
class ColumnMeta:
    name: str
    kind: str  # numeric | categorical | target


@dataclass
class PatientTable:
    columns: list[ColumnMeta]
    rows: list[list]

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_features(self) -> int:
        return sum(1 for c in self.columns if c.kind != "target")

    def column_index(self, name: str) -> int:
        for i, c in enumerate(self.columns):
            if c.name == name:
                return i
        raise KeyError(name)


@dataclass
class FeatureMatrix:
    values: np.ndarray  # n x 16 float64 in [0,1]
    column_mins: np.ndarray
    column_maxs: np.ndarray


@dataclass
class PreprocessReport:
    rows_dropped_null: int = 0
    rows_dropped_duplicate: int = 0
    cells_imputed: int = 0
    class_counts_before: list[int] = field(default_factory=lambda: [0, 0, 0, 0])
    class_counts_after: list[int] = field(default_factory=lambda: [0, 0, 0, 0])
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


@dataclass
class Dataset:
    """Fully preprocessed matrix plus everything inference needs to encode
    and scale a raw record the same way."""

    X: np.ndarray  # n x 16 float64 in [0,1]
    y: np.ndarray  # int32 in {0..3}
    column_names: list[str]
    column_kinds: list[str]
    column_mins: np.ndarray
    column_maxs: np.ndarray
    encoders: dict[str, list[str]]  # categorical column -> sorted value list
    seed: int
    report: PreprocessReport

    @property
    def feature_matrix(self) -> FeatureMatrix:
        return FeatureMatrix(self.X, self.column_mins, self.column_maxs)


# ---------------------------------------------------------------------------
# loading


def load_schema(path: str) -> dict:
    with open(path) as f:
        cfg = json.load(f)
    if "columns" not in cfg:
        raise SchemaError("schema config must carry a 'columns' mapping")
    return cfg["columns"]


def _parse_cell(text: str, kind: str, column: str, row_no: int):
    stripped = text.strip()
    if stripped.lower() in _MISSING_TOKENS:
        return None
    if kind == "numeric":
        try:
            return float(stripped)
        except ValueError:
            raise ValueError(
                f"row {row_no}: column {column!r} has non-numeric value {text!r}")
    return stripped


def load_csv(path: str, schema: dict | str) -> PatientTable:
    """Read the raw CSV, binding actual headers to canonical columns via the
    mapping config. Unknown columns are rejected; row order is preserved."""
    if isinstance(schema, str):
        schema = load_schema(schema)
    canonical = {name: kind for name, kind in FEATURE_COLUMNS}
    canonical[TARGET_COLUMN] = "target"

    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: no rows")
        mapped = []
        for h in header:
            h = h.strip()
            if h not in schema:
                raise SchemaError(f"unmapped CSV column {h!r}")
            target = schema[h]
            if target not in canonical:
                raise SchemaError(f"schema maps {h!r} to unknown column {target!r}")
            mapped.append(target)
        missing = set(canonical) - set(mapped)
        if missing:
            raise SchemaError(f"CSV is missing columns: {sorted(missing)}")
        if len(mapped) != len(set(mapped)):
            raise SchemaError("schema maps two CSV columns to the same target")

        order = [name for name, _ in FEATURE_COLUMNS] + [TARGET_COLUMN]
        pos = [mapped.index(name) for name in order]
        kinds = [canonical[name] for name in order]

        rows = []
        for row_no, raw in enumerate(reader, start=2):
            if len(raw) != len(mapped):
                raise ValueError(
                    f"row {row_no}: expected {len(mapped)} cells, got {len(raw)}")
            rows.append([_parse_cell(raw[p], kinds[i], order[i], row_no)
                         for i, p in enumerate(pos)])
    if not rows:
        raise ValueError(f"{path}: no rows")
    columns = [ColumnMeta(name, kind) for name, kind in FEATURE_COLUMNS]
    columns.append(ColumnMeta(TARGET_COLUMN, "target"))
    return PatientTable(columns, rows)


# ---------------------------------------------------------------------------
# the five steps


def drop_null_and_duplicates(t: PatientTable) -> tuple[PatientTable, PreprocessReport]:
    """Remove fully-null rows, rows with no usable label, and exact duplicate
    rows (first occurrence wins)."""
    report = PreprocessReport()
    target_idx = t.column_index(TARGET_COLUMN)
    seen = set()
    kept = []
    for row in t.rows:
        if all(v is None for v in row) or row[target_idx] is None:
            report.rows_dropped_null += 1
            continue
        key = tuple(row)
        if key in seen:
            report.rows_dropped_duplicate += 1
            continue
        seen.add(key)
        kept.append(row)
    if not kept:
        raise ValueError("no rows left after null/duplicate removal")
    return PatientTable(t.columns, kept), report


def impute_mode(t: PatientTable) -> tuple[PatientTable, int]:
    """Fill each missing cell with its column's most frequent value; ties go
    to the smallest (numeric) or lexicographically first (categorical)."""
    modes = []
    for j, col in enumerate(t.columns):
        values = [row[j] for row in t.rows if row[j] is not None]
        if not values:
            raise ValueError(f"column {col.name!r} is entirely missing")
        counts: dict = {}
        for v in values:
            counts[v] = counts.get(v, 0) + 1
        modes.append(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0][0])
    imputed = 0
    rows = []
    for row in t.rows:
        new = list(row)
        for j, v in enumerate(new):
            if v is None:
                new[j] = modes[j]
                imputed += 1
        rows.append(new)
    return PatientTable(t.columns, rows), imputed


def encode_categoricals(t: PatientTable) -> tuple[PatientTable, dict[str, list[str]]]:
    """Replace categorical values by their index in sorted-value order and the
    target by the fixed green=0, yellow=1, orange=2, red=3 mapping.

    A categorical column whose values are all numeric already (e.g. the
    pipeline's own re-serialized output) passes through unchanged, matching
    label-encoder behavior on numeric input.
    """
    encoders: dict[str, list[str]] = {}
    rows = [list(r) for r in t.rows]
    for j, col in enumerate(t.columns):
        if col.kind == "categorical":
            values = sorted({str(row[j]) for row in rows})
            try:
                [float(v) for v in values]
                numeric_already = True
            except ValueError:
                numeric_already = False
            if numeric_already:
                for row in rows:
                    row[j] = float(row[j])
                continue
            lookup = {v: float(i) for i, v in enumerate(values)}
            encoders[col.name] = values
            for row in rows:
                row[j] = lookup[str(row[j])]
        elif col.kind == "target":
            lookup = {name: float(i) for i, name in enumerate(SEVERITY_LEVELS)}
            for row in rows:
                v = str(row[j]).strip().lower()
                if v not in lookup:
                    raise ValueError(f"unknown severity label {row[j]!r}")
                row[j] = lookup[v]
    return PatientTable(t.columns, rows), encoders


def encode_value(column: str, value, encoders: dict[str, list[str]]) -> float:
    """Encode one categorical value with a stored encoder (inference path)."""
    values = encoders[column]
    v = str(value)
    try:
        return float(values.index(v))
    except ValueError:
        raise UnknownCategoryError(column, value)


def smote_resample(X: np.ndarray, y: np.ndarray, k: int = 5,
                   seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Oversample every minority class up to the majority count.

    Each synthetic row is x + u*(x_nn - x) for a class member x, one of its k
    nearest same-class neighbors (Euclidean) and u ~ U[0,1]; deterministic
    under the seed.
    """
    if k < 1:
        raise ValueError("smote requires k >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int32)
    classes, counts = np.unique(y, return_counts=True)
    target = int(counts.max())
    rng = np.random.default_rng(seed)
    new_rows = [X]
    new_labels = [y]
    for c, count in zip(classes, counts):
        need = target - int(count)
        if need == 0:
            continue
        if count < k + 1:
            raise ValueError(
                f"class {c} has {count} members; SMOTE with k={k} needs {k + 1}")
        idx = np.flatnonzero(y == c)
        Xc = X[idx]
        sq = (Xc * Xc).sum(axis=1)
        d2 = sq[:, None] + sq[None, :] - 2.0 * (Xc @ Xc.T)
        np.fill_diagonal(d2, np.inf)
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
        synth = np.empty((need, X.shape[1]))
        for i in range(need):
            s = i % idx.size
            nb = nn[s, rng.integers(0, k)]
            u = rng.random()
            synth[i] = Xc[s] + u * (Xc[nb] - Xc[s])
        new_rows.append(synth)
        new_labels.append(np.full(need, c, dtype=np.int32))
    return np.vstack(new_rows), np.concatenate(new_labels)


def minmax_normalize(X: np.ndarray) -> FeatureMatrix:
    """Affine per-column map to [0,1]; constant columns map to 0."""
    X = np.asarray(X, dtype=np.float64)
    mins = X.min(axis=0)
    maxs = X.max(axis=0)
    span = maxs - mins
    out = np.zeros_like(X)
    live = span > 0.0
    out[:, live] = (X[:, live] - mins[live]) / span[live]
    return FeatureMatrix(out, mins, maxs)


def scale_record(x: np.ndarray, mins: np.ndarray, maxs: np.ndarray,
                 clamp: bool = True) -> tuple[np.ndarray, list[int]]:
    """Scale one encoded record with stored parameters; out-of-range values
    are clamped into [0,1] and their column indices reported."""
    span = maxs - mins
    out = np.zeros_like(x, dtype=np.float64)
    live = span > 0.0
    out[live] = (x[live] - mins[live]) / span[live]
    clamped = []
    if clamp:
        for j in np.flatnonzero((out < 0.0) | (out > 1.0)):
            clamped.append(int(j))
        np.clip(out, 0.0, 1.0, out=out)
    return out, clamped


def preprocess_pipeline(path: str, schema: dict | str, seed: int,
                        smote_k: int = 5) -> Dataset:
    """The five steps in paper order; fully deterministic under the seed."""
    table = load_csv(path, schema)
    table, report = drop_null_and_duplicates(table)
    table, report.cells_imputed = impute_mode(table)
    table, encoders = encode_categoricals(table)
    report.seed = seed

    target_idx = table.column_index(TARGET_COLUMN)
    raw = np.array([[float(v) for v in row] for row in table.rows])
    feature_idx = [j for j in range(len(table.columns)) if j != target_idx]
    X = raw[:, feature_idx]
    y = raw[:, target_idx].astype(np.int32)
    report.class_counts_before = [int((y == c).sum()) for c in range(4)]

    X, y = smote_resample(X, y, k=smote_k, seed=seed)
    report.class_counts_after = [int((y == c).sum()) for c in range(4)]

    fm = minmax_normalize(X)
    names = [c.name for c in table.columns if c.kind != "target"]
    kinds = [c.kind for c in table.columns if c.kind != "target"]
    return Dataset(fm.values, y, names, kinds, fm.column_mins, fm.column_maxs,
                   encoders, seed, report)


# ---------------------------------------------------------------------------
# persistence


def save_dataset(ds: Dataset, path: str):
    meta = json.dumps({
        "column_names": ds.column_names,
        "column_kinds": ds.column_kinds,
        "encoders": ds.encoders,
        "seed": ds.seed,
        "report": ds.report.__dict__,
        "severity_levels": SEVERITY_LEVELS,
    }).encode()
    n, d = ds.X.shape
    with open(path, "wb") as f:
        f.write(_DATA_MAGIC)
        f.write(struct.pack("<IQQ", _DATA_VERSION, n, d))
        f.write(ds.X.astype("<f8").tobytes())
        f.write(ds.y.astype("<i4").tobytes())
        f.write(ds.column_mins.astype("<f8").tobytes())
        f.write(ds.column_maxs.astype("<f8").tobytes())
        f.write(struct.pack("<Q", len(meta)))
        f.write(meta)


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != _DATA_MAGIC:
        raise ValueError(f"not a preprocessed-dataset file: {path}")
    version, n, d = struct.unpack("<IQQ", raw[4:24])
    if version != _DATA_VERSION:
        raise ValueError(f"unsupported dataset format version {version}")
    off = 24

    def take(dtype, count):
        nonlocal off
        size = np.dtype(dtype).itemsize * count
        arr = np.frombuffer(raw[off:off + size], dtype=dtype)
        if arr.size != count:
            raise ValueError("truncated dataset file")
        off += size
        return arr.copy()

    X = take("<f8", n * d).reshape(n, d)
    y = take("<i4", n)
    mins = take("<f8", d)
    maxs = take("<f8", d)
    meta_len = struct.unpack("<Q", raw[off:off + 8])[0]
    meta = json.loads(raw[off + 8:off + 8 + meta_len].decode())
    report = PreprocessReport(**meta["report"])
    return Dataset(X, y.astype(np.int32), meta["column_names"],
                   meta["column_kinds"], mins, maxs, meta["encoders"],
                   meta["seed"], report)


def export_csv(ds: Dataset, path: str):
    """Inspection copy of the preprocessed matrix; floats keep full precision
    so a re-ingested copy is bit-identical."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(ds.column_names + [TARGET_COLUMN])
        for i in range(ds.X.shape[0]):
            row = [format(v, ".17g") for v in ds.X[i]]
            row.append(SEVERITY_LEVELS[ds.y[i]])
            writer.writerow(row)
