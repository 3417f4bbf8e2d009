import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triage.ingest import (FEATURE_COLUMNS, SEVERITY_LEVELS, PatientTable,
                           ColumnMeta, SchemaError, UnknownCategoryError,
                           drop_null_and_duplicates, encode_categoricals,
                           encode_value, export_csv, impute_mode, load_csv,
                           load_dataset, minmax_normalize, preprocess_pipeline,
                           save_dataset, scale_record, smote_resample)

HEADERS = [
    "age", "gender", "chest pain type", "blood pressure", "cholesterol",
    "max heart rate", "exercise angina", "plasma glucose", "skin_thickness",
    "insulin", "bmi", "diabetes_pedigree", "hypertension", "heart_disease",
    "residence_type", "smoking_status", "triage",
]
SCHEMA = {h: name for h, (name, _) in zip(HEADERS, FEATURE_COLUMNS)}
SCHEMA["triage"] = "Severity"


def make_row(i, severity="green", residence="Urban", smoking="never smoked"):
    vals = [40 + i, i % 2, i % 4, 120 + i, 200 + 3 * i, 150 - i, i % 2,
            100 + 2 * i, 20 + (i % 9), 80 + 5 * i, 24.5 + 0.1 * i,
            0.4 + 0.01 * i, (i // 2) % 2, i % 2]
    return [str(v) for v in vals] + [residence, smoking, severity]


def write_csv(path, rows, header=None):
    with open(path, "w") as f:
        f.write(",".join(header or HEADERS) + "\n")
        for r in rows:
            f.write(",".join(r) + "\n")
    return str(path)


@pytest.fixture
def five_row_csv(tmp_path):
    rows = [make_row(i, severity=SEVERITY_LEVELS[i % 4]) for i in range(5)]
    return write_csv(tmp_path / "five.csv", rows), rows


def test_load_csv_five_row_fixture(five_row_csv):
    path, rows = five_row_csv
    t = load_csv(path, SCHEMA)
    assert t.n_rows == 5
    assert t.n_features == 16
    # exact cell equality against the authored fixture
    for i, row in enumerate(rows):
        for j, (name, kind) in enumerate(FEATURE_COLUMNS):
            expected = float(row[j]) if kind == "numeric" else row[j]
            assert t.rows[i][j] == expected
        assert t.rows[i][16] == row[16]


def test_load_csv_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ValueError, match="no rows"):
        load_csv(str(path), SCHEMA)
    path.write_text(",".join(HEADERS) + "\n")
    with pytest.raises(ValueError, match="no rows"):
        load_csv(str(path), SCHEMA)


def test_load_csv_missing_file():
    with pytest.raises(OSError):
        load_csv("/nonexistent/file.csv", SCHEMA)


def test_load_csv_unmapped_column(tmp_path):
    path = write_csv(tmp_path / "x.csv", [make_row(0)],
                     header=HEADERS[:-1] + ["mystery"])
    with pytest.raises(SchemaError, match="unmapped"):
        load_csv(path, SCHEMA)


def test_load_csv_missing_column(tmp_path):
    rows = [r[:-1] for r in [make_row(0)]]
    path = write_csv(tmp_path / "x.csv", rows, header=HEADERS[:-1])
    with pytest.raises(SchemaError, match="missing"):
        load_csv(path, SCHEMA)


def test_load_csv_bad_arity(tmp_path):
    path = write_csv(tmp_path / "x.csv", [make_row(0) + ["extra"]])
    with pytest.raises(ValueError, match="cells"):
        load_csv(path, SCHEMA)


def test_drop_null_and_duplicates_counts(tmp_path):
    rows = [make_row(0), make_row(0),  # duplicate pair
            make_row(1), make_row(2),
            [""] * 17,                  # fully null
            make_row(3)[:-1] + [""],    # missing label counts as null-dropped
            make_row(1)]                # another duplicate
    path = write_csv(tmp_path / "x.csv", rows)
    t, report = drop_null_and_duplicates(load_csv(path, SCHEMA))
    assert report.rows_dropped_null == 2
    assert report.rows_dropped_duplicate == 2
    assert t.n_rows == 3


def test_drop_null_identity_on_clean_table(five_row_csv):
    t = load_csv(five_row_csv[0], SCHEMA)
    t2, report = drop_null_and_duplicates(t)
    assert t2.rows == t.rows
    assert report.rows_dropped_null == 0
    assert report.rows_dropped_duplicate == 0


def _mini_table(values, kind="numeric"):
    cols = [ColumnMeta("c", kind), ColumnMeta("Severity", "target")]
    return PatientTable(cols, [[v, "green"] for v in values])


def test_impute_mode_unambiguous():
    t, n = impute_mode(_mini_table([1.0, 1.0, 2.0, None]))
    assert n == 1
    assert [r[0] for r in t.rows] == [1.0, 1.0, 2.0, 1.0]


def test_impute_mode_identity_without_missing():
    t, n = impute_mode(_mini_table([1.0, 2.0]))
    assert n == 0
    assert [r[0] for r in t.rows] == [1.0, 2.0]


def test_impute_mode_tie_breaks_to_smallest():
    t, _ = impute_mode(_mini_table([1.0, 2.0, None]))
    assert t.rows[2][0] == 1.0
    t2, _ = impute_mode(_mini_table(["b", "a", None], kind="categorical"))
    assert t2.rows[2][0] == "a"


def test_impute_mode_all_missing_column():
    with pytest.raises(ValueError, match="entirely missing"):
        impute_mode(_mini_table([None, None]))


def test_encode_categoricals_sorted_order():
    cols = [ColumnMeta("Smoking status", "categorical"),
            ColumnMeta("Severity", "target")]
    values = ["never smoked", "smoke", "previously smoked", "Unknown"]
    t = PatientTable(cols, [[v, s] for v, s in
                            zip(values, ["green", "yellow", "orange", "red"])])
    t2, encoders = encode_categoricals(t)
    assert encoders["Smoking status"] == sorted(values)
    expected = {v: float(i) for i, v in enumerate(sorted(values))}
    for row, v in zip(t2.rows, values):
        assert row[0] == expected[v]
    assert [r[1] for r in t2.rows] == [0.0, 1.0, 2.0, 3.0]


def test_encode_categoricals_residence_fixture():
    cols = [ColumnMeta("Residence type", "categorical"),
            ColumnMeta("Severity", "target")]
    t = PatientTable(cols, [["Urban", "green"], ["Rural", "green"],
                            ["Urban", "green"]])
    t2, _ = encode_categoricals(t)
    assert [r[0] for r in t2.rows] == [1.0, 0.0, 1.0]


def test_encode_categoricals_single_category():
    cols = [ColumnMeta("Residence type", "categorical"),
            ColumnMeta("Severity", "target")]
    t = PatientTable(cols, [["Urban", "green"], ["Urban", "red"]])
    t2, _ = encode_categoricals(t)
    assert [r[0] for r in t2.rows] == [0.0, 0.0]


def test_encode_value_unseen_category():
    with pytest.raises(UnknownCategoryError):
        encode_value("Residence type", "Mars", {"Residence type": ["Rural", "Urban"]})
    assert encode_value("Residence type", "Urban",
                        {"Residence type": ["Rural", "Urban"]}) == 1.0


def test_smote_balanced_input_unchanged():
    rng = np.random.default_rng(0)
    X = rng.random((40, 4))
    y = np.repeat(np.arange(4), 10).astype(np.int32)
    X2, y2 = smote_resample(X, y, k=3, seed=1)
    np.testing.assert_array_equal(X2, X)
    np.testing.assert_array_equal(y2, y)


def test_smote_two_member_class_stays_on_segment():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.random((10, 3)), [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]])
    y = np.array([0] * 10 + [1, 1], dtype=np.int32)
    X2, y2 = smote_resample(X, y, k=1, seed=2)
    assert int((y2 == 1).sum()) == 10
    synth = X2[12:]
    a, b = X[10], X[11]
    for s in synth:
        # convex combination of the only two class members, componentwise
        u = (s - a) / (b - a)
        assert np.allclose(u, u[0])
        assert 0.0 <= u[0] <= 1.0


def test_smote_deterministic():
    rng = np.random.default_rng(2)
    X = rng.random((30, 5))
    y = np.array([0] * 20 + [1] * 10, dtype=np.int32)
    out1 = smote_resample(X, y, k=3, seed=7)
    out2 = smote_resample(X, y, k=3, seed=7)
    np.testing.assert_array_equal(out1[0], out2[0])
    np.testing.assert_array_equal(out1[1], out2[1])


def test_smote_class_too_small():
    X = np.random.default_rng(3).random((12, 4))
    y = np.array([0] * 10 + [1] * 2, dtype=np.int32)
    with pytest.raises(ValueError, match="needs"):
        smote_resample(X, y, k=5, seed=0)


def test_smote_locality_invariant():
    rng = np.random.default_rng(4)
    X = rng.random((60, 6))
    y = np.array([0] * 40 + [1] * 20, dtype=np.int32)
    X2, y2 = smote_resample(X, y, k=5, seed=9)
    minority = X[40:]
    for s in X2[60:]:
        seed_dists = np.linalg.norm(minority - s, axis=1)
        nearest = seed_dists.min()
        # synthetic point is no farther from its seed than that seed's
        # chosen neighbor: within the minority diameter of some member
        assert nearest <= np.linalg.norm(minority[:, None] - minority, axis=2).max()


def test_minmax_normalize_affine():
    fm = minmax_normalize(np.array([[2.0], [4.0], [6.0]]))
    np.testing.assert_allclose(fm.values[:, 0], [0.0, 0.5, 1.0])
    assert fm.column_mins[0] == 2.0 and fm.column_maxs[0] == 6.0


def test_minmax_normalize_binary_unchanged():
    fm = minmax_normalize(np.array([[0.0], [1.0], [1.0]]))
    np.testing.assert_array_equal(fm.values[:, 0], [0.0, 1.0, 1.0])


def test_minmax_normalize_constant_column():
    fm = minmax_normalize(np.array([[7.0], [7.0]]))
    np.testing.assert_array_equal(fm.values[:, 0], [0.0, 0.0])


def test_scale_record_clamps_and_flags():
    scaled, clamped = scale_record(np.array([5.0, -1.0]),
                                   np.array([0.0, 0.0]), np.array([2.0, 2.0]))
    np.testing.assert_array_equal(scaled, [1.0, 0.0])
    assert clamped == [0, 1]


@given(st.lists(st.floats(min_value=-100, max_value=100, allow_nan=False),
                min_size=2, max_size=30))
@settings(max_examples=50, deadline=None)
def test_minmax_range_property(values):
    fm = minmax_normalize(np.array(values)[:, None])
    assert fm.values.min() >= 0.0
    assert fm.values.max() <= 1.0


def make_imbalanced_csv(tmp_path, n_green=30, n_yellow=14, n_orange=10, n_red=8):
    rows = []
    i = 0
    for count, sev in [(n_green, "green"), (n_yellow, "yellow"),
                       (n_orange, "orange"), (n_red, "red")]:
        for _ in range(count):
            rows.append(make_row(i, severity=sev,
                                 residence="Urban" if i % 3 else "Rural",
                                 smoking=["never smoked", "smoke",
                                          "previously smoked", "Unknown"][i % 4]))
            i += 1
    return write_csv(tmp_path / "imb.csv", rows)


def test_pipeline_balances_and_scales(tmp_path):
    path = make_imbalanced_csv(tmp_path)
    ds = preprocess_pipeline(path, SCHEMA, seed=11)
    counts = np.bincount(ds.y, minlength=4)
    assert counts.max() == counts.min() == 30
    assert ds.X.min() >= 0.0 and ds.X.max() <= 1.0
    live = ds.column_maxs > ds.column_mins
    np.testing.assert_allclose(ds.X[:, live].min(axis=0), 0.0, atol=1e-15)
    np.testing.assert_allclose(ds.X[:, live].max(axis=0), 1.0, atol=1e-15)
    assert ds.report.class_counts_before == [30, 14, 10, 8]
    assert ds.report.class_counts_after == [30, 30, 30, 30]


def test_pipeline_deterministic(tmp_path):
    path = make_imbalanced_csv(tmp_path)
    a = preprocess_pipeline(path, SCHEMA, seed=5)
    b = preprocess_pipeline(path, SCHEMA, seed=5)
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)


def test_pipeline_idempotent_on_own_output(tmp_path):
    path = make_imbalanced_csv(tmp_path)
    ds = preprocess_pipeline(path, SCHEMA, seed=3)
    out_csv = tmp_path / "round.csv"
    export_csv(ds, str(out_csv))
    schema2 = {name: name for name, _ in FEATURE_COLUMNS}
    schema2["Severity"] = "Severity"
    ds2 = preprocess_pipeline(str(out_csv), schema2, seed=3)
    np.testing.assert_array_equal(ds2.X, ds.X)
    np.testing.assert_array_equal(ds2.y, ds.y)


def test_dataset_roundtrip(tmp_path):
    path = make_imbalanced_csv(tmp_path)
    ds = preprocess_pipeline(path, SCHEMA, seed=13)
    binpath = tmp_path / "data.bin"
    save_dataset(ds, str(binpath))
    ds2 = load_dataset(str(binpath))
    np.testing.assert_array_equal(ds2.X, ds.X)
    np.testing.assert_array_equal(ds2.y, ds.y)
    np.testing.assert_array_equal(ds2.column_mins, ds.column_mins)
    assert ds2.encoders == ds.encoders
    assert ds2.report.__dict__ == ds.report.__dict__
    assert ds2.column_names == ds.column_names
