"""Telemetry: feature layout, profile sampling, dataset generation, scaling,
stratified splitting, and lossless CSV/scaler round trips."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtdlite.errors import ConfigError, EndOfStream, FormatError, StratifyError
from mtdlite.labels import DEFAULT_CLASSES
from mtdlite.profiles import default_profiles
from mtdlite.telemetry import (
    DEFAULT_WINDOW_S,
    FAMILY_LAYOUT,
    N_FEATURES,
    Dataset,
    FeatureVector,
    SwitchableSource,
    SyntheticSource,
    class_seed,
    collect_window,
    csv_columns,
    family_slices,
    feature_names,
    generate_dataset,
    load_dataset,
    load_scaler,
    minmax_apply,
    minmax_fit,
    save_dataset,
    save_scaler,
    scale_dataset,
    split,
)


def test_family_layout_covers_eighty_features():
    assert sum(width for _, width in FAMILY_LAYOUT) == N_FEATURES == 80
    covered = sorted(i for _, sl in family_slices()
                     for i in range(sl.start, sl.stop))
    assert covered == list(range(80))


def test_feature_names_and_csv_columns():
    names = feature_names()
    assert len(names) == 80
    assert names[0] == "net_00"
    assert len(set(names)) == 80
    cols = csv_columns()
    assert cols[0] == "f000" and cols[-1] == "f079" and len(cols) == 80


def test_feature_vector_validation():
    FeatureVector(np.zeros(80), window_start=0.0, label="normal")
    with pytest.raises(Exception):
        FeatureVector(np.zeros(79), window_start=0.0, label="normal")
    with pytest.raises(Exception):
        FeatureVector(np.full(80, np.nan), window_start=0.0, label="normal")


def test_profiles_sample_deterministic_and_nonnegative():
    profiles = default_profiles(confusable=True)
    assert [p.label for p in profiles] == list(DEFAULT_CLASSES)
    p = profiles[0]
    a = p.sample(np.random.default_rng(5), 100)
    b = p.sample(np.random.default_rng(5), 100)
    assert np.array_equal(a, b)
    assert a.shape == (100, 80)
    assert (a >= 0.0).all()


def test_generate_dataset_shape_and_determinism():
    profiles = default_profiles(confusable=True)
    d1 = generate_dataset(profiles, n_per_class=10, seed=7)
    d2 = generate_dataset(profiles, n_per_class=10, seed=7)
    assert len(d1) == 80
    x1, y1 = d1.as_arrays()
    x2, y2 = d2.as_arrays()
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    assert d1.classes == list(DEFAULT_CLASSES)


def test_class_streams_are_independent_of_other_classes():
    profiles = default_profiles(confusable=True)
    full = generate_dataset(profiles, n_per_class=6, seed=11)
    solo = generate_dataset([profiles[2]], n_per_class=6, seed=11)
    x_full, _ = full.as_arrays()
    x_solo, _ = solo.as_arrays()
    label = profiles[2].label
    rows = [i for i, v in enumerate(full.vectors) if v.label == label]
    assert np.array_equal(x_full[rows], x_solo)


def test_duplicate_profile_labels_rejected():
    p = default_profiles(confusable=True)[0]
    with pytest.raises(ConfigError):
        generate_dataset([p, p], n_per_class=2, seed=0)


def test_synthetic_source_finite_and_switchable():
    profiles = default_profiles(confusable=True)
    src = SyntheticSource(profiles[0], seed=3, max_windows=2)
    collect_window(src, 5.0)
    collect_window(src, 5.0)
    with pytest.raises(EndOfStream):
        collect_window(src, 5.0)

    sw = SwitchableSource(profiles, seed=3, initial="normal")
    v0 = collect_window(sw, 5.0)
    sw.set_profile("bashlite")
    v1 = collect_window(sw, 5.0)
    assert v0.label == "normal" and v1.label == "bashlite"
    assert v0.window_start == 0.0 and v1.window_start == 5.0
    with pytest.raises(ConfigError):
        sw.set_profile("nope")


def test_minmax_scaling_properties():
    rng = np.random.default_rng(0)
    x = rng.normal(50, 10, size=(40, 80))
    x[:, 7] = 3.25  # constant feature
    profiles = default_profiles(confusable=True)
    vectors = [FeatureVector(row, window_start=float(i) * 5.0, label="normal")
               for i, row in enumerate(np.abs(x))]
    ds = Dataset(vectors, ["normal"])
    scaler = minmax_fit(ds)
    scaled, _ = scale_dataset(ds, scaler).as_arrays()
    assert scaled.min() >= 0.0 and scaled.max() <= 1.0
    assert (scaled[:, 7] == 0.0).all()
    # out-of-range values are not clamped
    probe = np.abs(x[0]) + 1000.0
    out = minmax_apply(scaler, probe)
    assert out.max() > 1.0


def test_split_is_stratified_and_exact():
    profiles = default_profiles(confusable=True)
    ds = generate_dataset(profiles, n_per_class=20, seed=5)
    train, test = split(ds, train_fraction=0.8, seed=5)
    assert len(train) == 16 * len(profiles)
    assert len(test) == 4 * len(profiles)
    for part in (train, test):
        labels = [v.label for v in part.vectors]
        for cls in ds.classes:
            assert labels.count(cls) == (16 if part is train else 4)
    # same seed, same partition
    train2, _ = split(ds, train_fraction=0.8, seed=5)
    assert [v.window_start for v in train2.vectors] == \
        [v.window_start for v in train.vectors]


@settings(max_examples=40, deadline=None)
@given(n=st.integers(min_value=2, max_value=31),
       frac=st.floats(min_value=0.05, max_value=0.95),
       seed=st.integers(min_value=0, max_value=2**31 - 1))
def test_split_never_empties_a_class(n, frac, seed):
    profiles = default_profiles(confusable=True)[:3]
    ds = generate_dataset(profiles, n_per_class=n, seed=1)
    train, test = split(ds, train_fraction=frac, seed=seed)
    for cls in ds.classes:
        assert any(v.label == cls for v in train.vectors)
        assert any(v.label == cls for v in test.vectors)
    assert len(train) + len(test) == len(ds)


def test_split_rejects_singleton_class():
    profiles = default_profiles(confusable=True)[:1]
    ds = generate_dataset(profiles, n_per_class=1, seed=1)
    with pytest.raises(StratifyError):
        split(ds, train_fraction=0.5, seed=0)


def test_dataset_csv_round_trip_lossless(tmp_path):
    profiles = default_profiles(confusable=True)
    ds = generate_dataset(profiles, n_per_class=5, seed=9)
    path = tmp_path / "ds.csv"
    save_dataset(ds, path)
    back = load_dataset(path)
    x0, y0 = ds.as_arrays()
    x1, y1 = back.as_arrays()
    assert np.array_equal(x0, x1)  # bit-exact, not merely close
    assert np.array_equal(y0, y1)
    assert back.classes == ds.classes


def test_dataset_csv_bad_header_and_line_numbers(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("nope,f000\n", encoding="utf-8")
    with pytest.raises(FormatError):
        load_dataset(path)
    good_header = "label," + ",".join(csv_columns())
    path.write_text(good_header + "\n" + "normal,1.0\n", encoding="utf-8")
    with pytest.raises(FormatError) as err:
        load_dataset(path)
    assert "2" in str(err.value)  # failing line is named


def test_scaler_round_trip(tmp_path):
    profiles = default_profiles(confusable=True)
    ds = generate_dataset(profiles, n_per_class=5, seed=2)
    scaler = minmax_fit(ds)
    path = tmp_path / "scaler.txt"
    save_scaler(scaler, path)
    assert path.read_text(encoding="utf-8").startswith("minmax v1 80")
    back = load_scaler(path)
    assert np.array_equal(scaler.mins, back.mins)
    assert np.array_equal(scaler.maxs, back.maxs)


def test_class_seed_is_stable_and_distinct():
    assert class_seed(42, "normal") == class_seed(42, "normal")
    assert class_seed(42, "normal") != class_seed(42, "bashlite")
    assert class_seed(42, "normal") != class_seed(43, "normal")


def test_collect_window_duration_must_be_positive():
    profiles = default_profiles(confusable=True)
    src = SyntheticSource(profiles[0], seed=1)
    with pytest.raises(ConfigError):
        collect_window(src, 0.0)
    v = collect_window(src, DEFAULT_WINDOW_S)
    assert v.features.shape == (80,)
