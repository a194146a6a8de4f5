import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msfpca.dataset import (
    ObservationRecord,
    load_json,
    load_long_records,
    read_csv,
    save_json,
    standardize_and_rescale,
    write_csv,
)
from msfpca.errors import DegenerateTimeRange, DuplicateObservation, EmptyInput, NonFiniteValue, ZeroVariance

from conftest import make_dataset


def rec(s, b, t, v):
    return ObservationRecord(s, b, t, v)


def test_single_record():
    ds = load_long_records([rec("s1", "b1", 0.0, 2.0)])
    assert ds.n_subjects == 1 and ds.n_blocks == 1
    assert ds.counts().tolist() == [[1]]


def test_duplicate_rejected():
    with pytest.raises(DuplicateObservation):
        load_long_records([rec("s1", "b1", 0.5, 1.0), rec("s1", "b1", 0.5, 2.0)])


def test_empty_and_nonfinite():
    with pytest.raises(EmptyInput):
        load_long_records([])
    with pytest.raises(NonFiniteValue):
        load_long_records([rec("s1", "b1", 0.5, float("nan"))])


def test_grouping_counts():
    rng = np.random.default_rng(0)
    rows = [rec(f"s{i}", f"b{p}", float(rng.uniform()), float(rng.normal())) for i in range(100) for p in range(3)]
    ds = load_long_records(rows)
    assert (ds.n_subjects, ds.n_blocks, int(ds.counts().sum())) == (100, 3, 300)


def test_order_of_first_appearance_and_sorting():
    ds = load_long_records([rec("s2", "y", 3.0, 1.0), rec("s1", "x", 1.0, 0.0), rec("s2", "y", 1.0, 2.0)])
    assert ds.subjects == ("s2", "s1") and ds.blocks == ("y", "x")
    assert ds.times[0][0].tolist() == [1.0, 3.0]
    assert ds.values[0][0].tolist() == [2.0, 1.0]
    assert ds.counts().tolist() == [[2, 0], [0, 1]]


def test_two_point_standardization():
    # sd with the n - 1 denominator is sqrt(2), so {1, 3} maps to -+1/sqrt(2)
    ds = standardize_and_rescale(load_long_records([rec("a", "b", 0.0, 1.0), rec("c", "b", 1.0, 3.0)]))
    np.testing.assert_allclose(np.concatenate([ds.values[0][0], ds.values[1][0]]), [-(0.5**0.5), 0.5**0.5])
    assert ds.sds[0] == pytest.approx(2**0.5)


def test_zero_variance():
    rows = [rec(f"s{i}", "b", float(i), 2.0) for i in range(3)]
    with pytest.raises(ZeroVariance):
        standardize_and_rescale(load_long_records(rows))


def test_degenerate_time_range():
    rows = [rec(f"s{i}", "b", 1.0, float(i)) for i in range(3)]
    with pytest.raises(DegenerateTimeRange):
        standardize_and_rescale(load_long_records(rows))


def test_affine_time_map():
    rows = [rec("s", "b", t, v) for t, v in ((10.0, 1.0), (20.0, 2.0), (30.0, 4.0))]
    ds = standardize_and_rescale(load_long_records(rows))
    np.testing.assert_allclose(ds.times[0][0], [0.0, 0.5, 1.0])


def test_global_time_range_across_blocks():
    rows = [rec("s", "a", 0.0, 1.0), rec("s", "a", 5.0, 2.0), rec("s", "b", 10.0, 1.0), rec("t", "b", 7.5, 3.0)]
    ds = standardize_and_rescale(load_long_records(rows))
    np.testing.assert_allclose(ds.times[0][0], [0.0, 0.5])
    np.testing.assert_allclose(ds.times[0][1], [1.0])


records_strategy = st.lists(
    st.tuples(
        st.integers(0, 5),
        st.integers(0, 2),
        st.floats(-100, 100, allow_nan=False),
        st.integers(-100000, 100000).map(lambda x: x / 100.0),
    ),
    min_size=6,
    max_size=40,
    unique_by=lambda r: (r[0], r[1], r[2]),
)


@settings(max_examples=60, deadline=None)
@given(records_strategy)
def test_standardize_properties(raw):
    rows = [rec(f"s{s}", f"b{b}", t, v) for s, b, t, v in raw]
    ds = load_long_records(rows)
    try:
        out = standardize_and_rescale(ds)
    except (ZeroVariance, DegenerateTimeRange):
        return
    for p in range(out.n_blocks):
        vals = out.block_values(p)
        assert abs(vals.mean()) <= 1e-10
        assert abs(vals.std(ddof=1) - 1.0) <= 1e-10
    for row in out.times:
        for t in row:
            assert np.all((t >= 0) & (t <= 1))
    back = out.unstandardize()
    for r0, r1 in zip(ds.values, back.values):
        for a, b in zip(r0, r1):
            np.testing.assert_allclose(b, a, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0)))
    # permutation invariance of the standardization constants
    perm = load_long_records(list(reversed(rows)))
    out2 = standardize_and_rescale(perm)
    np.testing.assert_allclose(out2.means[[perm.blocks.index(b) for b in ds.blocks]], out.means, rtol=1e-12, atol=1e-9)


def test_csv_round_trip(tmp_path):
    ds = make_dataset([[2, 3], [1, 4]])
    path = tmp_path / "d.csv"
    write_csv(ds, path)
    text = path.read_text()
    assert text.splitlines()[0] == "subject_id,block_id,time,value"
    path.write_text(text.replace("\n", "\n\n", 1))  # blank lines ignored
    back = read_csv(path)
    assert back.subjects == ds.subjects and back.blocks == ds.blocks
    for r0, r1 in zip(ds.values, back.values):
        for a, b in zip(r0, r1):
            np.testing.assert_array_equal(a, b)


def test_json_round_trip_keeps_empty_series(tmp_path):
    ds = make_dataset([[2, 0], [0, 3]])
    save_json(ds, tmp_path / "d.json")
    back = load_json(tmp_path / "d.json")
    assert back.counts().tolist() == ds.counts().tolist()
    np.testing.assert_array_equal(back.values[1][1], ds.values[1][1])
