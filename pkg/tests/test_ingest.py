import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hbfuse import ingest
from hbfuse.ingest import DataError, HeartbeatSet


def _write(tmp_path, lines, name="beats.csv"):
    p = tmp_path / name
    p.write_text("\n".join(lines) + "\n")
    return p


def _row(samples, label):
    return ",".join(str(v) for v in samples) + f",{label}"


def test_load_csv_parses_row(tmp_path):
    x = np.linspace(0, 1, 187)
    x[0], x[1], x[2] = 0.0, 0.5, 1.0
    beats = ingest.load_csv(_write(tmp_path, [_row(x, 2)]), 187)
    assert len(beats) == 1
    assert beats[0].label == 2
    assert beats.class_names[beats[0].label] == "V"
    np.testing.assert_array_equal(beats[0].samples, x)


def test_load_csv_accepts_float_labels(tmp_path):
    # the standardized release writes labels as floats
    beats = ingest.load_csv(_write(tmp_path, [_row([0.1] * 5, "3.000000000000000000e+00")]), 5)
    assert beats.labels.tolist() == [3]


def test_load_csv_wrong_column_count(tmp_path):
    good = _row(np.zeros(187), 0)
    lines = [good] * 17 + [_row(np.zeros(186), 0)]
    with pytest.raises(DataError, match="row 17: expected 188 columns"):
        ingest.load_csv(_write(tmp_path, lines), 187)


@pytest.mark.parametrize("row,msg", [
    ("0.1,abc,0.2,0", "non-numeric"),
    ("0.1,0.2,0.3,7", "label"),
    ("0.1,0.2,0.3,1.5", "label"),
    ("0.1,1.01,0.3,1", r"outside \[0, 1\]"),
    ("-0.001,0.5,0.3,1", r"outside \[0, 1\]"),
])
def test_load_csv_rejects(tmp_path, row, msg):
    with pytest.raises(DataError, match=msg):
        ingest.load_csv(_write(tmp_path, [row]), 3)


def test_load_csv_tolerates_tiny_excursion(tmp_path):
    beats = ingest.load_csv(_write(tmp_path, ["1.0000005,0,-0.0000005,1"]), 3)
    assert len(beats) == 1


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = HeartbeatSet(rng.random((20, 11)), rng.integers(0, 5, 20))
    p = tmp_path / "rt.csv"
    ingest.save_csv(data, p)
    back = ingest.load_csv(p, 11)
    assert np.max(np.abs(back.samples - data.samples)) <= 1e-9
    np.testing.assert_array_equal(back.labels, data.labels)


def test_class_counts():
    empty = HeartbeatSet(np.zeros((0, 4)), np.zeros(0, dtype=int))
    assert ingest.class_counts(empty) == {"N": 0, "S": 0, "V": 0, "F": 0, "Q": 0}
    three = HeartbeatSet(np.zeros((3, 4)), [0, 0, 0])
    assert ingest.class_counts(three)["N"] == 3
    assert sum(ingest.class_counts(three).values()) == 3


def test_aami_mapping():
    assert ingest.aami_category("L") == "N"
    assert ingest.aami_category("a") == "S"
    assert ingest.aami_category("E") == "V"
    assert ingest.aami_category("F") == "F"
    assert ingest.aami_category("/") == "Q"
    assert ingest.aami_category("Fusion of paced and normal") == "Q"
    assert ingest.aami_category("nodal escape") == "N"
    with pytest.raises(KeyError):
        ingest.aami_category("~")


def test_table_constants_consistent():
    assert sum(ingest.MITBIH_SMOTE_TARGETS.values()) == 152471
    assert sum(ingest.PTB_SPLIT_SIZES) == 14552


def test_nearest_neighbors_matches_brute_force():
    rng = np.random.default_rng(3)
    pts = rng.random((40, 6))
    got = ingest.nearest_neighbors(pts, 4, chunk=7)
    for i in range(len(pts)):
        d = [np.linalg.norm(pts[i] - pts[j]) if j != i else np.inf for j in range(len(pts))]
        assert set(got[i]) == set(np.argsort(d)[:4])


def test_smote_two_points_on_segment():
    data = HeartbeatSet(np.array([[0.0, 0.0], [1.0, 1.0]]), [1, 1])
    out, log = ingest.smote(data, {"S": 3}, k=1, seed=42, return_log=True)
    assert ingest.class_counts(out)["S"] == 3
    third = out.samples[2]
    assert third[0] == third[1]
    assert 0.0 <= third[0] <= 1.0
    base, partner, u = log[1]
    # recover u from the synthetic point and check collinearity
    x, xn = data.samples[base[0]], data.samples[partner[0]]
    u_hat = (third - x) / (xn - x)
    np.testing.assert_allclose(u_hat, u[0], atol=1e-15)


def test_smote_noop_when_targets_equal_counts():
    rng = np.random.default_rng(1)
    data = HeartbeatSet(rng.random((12, 5)), [0] * 6 + [1] * 6)
    out = ingest.smote(data, {"N": 6, "S": 6}, seed=3)
    np.testing.assert_array_equal(out.samples, data.samples)
    np.testing.assert_array_equal(out.labels, data.labels)


def test_smote_errors():
    data = HeartbeatSet(np.random.default_rng(0).random((8, 3)), [0] * 5 + [1] * 3)
    with pytest.raises(DataError, match="below current"):
        ingest.smote(data, {"N": 4})
    with pytest.raises(DataError, match="need more than k"):
        ingest.smote(data, {"S": 10}, k=3)
    with pytest.raises(ValueError):
        ingest.smote(data, {"S": 10}, k=0)


def test_smote_deterministic_and_convex():
    rng = np.random.default_rng(5)
    data = HeartbeatSet(rng.random((60, 9)), [0] * 40 + [1] * 12 + [2] * 8, ("a", "b", "c"))
    a, log = ingest.smote(data, {1: 30, 2: 25}, k=3, seed=9, return_log=True)
    b = ingest.smote(data, {1: 30, 2: 25}, k=3, seed=9)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert ingest.class_counts(a) == {"a": 40, "b": 30, "c": 25}
    assert a.samples.min() >= 0 and a.samples.max() <= 1
    start = len(data)
    for cid in (1, 2):
        base, partner, u = log[cid]
        assert np.all(data.labels[base] == cid) and np.all(data.labels[partner] == cid)
        assert np.all(base != partner)
        n = len(u)
        synth = a.samples[start:start + n]
        expect = data.samples[base] + u[:, None] * (data.samples[partner] - data.samples[base])
        np.testing.assert_allclose(synth, expect, atol=1e-15)
        start += n


def test_smote_pool_is_training_data_only():
    # every neighbor index in the log points into the data that was passed in
    rng = np.random.default_rng(2)
    train = HeartbeatSet(rng.random((30, 4)), [0] * 20 + [1] * 10)
    out, log = ingest.smote(train, {"S": 20}, k=2, seed=0, return_log=True)
    base, partner, _ = log[1]
    assert partner.max() < len(train) and base.max() < len(train)


def test_stratified_subsample():
    data = HeartbeatSet(np.arange(6, dtype=float)[:, None] / 10, [0, 0, 0, 0, 0, 1])
    sub = ingest.stratified_subsample(data, 2, seed=0)
    assert ingest.class_counts(sub)["N"] == 2 and ingest.class_counts(sub)["S"] == 1
    whole = ingest.stratified_subsample(data, 10, seed=0)
    np.testing.assert_array_equal(whole.samples, data.samples)
    again = ingest.stratified_subsample(data, 2, seed=0)
    np.testing.assert_array_equal(again.samples, sub.samples)
    with pytest.raises(ValueError):
        ingest.stratified_subsample(data, 0)


def test_stratified_split_ptb_sizes():
    # PTB class sizes of the standardized release: 4046 normal, 10506 MI
    labels = np.array([0] * 4046 + [1] * 10506)
    data = HeartbeatSet(np.zeros((len(labels), 1)), labels, ingest.PTB_CLASSES)
    train, test = ingest.stratified_split(data, 0.2, seed=0)
    assert (len(train), len(test)) == ingest.PTB_SPLIT_SIZES


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=2, max_size=5), st.integers(0, 2**32 - 1))
def test_split_partitions_data(sizes, seed):
    labels = np.concatenate([np.full(s, i) for i, s in enumerate(sizes)])
    data = HeartbeatSet(np.arange(len(labels), dtype=float)[:, None], labels,
                        tuple(str(i) for i in range(len(sizes))))
    train, test = ingest.stratified_split(data, 0.25, seed)
    ids = np.concatenate([train.samples[:, 0], test.samples[:, 0]])
    assert sorted(ids.tolist()) == list(range(len(labels)))
    assert len(test) == int(np.ceil(0.25 * len(labels) - 1e-9))


def test_parse_targets():
    assert ingest.parse_targets("N=72471, S=30000,V=20000") == {"N": 72471, "S": 30000, "V": 20000}
