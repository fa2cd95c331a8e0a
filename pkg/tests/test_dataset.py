import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mibci.dataset import (
    DatasetSplit,
    LabeledSample,
    build_split,
    export_csv,
    fmt_float,
    import_csv,
)
from mibci.dsp import NormStats
from mibci.errors import ClassTooSmall, LabelOutOfRange, ParseError, ShapeMismatch

NAMES = ("T0", "T1", "T2")


def make_samples(per_class, n_classes=2, dims=(3, 4), seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for c in range(n_classes):
        for i in range(per_class):
            out.append(LabeledSample(rng.normal(size=dims) + c, c, NAMES[c], ("S1", f"R{c}", float(i))))
    return out


def membership(split):
    return [s.source for s in split.train], [s.source for s in split.test]


def test_eleven_per_class_one_test_each():
    split = build_split(make_samples(11), 1 / 11, seed=7)
    assert sorted(s.label for s in split.test) == [0, 1]
    assert len(split.train) == 20
    again = build_split(make_samples(11), 1 / 11, seed=7)
    assert membership(split) == membership(again)


def test_floor_at_one():
    split = build_split(make_samples(5), 0.01, seed=1)
    assert sorted(s.label for s in split.test) == [0, 1]


def test_seed_sensitivity():
    a = build_split(make_samples(11), 1 / 11, seed=7)
    b = build_split(make_samples(11), 1 / 11, seed=8)
    assert a.test and b.test
    assert membership(a) != membership(b)


def test_input_order_irrelevant():
    samples = make_samples(9, 3)
    a = build_split(samples, 0.3, seed=3)
    b = build_split(samples[::-1], 0.3, seed=3)
    assert membership(a) == membership(b)


def test_class_too_small():
    samples = make_samples(4) + [LabeledSample(np.zeros((3, 4)), 2, "T2", ("x", "y", 0.0))]
    with pytest.raises(ClassTooSmall):
        build_split(samples, 0.25, seed=0)


def test_norm_stats_from_train_only():
    samples = make_samples(10)
    split = build_split(samples, 0.2, seed=2)
    train_keys = {s.source for s in split.train}
    raw_train = [s.image for s in samples if s.source in train_keys]
    stack = np.stack(raw_train)
    np.testing.assert_allclose(split.norm_stats.mean, stack.mean(axis=(0, 2)), atol=1e-12)
    np.testing.assert_allclose(split.norm_stats.std, stack.std(axis=(0, 2)), atol=1e-12)
    raw = {s.source: s.image for s in samples}
    for s in split.test:
        expected = (raw[s.source] - split.norm_stats.mean[:, None]) / split.norm_stats.std[:, None]
        np.testing.assert_allclose(s.image, expected, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 15), st.integers(2, 3), st.floats(0.05, 0.95), st.integers(0, 10**6))
def test_stratified_share_and_disjoint(per_class, n_classes, frac, seed):
    split = build_split(make_samples(per_class, n_classes), frac, seed)
    for c in range(n_classes):
        n_test = sum(s.label == c for s in split.test)
        assert 1 <= n_test <= per_class - 1
        assert abs(n_test - frac * per_class) <= 1 or n_test in (1, per_class - 1)
    assert not ({s.source for s in split.train} & {s.source for s in split.test})


SPLIT_SNIPPET = """
import numpy as np
from mibci.dataset import LabeledSample, build_split
rng = np.random.default_rng(0)
s = [LabeledSample(rng.normal(size=(2, 2)), c, "T%d" % c, ("S", str(c), float(i)))
     for c in range(3) for i in range(12)]
sp = build_split(s, 0.25, seed=1234)
print([x.source for x in sp.test])
"""


def test_split_determinism_across_processes():
    outs = {subprocess.run([sys.executable, "-c", SPLIT_SNIPPET], capture_output=True, text=True,
                           check=True).stdout for _ in range(2)}
    assert len(outs) == 1


# -- CSV --------------------------------------------------------------------

def test_layout_definition(tmp_path):
    img = np.array([[1.0, 2.0], [3.0, 4.0]])
    split = DatasetSplit([LabeledSample(img, 1, "T1", ("a", "b", 0.0))],
                         [LabeledSample(img * 0.5, 0, "T0", ("a", "b", 1.0))], NAMES[:2])
    export_csv(split, tmp_path)
    assert (tmp_path / "train_data.csv").read_bytes() == b"1,2,3,4\n"
    assert (tmp_path / "train_labels.csv").read_bytes() == b"1\n"
    assert (tmp_path / "test_data.csv").read_bytes() == b"0.5,1,1.5,2\n"


def test_empty_split_refused():
    with pytest.raises(ValueError):
        DatasetSplit([], [LabeledSample(np.zeros((2, 2)), 0, "T0", ("a", "b", 0.0))], NAMES)


def assert_split_equal(a, b):
    assert len(a.train) == len(b.train) and len(a.test) == len(b.test)
    for x, y in zip(a.train + a.test, b.train + b.test):
        assert x.label == y.label
        assert x.image.tobytes() == y.image.tobytes()
    assert a.class_names == b.class_names
    assert a.norm_stats.mean.tobytes() == b.norm_stats.mean.tobytes()
    assert a.norm_stats.std.tobytes() == b.norm_stats.std.tobytes()


def test_round_trip(tmp_path):
    split = build_split(make_samples(8, 3, dims=(5, 7)), 0.25, seed=11)
    export_csv(split, tmp_path)
    back = import_csv(tmp_path, (5, 7))
    assert_split_equal(split, back)
    # and the other direction: re-export reproduces the files byte for byte
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    export_csv(back, tmp_path / "again")
    second = {p.name: p.read_bytes() for p in (tmp_path / "again").iterdir()}
    assert first == second


def test_fmt_float_round_trips_extremes():
    for v in [0.1, -0.0, 1e-300, 5e-324, 1.7976931348623157e308, 123456789.125, -2.5e-7]:
        assert float(fmt_float(v)) == v
        assert np.signbit(float(fmt_float(v))) == np.signbit(v)


def write_split_files(d, train_data, train_labels, test_data="1,2,3,4\n", test_labels="0\n"):
    (d / "train_data.csv").write_text(train_data)
    (d / "train_labels.csv").write_text(train_labels)
    (d / "test_data.csv").write_text(test_data)
    (d / "test_labels.csv").write_text(test_labels)


def test_import_shape_mismatch(tmp_path):
    write_split_files(tmp_path, "1,2,3,4\n1,2,3\n", "0\n1\n")
    with pytest.raises(ShapeMismatch) as info:
        import_csv(tmp_path, (2, 2))
    assert info.value.line == 2


def test_import_label_out_of_range(tmp_path):
    write_split_files(tmp_path, "1,2,3,4\n", "5\n")
    with pytest.raises(LabelOutOfRange):
        import_csv(tmp_path, (2, 2))


def test_import_parse_error(tmp_path):
    write_split_files(tmp_path, "1,2,x,4\n", "0\n")
    with pytest.raises(ParseError) as info:
        import_csv(tmp_path, (2, 2))
    assert info.value.line == 1


def test_import_external_csv_defaults(tmp_path):
    write_split_files(tmp_path, "1.0,2.0,3.0,4.0\n", "2\n")
    split = import_csv(tmp_path, (2, 2))
    assert split.class_names == NAMES
    assert split.train[0].label_name == "T2"
    np.testing.assert_array_equal(split.norm_stats.std, [1.0, 1.0])
    assert isinstance(split.norm_stats, NormStats)
