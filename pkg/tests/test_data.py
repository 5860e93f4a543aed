from __future__ import annotations

import json
import math

import numpy as np
import pytest

from esc_unlearn.data import (
    LabeledSet,
    generate_blobs,
    load_csv,
    load_manifest,
    save_csv,
    split_by_classes,
    split_random,
    write_manifest,
)


def class_means(ds):
    return np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in np.unique(ds.labels)])


def test_blob_shapes_and_labels():
    train, test = generate_blobs(4, 30, 7, 5, seed=1)
    assert train.inputs.shape == (120, 5)
    assert test.inputs.shape == (28, 5)
    assert np.bincount(train.labels).tolist() == [30] * 4
    assert np.bincount(test.labels).tolist() == [7] * 4


def test_blobs_are_deterministic_per_seed():
    a, _ = generate_blobs(3, 10, 2, 4, seed=5)
    b, _ = generate_blobs(3, 10, 2, 4, seed=5)
    c, _ = generate_blobs(3, 10, 2, 4, seed=6)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    assert not np.allclose(a.inputs, c.inputs)


@pytest.mark.parametrize("classes,dim", [(10, 20), (3, 3), (6, 3)])
def test_means_respect_separation(classes, dim):
    # with many samples the empirical means sit close to the true ones
    train, _ = generate_blobs(classes, 4000, 1, dim, separation=8.0, seed=0)
    mu = class_means(train)
    dists = [np.linalg.norm(mu[i] - mu[j]) for i in range(classes) for j in range(i + 1, classes)]
    assert min(dists) > 8.0 - 0.3


def test_blobs_reject_bad_arguments():
    with pytest.raises(ValueError):
        generate_blobs(0, 10, 1, 2)
    with pytest.raises(ValueError):
        generate_blobs(3, 10, 1, 2, separation=0)
    with pytest.raises(ValueError, match="input_dim"):
        generate_blobs(5, 10, 1, 2)


def test_class_split_partitions_everything():
    train, test = generate_blobs(5, 20, 4, 3, seed=0)
    split = split_by_classes(train, test, [3, 1])
    assert split.forget_classes == (1, 3)
    assert set(split.forget_train.labels) == {1, 3}
    assert not set(split.remain_train.labels) & {1, 3}
    assert len(split.forget_train) + len(split.remain_train) == len(train)
    assert len(split.forget_test) + len(split.remain_test) == len(test)
    assert len(split.full_train) == len(train)


def test_class_split_errors():
    train, test = generate_blobs(3, 5, 2, 3, seed=0)
    with pytest.raises(ValueError):
        split_by_classes(train, test, [])
    with pytest.raises(ValueError, match="outside"):
        split_by_classes(train, test, [3], num_classes=3)
    with pytest.raises(ValueError, match="every class"):
        split_by_classes(train, test, [0, 1, 2])


def test_random_split_size_and_determinism():
    train, test = generate_blobs(4, 25, 5, 3, seed=0)
    split = split_random(train, test, 0.1, seed=3)
    assert len(split.forget_train) == math.floor(0.1 * len(train))
    assert len(split.forget_test) == 0
    assert len(split.remain_test) == len(test)
    again = split_random(train, test, 0.1, seed=3)
    np.testing.assert_array_equal(split.forget_indices, again.forget_indices)
    with pytest.raises(ValueError):
        split_random(train, test, 1.0)


def test_csv_round_trip_is_exact(tmp_path):
    train, _ = generate_blobs(3, 4, 1, 2, seed=9)
    save_csv(train, tmp_path / "t.csv")
    back = load_csv(tmp_path / "t.csv", num_classes=3)
    np.testing.assert_array_equal(back.inputs, train.inputs)
    np.testing.assert_array_equal(back.labels, train.labels)


def test_csv_errors_name_row_and_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("f0,f1,label\n1.0,2.0,0\n1.0,abc,1\n")
    with pytest.raises(ValueError, match=r"row 3 column 'f1'"):
        load_csv(p)
    p.write_text("f0,label\n1.0,5\n")
    with pytest.raises(ValueError, match="outside"):
        load_csv(p, num_classes=3)
    p.write_text("f0,label\n1.0\n")
    with pytest.raises(ValueError, match="row 2"):
        load_csv(p)


def test_manifest_round_trip(tmp_path):
    train, test = generate_blobs(3, 4, 2, 2, seed=0)
    save_csv(train, tmp_path / "train.csv")
    save_csv(test, tmp_path / "test.csv")
    write_manifest(tmp_path / "ds.json", 3, 2, "train.csv", "test.csv", 0)
    manifest, tr, te = load_manifest(tmp_path / "ds.json")
    assert manifest["classes"] == 3
    np.testing.assert_array_equal(tr.inputs, train.inputs)
    assert len(te) == len(test)

    doc = json.loads((tmp_path / "ds.json").read_text())
    doc["input_dim"] = 5
    (tmp_path / "ds.json").write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="features"):
        load_manifest(tmp_path / "ds.json")


def test_labeled_set_validation():
    with pytest.raises(ValueError):
        LabeledSet(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(ValueError):
        LabeledSet(np.zeros((2, 2)), np.array([0.5, 1.0]))
    with pytest.raises(ValueError):
        LabeledSet(np.zeros((1, 2)), np.array([-1]))
    assert len(LabeledSet.empty(4)) == 0
