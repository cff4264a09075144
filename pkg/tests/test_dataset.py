import numpy as np
import pytest

from cfair.dataset import DatasetError, EmbeddingDataset, build_group_index, load_dataset, save_dataset


def make(emb, ident, attr, names=("A", "B")):
    return EmbeddingDataset(np.asarray(emb, float), ident, attr, list(names))


def test_minimal_dataset_two_images_one_identity(tmp_path):
    ds = make([[1.0, 0.0], [0.5, 0.5]], [0, 0], [0], ["A"])
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path)
    assert back.n == 2 and back.k == 1


def test_unreferenced_identity_is_named():
    with pytest.raises(DatasetError, match="identity 2 unreferenced"):
        make(np.ones((2, 3)), [0, 1], [0, 0, 0])


def test_nan_row_is_named():
    emb = np.ones((7, 3))
    emb[5, 1] = np.nan
    with pytest.raises(DatasetError, match="row 5"):
        make(emb, [0] * 7, [0])


def test_zero_row_rejected():
    emb = np.ones((3, 2))
    emb[1] = 0.0
    with pytest.raises(DatasetError, match="row 1"):
        make(emb, [0, 0, 0], [0])


def test_no_attributes_refused():
    with pytest.raises(DatasetError, match="A >= 1"):
        EmbeddingDataset(np.ones((2, 2)), [0, 0], [0], [])


def test_attribute_out_of_range():
    with pytest.raises(DatasetError, match="attribute 3"):
        make(np.ones((2, 2)), [0, 1], [0, 3])


def test_roundtrip_float32_and_float64(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path / "f8")
    back = load_dataset(tmp_path / "f8")
    assert np.array_equal(back.embeddings, small_ds.embeddings)
    assert np.array_equal(back.identity_of, small_ds.identity_of)
    assert np.array_equal(back.attribute_of_identity, small_ds.attribute_of_identity)
    assert back.attribute_names == small_ds.attribute_names
    assert back.identity_names == small_ds.identity_names

    ds32 = small_ds.with_embeddings(small_ds.embeddings.astype(np.float32))
    save_dataset(ds32, tmp_path / "f4")
    assert (tmp_path / "f4" / "embeddings.bin").stat().st_size == ds32.n * ds32.d * 4
    assert np.array_equal(load_dataset(tmp_path / "f4").embeddings, ds32.embeddings)


def test_corrupted_byte_fails_checksum(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)
    path = tmp_path / "embeddings.bin"
    data = bytearray(path.read_bytes())
    data[10] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(DatasetError, match="checksum"):
        load_dataset(tmp_path)


def test_truncated_file_fails(tmp_path, small_ds):
    save_dataset(small_ds, tmp_path)
    path = tmp_path / "embeddings.bin"
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(DatasetError, match="missing"):
        load_dataset(tmp_path / "nope")


def test_csv_fallback(tmp_path):
    (tmp_path / "embeddings.csv").write_text(
        "identity,attribute,v1,v2\n"
        "alice,X,1.0,0.0\n"
        "alice,X,0.9,0.1\n"
        "bob,Y,0.0,1.0\n"
    )
    ds = load_dataset(tmp_path)
    assert ds.n == 3 and ds.k == 2 and ds.d == 2
    assert ds.identity_names == ["alice", "bob"]
    assert ds.attribute_names == ["X", "Y"]
    assert list(ds.attribute_of_image) == [0, 0, 1]


def test_csv_conflicting_attribute(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("alice,X,1.0,0.0\nalice,Y,0.9,0.1\n")
    with pytest.raises(DatasetError, match="alice"):
        load_dataset(p)


def test_group_index_example():
    ds = make(np.eye(4), [0, 0, 1, 1], [0, 1])
    gi = build_group_index(ds)
    assert gi.images[0].tolist() == [0, 1]
    assert gi.images[1].tolist() == [2, 3]
    assert gi.counts.tolist() == [2, 2]


def test_group_index_single_attribute_and_singletons():
    ds = make(np.eye(5), [0, 1, 2, 3, 4], [0] * 5, ["A"])
    gi = build_group_index(ds)
    assert gi.images[0].tolist() == list(range(5))
    assert gi.counts.tolist() == [1] * 5


def test_unknown_attribute_lists_known():
    ds = make(np.eye(2), [0, 1], [0, 1])
    with pytest.raises(DatasetError, match="known attributes: A, B"):
        ds.attribute_id("C")
