import gzip
import struct

import numpy as np
import pytest

from fcoh.data import (
    Dataset,
    StreamSpec,
    concat,
    load_features,
    load_mnist_idx,
    make_splits,
    read_csv,
    read_fvec,
    save_features,
    stream,
    synth_clusters,
    write_csv,
    write_fvec,
)
from fcoh.errors import (
    BadMagicError,
    CountMismatchError,
    DataError,
    InfeasibleSplitError,
    NonFiniteFeatureError,
    TruncatedFileError,
)


def small(rng, d=5, n=12, classes=3):
    return Dataset(rng.standard_normal((d, n)).astype(np.float32).astype(float),
                   rng.integers(0, classes, n), "small")


def test_fvec_round_trip_exact(tmp_path, rng):
    ds = small(rng)
    write_fvec(tmp_path / "a.fvec", ds)
    back = read_fvec(tmp_path / "a.fvec")
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)


def test_csv_and_fvec_agree(tmp_path, rng):
    ds = Dataset(rng.standard_normal((4, 9)), rng.integers(0, 2, 9))
    save_features(tmp_path / "a.csv", ds)
    save_features(tmp_path / "a.fvec", ds)
    a, b = load_features(tmp_path / "a.csv"), load_features(tmp_path / "a.fvec")
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)
    # fvec -> csv -> fvec is lossless
    write_csv(tmp_path / "b.csv", b)
    assert np.array_equal(read_csv(tmp_path / "b.csv").features, b.features)


def test_fvec_errors_are_distinct(tmp_path, rng):
    p = tmp_path / "a.fvec"
    write_fvec(p, small(rng))
    raw = p.read_bytes()
    cases = [
        (b"JUNK" + raw[4:], BadMagicError),
        (raw[:-5], TruncatedFileError),
        (raw[:10], TruncatedFileError),
        (raw + b"\x00" * 4, CountMismatchError),
    ]
    for bad, exc in cases:
        p.write_bytes(bad)
        with pytest.raises(exc):
            read_fvec(p)


def test_header_count_mismatch(tmp_path, rng):
    p = tmp_path / "a.fvec"
    write_fvec(p, small(rng, n=4))
    raw = bytearray(p.read_bytes())
    struct.pack_into("<Q", raw, 8, 3)  # header claims 3 samples, file holds 4
    p.write_bytes(bytes(raw))
    with pytest.raises(CountMismatchError):
        read_fvec(p)


def test_nan_rejected_on_load(tmp_path, rng):
    ds = small(rng)
    feats = ds.features.copy()
    p = tmp_path / "a.fvec"
    write_fvec(p, ds)
    raw = bytearray(p.read_bytes())
    struct.pack_into("<f", raw, 24, float("nan"))
    p.write_bytes(bytes(raw))
    with pytest.raises(NonFiniteFeatureError):
        read_fvec(p)
    feats[0, 0] = np.inf
    with pytest.raises(NonFiniteFeatureError):
        Dataset(feats, ds.labels)


def test_csv_errors(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1.0,2.0,0\n1.0,1\n")
    with pytest.raises(CountMismatchError):
        read_csv(p)
    p.write_text("1.0,x,0\n")
    with pytest.raises(DataError):
        read_csv(p)
    p.write_text("")
    with pytest.raises(DataError):
        read_csv(p)


def test_missing_file_and_unknown_format(tmp_path):
    with pytest.raises(DataError):
        load_features(tmp_path / "nope.fvec")
    (tmp_path / "x.bin").write_bytes(b"")
    with pytest.raises(DataError):
        load_features(tmp_path / "x.bin", "parquet")


def test_mnist_idx_reader(tmp_path):
    imgs = np.array([[[0, 255], [51, 0]], [[255, 255], [0, 0]]], dtype=np.uint8)
    img_raw = b"\x00\x00\x08\x03" + struct.pack(">III", 2, 2, 2) + imgs.tobytes()
    lab_raw = b"\x00\x00\x08\x01" + struct.pack(">I", 2) + bytes([7, 3])
    with gzip.open(tmp_path / "i.gz", "wb") as f:
        f.write(img_raw)
    (tmp_path / "l").write_bytes(lab_raw)
    ds = load_mnist_idx(tmp_path / "i.gz", tmp_path / "l")
    assert ds.d == 4 and ds.labels.tolist() == [7, 3]
    assert ds.features[:, 0].tolist() == [0.0, 1.0, 0.2, 0.0]
    (tmp_path / "bad").write_bytes(b"\x01\x02\x03\x04")
    with pytest.raises(BadMagicError):
        load_mnist_idx(tmp_path / "bad", tmp_path / "l")


def test_concat(rng):
    a, b = small(rng, n=3), small(rng, n=4)
    c = concat(a, b)
    assert c.n == 7 and c.labels.tolist() == a.labels.tolist() + b.labels.tolist()


# ---- splits ----------------------------------------------------------------

def test_splits_per_class_disjoint_and_deterministic():
    ds = synth_clusters(3, 10, 200, 1.0, 0.1, seed=0)
    s1 = make_splits(ds, 5, query_per_class=100, train_size=500)
    s2 = make_splits(ds, 5, query_per_class=100, train_size=500)
    assert np.array_equal(s1.queries.ids, s2.queries.ids)
    assert np.array_equal(s1.train.ids, s2.train.ids)
    assert np.bincount(s1.queries.labels).tolist() == [100] * 10
    q, r = set(s1.queries.ids.tolist()), set(s1.retrieval.ids.tolist())
    assert not q & r and len(q | r) == ds.n
    assert set(s1.train.ids.tolist()) <= r
    assert s1.database is s1.retrieval
    s3 = make_splits(ds, 6, query_per_class=100, train_size=500)
    assert not np.array_equal(s1.queries.ids, s3.queries.ids)


def test_splits_total_and_database_subset():
    ds = synth_clusters(3, 4, 50, 1.0, 0.1, seed=1)
    s = make_splits(ds, 0, query_total=20, train_size=100, database_size=60)
    assert s.queries.n == 20 and s.retrieval.n == 180 and s.database.n == 60
    assert set(s.database.ids.tolist()) <= set(s.retrieval.ids.tolist())


@pytest.mark.parametrize("kwargs", [
    dict(query_per_class=50, train_size=10),
    dict(query_total=0, train_size=10),
    dict(query_total=10, train_size=10_000),
    dict(query_total=10, query_per_class=1, train_size=10),
    dict(query_total=10, train_size=10, database_size=10_000),
])
def test_infeasible_splits(kwargs):
    ds = synth_clusters(2, 2, 50, 1.0, 0.1, seed=0)
    with pytest.raises(InfeasibleSplitError):
        make_splits(ds, 0, **kwargs)


# ---- synthetic clusters -------------------------------------------------------

def test_synth_noise_zero_gives_exact_means():
    ds = synth_clusters(6, 4, 5, 2.0, 0.0, seed=3)
    for c in range(4):
        cols = ds.features[:, ds.labels == c]
        assert np.array_equal(cols, np.repeat(cols[:, :1], 5, axis=1))
    means = np.stack([ds.features[:, ds.labels == c][:, 0] for c in range(4)])
    gaps = [np.linalg.norm(means[i] - means[j]) for i in range(4) for j in range(i + 1, 4)]
    assert min(gaps) == pytest.approx(2.0)


def test_synth_well_separated_is_nearest_neighbour_separable():
    ds = synth_clusters(16, 5, 40, 4.0, 0.3, seed=0)
    X = ds.features
    d2 = ((X[:, :, None] - X[:, None, :]) ** 2).sum(0)
    np.fill_diagonal(d2, np.inf)
    assert (ds.labels[d2.argmin(1)] == ds.labels).mean() == 1.0


def test_synth_seeded():
    a = synth_clusters(3, 2, 4, 1.0, 0.5, seed=9)
    b = synth_clusters(3, 2, 4, 1.0, 0.5, seed=9)
    c = synth_clusters(3, 2, 4, 1.0, 0.5, seed=10)
    assert np.array_equal(a.features, b.features) and not np.array_equal(a.features, c.features)
    assert np.bincount(a.labels).tolist() == [4, 4]


# ---- stream ------------------------------------------------------------------

def test_stream_batches_cover_each_sample_once():
    ds = synth_clusters(2, 10, 2000, 1.0, 0.1, seed=0)
    st = stream(ds, StreamSpec(100, 20000, seed=1))
    batches = list(st)
    assert len(st) == 200 == len(batches)
    assert all(b.n == 100 for b in batches)
    X = np.hstack([b.X for b in batches])
    assert sorted(map(tuple, X.T.tolist())) == sorted(map(tuple, ds.features.T.tolist()))


def test_stream_tail_batch_and_single_batch():
    ds = synth_clusters(2, 2, 25, 1.0, 0.1, seed=0)
    assert [b.n for b in stream(ds, StreamSpec(20))] == [20, 20, 10]
    assert [b.n for b in stream(ds, StreamSpec(100))] == [50]


def test_stream_deterministic_and_centering():
    ds = synth_clusters(3, 2, 30, 1.0, 0.1, seed=0)
    a = [b.labels.tolist() for b in stream(ds, StreamSpec(7, seed=4))]
    b = [b.labels.tolist() for b in stream(ds, StreamSpec(7, seed=4))]
    assert a == b
    s = stream(ds, StreamSpec(10, seed=4), center=True)
    first = next(iter(s))
    np.testing.assert_allclose(first.X.mean(1), 0, atol=1e-12)
    assert s.offset is not None and s.offset.shape == (3,)


def test_stream_spec_validation():
    with pytest.raises(ValueError):
        StreamSpec(0)
    with pytest.raises(ValueError):
        StreamSpec(10, total=0)
