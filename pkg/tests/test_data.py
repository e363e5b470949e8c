import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _helpers import small_dataset
from uafrec.data import (CrossDomainDataset, DataError, SyntheticConfig, generate_synthetic, load_dataset,
                         make_batches, pad_sequence, sample_negative, split_dataset, subsample_training,
                         write_dataset)
from uafrec.evaluation import hr_at_n, ranks_for


def _write(tmp_path, src, tgt):
    s, t = tmp_path / "s.tsv", tmp_path / "t.tsv"
    s.write_text(src)
    t.write_text(tgt)
    return s, t


def test_two_user_fixture(tmp_path):
    s, t = _write(tmp_path, "1\t3 4 5\n2\t6\n", "1\t2\n2\t1\n1\t3\n")
    ds = load_dataset(s, t)
    assert ds.source == {1: [3, 4, 5], 2: [6]}
    assert ds.target_users.tolist() == [1, 2, 1] and ds.target_items.tolist() == [2, 1, 3]
    assert ds.source_vocab == 7 and ds.target_vocab == 4


@pytest.mark.parametrize("src,tgt,msg", [
    ("1\t3 4\n", "", "no target interactions"),
    ("1\t3 x\n", "1\t2\n", "s.tsv:1"),
    ("1\t3\n", "2\t2\n", "absent from source"),
    ("1\t3\n1\t4\n", "1\t2\n", "duplicate"),
    ("1\t0 4\n", "1\t2\n", "positive"),
])
def test_load_errors(tmp_path, src, tgt, msg):
    s, t = _write(tmp_path, src, tgt)
    with pytest.raises(DataError, match=msg):
        load_dataset(s, t)


def test_out_of_range_with_declared_vocab(tmp_path):
    s, t = _write(tmp_path, "1\t3 9\n", "1\t2\n")
    with pytest.raises(DataError, match="out of range"):
        load_dataset(s, t, source_vocab=9)


def test_round_trip(tmp_path):
    ds = small_dataset()
    write_dataset(ds, tmp_path / "s.tsv", tmp_path / "t.tsv")
    back = load_dataset(tmp_path / "s.tsv", tmp_path / "t.tsv", ds.source_vocab, ds.target_vocab, ds.seq_len)
    assert back.equals(ds)


def test_padding_examples():
    assert pad_sequence([5, 7], 5).tolist() == [0, 0, 0, 5, 7]
    assert pad_sequence([1, 2, 3], 3).tolist() == [1, 2, 3]
    assert pad_sequence(list(range(1, 9)), 5).tolist() == [4, 5, 6, 7, 8]
    with pytest.raises(DataError):
        pad_sequence([], 4)


def test_split_100_records():
    sp = split_dataset(100, seed=3)
    assert sp.sizes() == (80, 5, 15)
    again = split_dataset(100, seed=3)
    assert all(np.array_equal(a, b) for a, b in zip((sp.train, sp.val, sp.test), (again.train, again.val, again.test)))


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 5000), st.integers(0, 2**31))
def test_split_is_a_partition(n, seed):
    sp = split_dataset(n, seed)
    allidx = np.concatenate([sp.train, sp.val, sp.test])
    assert np.array_equal(np.sort(allidx), np.arange(n))
    assert len(sp.train) >= 1 and len(sp.test) >= 1
    assert abs(len(sp.train) - 0.8 * n) <= 1.5


def test_subsample():
    sp = split_dataset(1250, 0)
    assert len(sp.train) == 1000
    assert subsample_training(sp, 1.0, 0) is sp
    sub = subsample_training(sp, 0.1, 0)
    assert len(sub.train) == 100 and set(sub.train) <= set(sp.train)
    assert np.array_equal(sub.val, sp.val) and np.array_equal(sub.test, sp.test)
    with pytest.raises(DataError):
        subsample_training(sp, 0.0)


def test_negative_sampling():
    rng = np.random.default_rng(0)
    assert all(sample_negative(1, 3, rng) == 2 for _ in range(20))
    draws = sample_negative(np.full(60000, 4), 7, rng)
    assert not np.any(draws == 4) and not np.any(draws == 0)
    counts = np.bincount(draws, minlength=7)[[1, 2, 3, 5, 6]]
    expected = 60000 / 5
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 20.5  # 4 dof, p = 0.0004
    with pytest.raises(DataError):
        sample_negative(1, 2, rng)


def test_batches_cover_indices():
    ds = small_dataset()
    idx = np.arange(len(ds))
    seen = []
    for b in make_batches(ds, idx, 32, np.random.default_rng(0)):
        assert b.source.shape[1] == ds.seq_len
        assert np.all(b.negatives != b.positives)
        seen.append(b.positives)
    assert sorted(np.concatenate(seen).tolist()) == sorted(ds.target_items.tolist())


def test_synthetic_deterministic_files(tmp_path):
    a, b = small_dataset(seed=5), small_dataset(seed=5)
    write_dataset(a, tmp_path / "a.s", tmp_path / "a.t")
    write_dataset(b, tmp_path / "b.s", tmp_path / "b.t")
    assert (tmp_path / "a.s").read_bytes() == (tmp_path / "b.s").read_bytes()
    assert (tmp_path / "a.t").read_bytes() == (tmp_path / "b.t").read_bytes()
    with pytest.raises(ValueError):
        SyntheticConfig(rho=1.5)


def _ridge_probe(ds, train, test, lam=1.0):
    """Linear map from the bag of source items to target scores."""
    users, mat = ds.source_matrix()
    row = {u: i for i, u in enumerate(users.tolist())}
    X = np.zeros((len(users), ds.source_vocab))
    for i, seq in enumerate(mat):
        np.add.at(X[i], seq[seq > 0], 1.0)
    X /= X.sum(axis=1, keepdims=True)
    Y = np.zeros((len(ds), ds.target_vocab))
    Y[np.arange(len(ds)), ds.target_items] = 1.0
    Xtr = X[[row[u] for u in ds.target_users[train]]]
    W = np.linalg.solve(Xtr.T @ Xtr + lam * np.eye(X.shape[1]), Xtr.T @ Y[train])
    scores = X[[row[u] for u in ds.target_users[test]]] @ W
    return hr_at_n(ranks_for(scores, ds.target_items[test]), 5)


@pytest.mark.parametrize("rho", [0.0, 1.0])
def test_source_probe_oracle(rho):
    cfg = SyntheticConfig(num_users=3000, source_vocab=200, target_vocab=100, rho=rho,
                          source_sharpness=4.0, target_sharpness=4.0, seed=1)
    ds = generate_synthetic(cfg)
    sp = split_dataset(ds, 0)
    hr = _ridge_probe(ds, sp.train, sp.test, lam=1e-2)
    chance = 5 / (cfg.target_vocab - 1)
    if rho == 0.0:
        # 3 sigma of a binomial around chance over the test records
        assert abs(hr - chance) < 3 * np.sqrt(chance * (1 - chance) / len(sp.test)) + 0.01
    else:
        assert hr >= 3 * chance


def test_dataset_validation():
    with pytest.raises(DataError):
        CrossDomainDataset({1: [2]}, [1], [5], 3, 5)
    with pytest.raises(DataError):
        CrossDomainDataset({1: [2]}, [], [], 3, 5)
