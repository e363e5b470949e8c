import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _helpers import small_backbone, small_dataset
from uafrec.evaluation import (MetricReport, evaluate, hr_at_n, mrr_at_n, rank_of_target, ranks_for,
                               read_utilization_csv, utilization_profile, write_metrics_csv,
                               write_utilization_csv)
from uafrec.finetune import BaselineModel, UafModel


def test_rank_examples():
    s = np.array([9.0, 0.1, 0.5, 0.3])
    assert rank_of_target(s, 2) == 1
    assert rank_of_target(np.zeros(6), 1) == 1
    assert rank_of_target(np.zeros(6), 4) == 4
    # the padding slot's score never counts
    assert rank_of_target(np.array([100.0, 1.0, 2.0]), 2) == 1


def _sort_oracle(scores, target):
    items = list(range(1, len(scores)))
    order = sorted(items, key=lambda i: (-scores[i], i))
    return order.index(target) + 1


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31))
def test_rank_matches_sort_oracle(V, seed):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 4, size=(5, V)).astype(float)  # many ties
    targets = rng.integers(1, V, size=5)
    got = ranks_for(scores, targets)
    assert got.tolist() == [_sort_oracle(s, t) for s, t in zip(scores, targets)]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_rank_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((4, 12))
    t = rng.integers(1, 12, size=4)
    assert np.array_equal(ranks_for(s, t), ranks_for(np.exp(2 * s) + 3, t))


def test_metric_examples():
    assert mrr_at_n([1]) == 1.0 and hr_at_n([1]) == 1.0
    assert mrr_at_n([3]) == pytest.approx(1 / 3) and hr_at_n([3]) == 1.0
    assert mrr_at_n([6]) == 0.0 and hr_at_n([6]) == 0.0
    with pytest.raises(ValueError):
        hr_at_n([])
    with pytest.raises(ValueError):
        MetricReport(0.5, 0.2, 5, np.array([1]), 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 50), min_size=1, max_size=40))
def test_mrr_bounded_by_hr(ranks):
    assert 0 <= mrr_at_n(ranks) <= hr_at_n(ranks) <= 1


class _Memorizer:
    """Scores the true target of each user highest."""

    def __init__(self, ds):
        self.lookup = {}
        for u, y in zip(ds.target_users.tolist(), ds.target_items.tolist()):
            self.lookup.setdefault(u, y)
        self.V = ds.target_vocab

    def eval_gates(self, src, users):
        self._users = users
        return None

    def forward(self, src, gates):
        from uafrec.autodiff import Tensor
        out = np.zeros((len(self._users), self.V))
        out[np.arange(len(self._users)), [self.lookup[u] for u in self._users.tolist()]] = 1.0
        return Tensor(out)


def test_perfect_memorizer():
    ds = small_dataset()
    # one record per user so the memorizer is exact
    first = np.unique(ds.target_users, return_index=True)[1]
    rep = evaluate(_Memorizer(ds), ds, first, 5)
    assert rep.mrr == 1.0 and rep.hr == 1.0


def test_zero_head_model_is_near_chance():
    ds = small_dataset(num_users=600, target_vocab=60)
    bb = small_backbone()
    m = BaselineModel.build("all", ds.target_vocab, backbone=bb)
    m.head.weight.data[...] = 0
    rep = evaluate(m, ds, np.arange(len(ds)), 5)
    # with every score tied the rank is the item id, so HR@5 is the share of ids 1..5
    share = np.mean(ds.target_items <= 5)
    assert rep.hr == pytest.approx(share)
    p = 5 / 59
    assert abs(rep.hr - p) < 3 * np.sqrt(p * (1 - p) / len(ds)) + 0.01
    again = evaluate(m, ds, np.arange(len(ds)), 5)
    assert np.array_equal(rep.ranks, again.ranks) and rep.hr == again.hr


def test_utilization_profiles(tmp_path):
    ds = small_dataset()
    bb = small_backbone()
    m = UafModel.build(bb, "hard", ds.target_vocab)
    users = np.unique(ds.target_users)
    m.policy.head_bias.data[0::2] = 10.0   # strongly prefer freeze everywhere
    assert np.array_equal(utilization_profile(m, ds, users).values, np.zeros(2))
    m.policy.head_bias.data[1] = 20.0     # block 1 fine-tuned for everyone
    prof = utilization_profile(m, ds, users)
    assert prof.values[0] == 1.0
    write_utilization_csv(tmp_path / "u.csv", prof)
    assert np.array_equal(read_utilization_csv(tmp_path / "u.csv"), prof.values)


def test_metrics_csv_format(tmp_path):
    r = MetricReport(1 / 3, 2 / 3, 5, np.array([1, 3, 9]), 3, tag="all", seed=1)
    write_metrics_csv(tmp_path / "m.csv", [r])
    assert (tmp_path / "m.csv").read_text() == "tag,seed,split,examples,N,mrr,hr\nall,1,test,3,5,0.333333,0.666667\n"
