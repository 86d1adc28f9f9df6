import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from midx.dataset import (
    DatasetError,
    InteractionDataset,
    build_dataset,
    filter_min_interactions,
    load_dataset,
    load_interactions,
    popularity_vector,
    save_dataset,
    split_holdout,
)
from fixtures import EXPECTED, write_thousand_line_fixture


def write(tmp_path, text, name="data.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def random_dataset(seed, users=30, items=20, density=0.5):
    rng = np.random.default_rng(seed)
    lists = []
    for _ in range(users):
        row = np.flatnonzero(rng.random(items) < density)
        lists.append(row if len(row) >= 2 else np.array([0, 1]))
    return InteractionDataset.from_lists(users, items, lists)


class TestLoad:
    def test_complete_three_by_three(self, tmp_path):
        p = write(tmp_path, "".join(f"u{u} i{i}\n" for u in range(3) for i in range(3)))
        ds = load_interactions(p, min_interactions=1)
        assert (ds.num_users, ds.num_items, ds.num_interactions) == (3, 3, 9)

    def test_separators(self, tmp_path):
        p = write(tmp_path, "a,x,1\nb x\n# comment\n\nc::x::5::99\n")
        ds = load_interactions(p, min_interactions=1)
        assert (ds.num_users, ds.num_items) == (3, 1)

    def test_threshold_binarizes(self, tmp_path):
        p = write(tmp_path, "a x 5\na y 3\nb x 4\nb y 1\n")
        ds = load_interactions(p, min_interactions=1, threshold=4)
        assert ds.num_interactions == 2 and ds.num_items == 1

    def test_malformed_line_reports_number(self, tmp_path):
        p = write(tmp_path, "a x\nb\n")
        with pytest.raises(DatasetError, match=":2:"):
            load_interactions(p, min_interactions=1)

    def test_non_numeric_value(self, tmp_path):
        p = write(tmp_path, "a x 1\na y five\n")
        with pytest.raises(DatasetError, match=":2:"):
            load_interactions(p, min_interactions=1)

    def test_empty_after_filter(self, tmp_path):
        p = write(tmp_path, "a x\nb y\n")
        with pytest.raises(DatasetError, match="no interactions left"):
            load_interactions(p, min_interactions=10)

    def test_rare_item_removed_and_reindexed(self, tmp_path):
        # 10 users x 10 items complete, plus item "r" seen by 9 of them.
        rows = [f"u{u} i{i}" for u in range(10) for i in range(10)]
        rows += [f"u{u} r" for u in range(9)]
        ds = load_interactions(write(tmp_path, "\n".join(rows)), min_interactions=10)
        assert ds.num_items == 10 and "r" not in ds.item_ids
        assert ds.num_users == 10
        assert all(np.array_equal(x, np.arange(10)) for x in ds.interactions)

    def test_thousand_line_fixture(self, tmp_path):
        ds = load_interactions(write_thousand_line_fixture(tmp_path / "f.dat"))
        got = {"users": ds.num_users, "items": ds.num_items, "interactions": ds.num_interactions}
        assert got == EXPECTED

    def test_cascade_needs_second_pass(self, tmp_path):
        from midx.dataset import _parse_lines

        users, items = _parse_lines(write_thousand_line_fixture(tmp_path / "f.dat"), None)
        u = np.unique(users, return_inverse=True)[1]
        i = np.unique(items, return_inverse=True)[1]
        pairs = np.unique(np.stack([u, i], axis=1), axis=0)
        # Every item starts with >= 10, so a single user+item pass keeps the rare item.
        assert np.bincount(pairs[:, 1]).min() == 10
        u_cnt, i_cnt = np.bincount(pairs[:, 0]), np.bincount(pairs[:, 1])
        one_pass = pairs[(u_cnt[pairs[:, 0]] >= 10) & (i_cnt[pairs[:, 1]] >= 10)]
        assert len(one_pass) == EXPECTED["interactions"] + 9
        assert len(filter_min_interactions(pairs, 10)) == EXPECTED["interactions"]


@given(st.integers(0, 2**31), st.integers(1, 6))
def test_filter_is_fixed_point(seed, threshold):
    rng = np.random.default_rng(seed)
    n = rng.integers(1, 300)
    pairs = np.unique(np.stack([rng.integers(0, 25, n), rng.integers(0, 25, n)], axis=1), axis=0)
    once = filter_min_interactions(pairs, threshold)
    np.testing.assert_array_equal(filter_min_interactions(once, threshold), once)
    if len(once):
        assert np.bincount(once[:, 0])[np.unique(once[:, 0])].min() >= threshold
        assert np.bincount(once[:, 1])[np.unique(once[:, 1])].min() >= threshold


@given(st.integers(0, 2**31))
def test_build_ids_in_range(seed):
    rng = np.random.default_rng(seed)
    users = rng.integers(0, 15, 400).astype(str)
    items = rng.integers(0, 15, 400).astype(str)
    try:
        ds = build_dataset(users, items, min_interactions=3)
    except DatasetError:
        return
    for x in ds.interactions:
        assert np.all(np.diff(x) > 0) and x.max() < ds.num_items


class TestSplit:
    def test_ten_items(self):
        ds = split_holdout(InteractionDataset.from_lists(1, 10, [np.arange(10)]), 0.8, 0)
        assert len(ds.train[0]) == 8 and len(ds.holdout[0]) == 2

    def test_ceiling_rule(self):
        ds = split_holdout(InteractionDataset.from_lists(1, 5, [np.arange(5)]), 0.8, 0)
        assert len(ds.train[0]) == 4 and len(ds.holdout[0]) == 1

    def test_small_users_keep_one_holdout(self):
        # ceil(0.8 * n) would leave no holdout for n = 2..4; the split keeps one back.
        for n in (2, 3, 4):
            ds = split_holdout(InteractionDataset.from_lists(1, n, [np.arange(n)]), 0.8, 0)
            assert len(ds.holdout[0]) == 1

    def test_single_interaction_user_rejected(self):
        with pytest.raises(DatasetError, match="at least 2"):
            split_holdout(InteractionDataset.from_lists(1, 3, [[0]]), 0.8, 0)

    @pytest.mark.parametrize("ratio", [0.0, 1.0, -0.5, 1.5])
    def test_bad_ratio(self, ratio):
        with pytest.raises(DatasetError):
            split_holdout(random_dataset(0), ratio, 0)

    def test_determinism(self):
        ds = random_dataset(3)
        a, b, c = split_holdout(ds, 0.8, 1), split_holdout(ds, 0.8, 1), split_holdout(ds, 0.8, 2)
        assert all(np.array_equal(x, y) for x, y in zip(a.train, b.train))
        assert any(not np.array_equal(x, y) for x, y in zip(a.train, c.train))

    @given(st.integers(0, 2**31), st.floats(0.05, 0.95))
    def test_partition(self, seed, ratio):
        ds = split_holdout(random_dataset(seed), ratio, seed)
        for inter, tr, ho in zip(ds.interactions, ds.train, ds.holdout):
            assert len(np.intersect1d(tr, ho)) == 0
            np.testing.assert_array_equal(np.union1d(tr, ho), inter)
            assert len(tr) == min(math.ceil(ratio * len(inter)), len(inter) - 1)


class TestPopularity:
    def test_raw(self):
        np.testing.assert_array_equal(popularity_vector([1, 1, 1], "raw").weights, [1, 1, 1])

    def test_log1p(self):
        np.testing.assert_allclose(popularity_vector([0, 3], "log1p").weights, [0, np.log(4)])

    def test_pow075(self):
        np.testing.assert_allclose(popularity_vector([16], "pow075").weights, [8.0])

    def test_unknown_function(self):
        with pytest.raises(ValueError):
            popularity_vector([1], "sqrt")

    def test_empty(self):
        with pytest.raises(DatasetError):
            popularity_vector([0, 0])

    @given(st.integers(0, 2**31))
    def test_counts_sum_to_train_size(self, seed):
        ds = split_holdout(random_dataset(seed), 0.8, seed)
        pv = popularity_vector(ds, "log1p")
        assert pv.counts.sum() == sum(len(x) for x in ds.train)
        assert np.all(pv.weights[pv.counts > 0] > 0) and np.all(np.isfinite(pv.weights))
        np.testing.assert_allclose(pv.weights, np.log1p(pv.counts))


class TestCache:
    def test_round_trip(self, tmp_path):
        ds = split_holdout(random_dataset(5), 0.8, 0)
        save_dataset(ds, tmp_path / "ds.bin")
        back = load_dataset(tmp_path / "ds.bin")
        assert back == ds

    def test_byte_identical_reruns(self, tmp_path):
        src = write_thousand_line_fixture(tmp_path / "f.dat")
        for name in ("a.bin", "b.bin"):
            save_dataset(split_holdout(load_interactions(src), 0.8, 4), tmp_path / name)
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_header(self, tmp_path):
        save_dataset(random_dataset(1), tmp_path / "ds.bin")
        assert (tmp_path / "ds.bin").read_bytes()[:6] == b"MIDXDS"

    def test_rejects_foreign_file(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"garbage" * 4)
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "x.bin")
