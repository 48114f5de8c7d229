"""Loader semantics, splits, subsets, stats, and the synthetic profiles."""

import numpy as np
import pytest

from posrec import synth
from posrec.data import (
    InteractionDataset,
    format_stats_table,
    leave_one_out,
    load_attributes,
    load_cache,
    load_interactions,
    read_stats_tsv,
    save_cache,
    save_interactions,
    stats,
    subset,
    write_stats_tsv,
)
from posrec.errors import DataFormatError, UserError
from posrec.numeric import Rng


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def counts_dataset(lengths, num_items):
    """Dataset with exact user/item/interaction counts, items covered cyclically."""
    total = int(sum(lengths))
    flat = np.arange(total, dtype=np.int64) % num_items
    bounds = np.cumsum(lengths)[:-1]
    sequences = [s for s in np.split(flat, bounds)]
    times = [np.arange(len(s), dtype=np.float64) for s in sequences]
    return InteractionDataset(
        sequences=sequences,
        times=times,
        num_items=num_items,
        user_ids=[str(u) for u in range(len(lengths))],
        item_ids=[str(i) for i in range(num_items)],
    )


# ---------------------------------------------------------------------------
# loading


def test_rows_sorted_by_timestamp_with_stable_ties(tmp_path):
    path = write(
        tmp_path,
        "log.tsv",
        "u1\ta\t30\n"
        "u1\tb\t10\n"
        "u1\tc\t20\n"
        "u1\td\t20\n",  # same ts as c, must stay after it
    )
    ds = load_interactions(path)
    items = [ds.item_ids[i] for i in ds.sequences[0]]
    assert items == ["b", "c", "d", "a"]


def test_duplicate_interactions_are_kept(tmp_path):
    path = write(tmp_path, "log.tsv", "u\tx\t1\nu\tx\t1\nu\ty\t2\n")
    ds = load_interactions(path)
    assert ds.num_interactions == 3
    assert [ds.item_ids[i] for i in ds.sequences[0]] == ["x", "x", "y"]


def test_csv_and_header_are_detected(tmp_path):
    path = write(tmp_path, "log.csv", "user_id,item_id,timestamp\nu,a,1\nu,b,2\n")
    ds = load_interactions(path)
    assert ds.num_users == 1 and ds.num_items == 2


def test_users_below_min_interactions_are_dropped_and_counted(tmp_path):
    path = write(tmp_path, "log.tsv", "u1\ta\t1\nu1\tb\t2\nu2\tc\t1\n")
    ds = load_interactions(path)
    assert ds.num_users == 1
    assert ds.dropped_users == 1
    assert all(len(s) >= 2 for s in ds.sequences)


def test_bad_row_reports_line_number(tmp_path):
    path = write(tmp_path, "log.tsv", "u\ta\t1\nu\tb\n")
    with pytest.raises(DataFormatError) as err:
        load_interactions(path)
    assert err.value.line_no == 2


def test_bad_timestamp_reports_line_number(tmp_path):
    path = write(tmp_path, "log.tsv", "u\ta\t1\nu\tb\tlater\n")
    with pytest.raises(DataFormatError) as err:
        load_interactions(path)
    assert err.value.line_no == 2


def test_empty_file_is_a_user_error(tmp_path):
    with pytest.raises(UserError):
        load_interactions(write(tmp_path, "log.tsv", "\n"))


def test_reindexing_is_a_bijection(tmp_path):
    path = write(tmp_path, "log.tsv", "b\ty\t1\nb\tx\t2\na\ty\t1\na\tz\t2\n")
    ds = load_interactions(path)
    assert sorted(ds.user_ids) == ["a", "b"]
    assert len(set(ds.item_ids)) == ds.num_items == 3
    for seq in ds.sequences:
        assert (seq >= 0).all() and (seq < ds.num_items).all()


def test_save_and_reload_round_trip(tmp_path):
    ds = synth.build_dataset("random", users=7, items=13, seq_len=5, seed=3)
    path = str(tmp_path / "out.tsv")
    save_interactions(ds, path)
    again = load_interactions(path)
    assert again.num_users == ds.num_users
    for a, b in zip(ds.sequences, again.sequences):
        assert [ds.item_ids[i] for i in a] == [again.item_ids[i] for i in b]


def test_cache_round_trip(tmp_path):
    ds = synth.build_dataset("positional", users=5, items=20, seq_len=8, seed=4)
    ds.attributes = Rng(1).normal((20, 3))
    path = str(tmp_path / "cache.npz")
    save_cache(ds, path)
    again = load_cache(path)
    assert again.num_items == ds.num_items
    for a, b in zip(ds.sequences, again.sequences):
        assert np.array_equal(a, b)
    assert np.array_equal(again.attributes, ds.attributes)
    assert load_interactions(path).num_users == ds.num_users  # dispatch on suffix


def test_attribute_sidecar_alignment(tmp_path):
    log = write(tmp_path, "log.tsv", "u\tfoo\t1\nu\tbar\t2\n")
    side = write(tmp_path, "attrs.csv", "item_id,a_0,a_1\nbar,1,2\nfoo,3,4\nmissing,9,9\n")
    ds = load_interactions(log)
    load_attributes(side, ds)
    assert ds.attribute_dim == 2
    foo_row = ds.attributes[ds.item_ids.index("foo")]
    np.testing.assert_array_equal(foo_row, [3.0, 4.0])


# ---------------------------------------------------------------------------
# published count shapes


def test_density_on_published_beauty_counts():
    lengths = [8] * 29480 + [7] * 22724  # 52,204 users, 394,908 rows
    ds = counts_dataset(lengths, 57289)
    s = stats(ds)
    assert s["users"] == 52204 and s["items"] == 57289 and s["interactions"] == 394908
    assert f"{s['density']:.3e}" == "1.320e-04"


def test_density_on_published_submen2_counts():
    lengths = [8] * 4391 + [7] * 5609  # 10,000 users, 74,391 rows
    ds = counts_dataset(lengths, 45129)
    s = stats(ds)
    assert s["users"] == 10000 and s["interactions"] == 74391
    assert f"{s['density']:.3e}" == "1.648e-04"


# ---------------------------------------------------------------------------
# splits


def test_leave_one_out_assigns_last_and_second_to_last():
    ds = counts_dataset([4], 10)  # one user: items [0, 1, 2, 3]
    split = leave_one_out(ds)
    assert np.array_equal(split.train_sequences[0], [0, 1])
    assert split.valid[0].target == 2
    assert np.array_equal(split.valid[0].context, [0, 1])
    assert split.test[0].target == 3
    assert np.array_equal(split.test[0].context, [0, 1, 2])


def test_length_two_users_have_no_validation_row():
    ds = counts_dataset([2, 3], 5)
    split = leave_one_out(ds)
    assert len(split.test) == 2
    assert len(split.valid) == 1
    assert split.train_sequences[0].size == 0


# ---------------------------------------------------------------------------
# subsets


def make_skewed(tmp_path):
    # item popularity 0 > 1 > 2 > 3; five users
    rows = []
    pop = {0: 6, 1: 5, 2: 3, 3: 2}
    k = 0
    for item, n in pop.items():
        for _ in range(n):
            rows.append(f"u{k % 5}\ti{item}\t{k}")
            k += 1
    return load_interactions(write(tmp_path, "log.tsv", "\n".join(rows) + "\n"))


def test_subset_keeps_most_popular_items(tmp_path):
    ds = make_skewed(tmp_path)
    # brute-force popularity oracle on the raw sequences
    counts = {}
    for seq in ds.sequences:
        for i in seq:
            counts[int(i)] = counts.get(int(i), 0) + 1
    top2 = {i for i, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:2]}
    small = subset(ds, user_budget=ds.num_users, item_budget=2, rng=Rng(5))
    kept_orig = set(small.item_ids)
    expected = {ds.item_ids[i] for i in top2}
    assert kept_orig == expected


def test_subset_counts_never_grow(tmp_path):
    ds = make_skewed(tmp_path)
    small = subset(ds, user_budget=3, item_budget=3, rng=Rng(6))
    assert small.num_users <= 3
    assert small.num_items <= 3
    assert small.num_interactions <= ds.num_interactions
    assert all(len(s) >= 2 for s in small.sequences)


def test_subset_is_deterministic_given_rng(tmp_path):
    ds = make_skewed(tmp_path)
    a = subset(ds, 4, 3, Rng(9, 1))
    b = subset(ds, 4, 3, Rng(9, 1))
    assert a.user_ids == b.user_ids
    for s, t in zip(a.sequences, b.sequences):
        assert np.array_equal(s, t)


def test_subset_rejects_budgets_beyond_counts(tmp_path):
    ds = make_skewed(tmp_path)
    with pytest.raises(UserError):
        subset(ds, ds.num_users + 1, 2, Rng(1))
    with pytest.raises(UserError):
        subset(ds, 2, 0, Rng(1))


def test_subset_reports_both_densities(tmp_path):
    ds = make_skewed(tmp_path)
    small = subset(ds, user_budget=ds.num_users, item_budget=3, rng=Rng(2))
    s = stats(small)
    assert s["budget_users"] == ds.num_users and s["budget_items"] == 3
    assert s["budget_density"] == small.num_interactions / (ds.num_users * 3)
    assert s["density"] == small.density


# ---------------------------------------------------------------------------
# stats serialization


def test_stats_tsv_round_trip(tmp_path):
    ds = synth.build_dataset("random", 6, 9, 4, seed=8)
    s = stats(ds)
    path = str(tmp_path / "stats.tsv")
    write_stats_tsv(s, path)
    back = read_stats_tsv(path)
    assert back["users"] == s["users"]
    assert back["interactions"] == s["interactions"]
    assert abs(back["density"] - s["density"]) < 1e-12
    assert str(s["users"]) in format_stats_table(s)


# ---------------------------------------------------------------------------
# synthetic profiles


def test_memorizable_follows_the_cycle():
    seqs = synth.generate_sequences("memorizable", 10, 7, 9, seed=1)
    for u, seq in enumerate(seqs):
        assert seq[0] == u % 7
        assert ((seq[1:] - seq[:-1]) % 7 == 1).all()


def test_positional_increments_stay_in_allowed_set():
    # every same-parity difference is shift plus one of the four offsets
    seqs = synth.generate_sequences("positional", 20, 101, 12, seed=2, shift=7)
    allowed = {7 + off for off in synth.STEP_OFFSETS}
    for seq in seqs:
        diffs = {int((seq[t] - seq[t - 2]) % 101) for t in range(2, len(seq))}
        assert diffs <= allowed


def test_positional_increments_are_redrawn_each_step():
    # increments vary within a user's walk and all four values occur
    seqs = synth.generate_sequences("positional", 40, 101, 16, seed=2, shift=7)
    varied = 0
    seen = set()
    for seq in seqs:
        diffs = {int((seq[t] - seq[t - 2]) % 101) for t in range(2, len(seq))}
        varied += len(diffs) > 1
        seen |= diffs
    assert varied > 30
    assert seen == {7 + off for off in synth.STEP_OFFSETS}


def test_positional_walks_start_independently():
    seqs = synth.generate_sequences("positional", 40, 101, 16, seed=2, shift=7)
    start_pairs = [(int(seq[0]), int(seq[1])) for seq in seqs]
    assert sum(a != b for a, b in start_pairs) > 30
    assert len({a for a, _ in start_pairs}) > 10


def test_generation_is_deterministic():
    a = synth.generate_sequences("random", 5, 11, 6, seed=3)
    b = synth.generate_sequences("random", 5, 11, 6, seed=3)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_unknown_profile_rejected():
    with pytest.raises(UserError):
        synth.generate_sequences("cyclic", 5, 5, 5, seed=1)


def test_positional_bayes_predictor_beats_popularity():
    # brute-force Bayes on the generative rule — (user, parity, item two
    # back) -> next — is exact everywhere; the popularity baseline is not
    seqs = synth.generate_sequences("positional", 50, 120, 14, seed=5)
    table = {}
    pop = {}
    for u, seq in enumerate(seqs):
        for t in range(2, len(seq)):
            key = (u, t % 2, int(seq[t - 2]))
            nxt = table.setdefault(key, {})
            nxt[int(seq[t])] = nxt.get(int(seq[t]), 0) + 1
            pop[int(seq[t])] = pop.get(int(seq[t]), 0) + 1
    top_item = max(pop.items(), key=lambda kv: kv[1])[0]
    bayes_hits = pop_hits = total = 0
    for u, seq in enumerate(seqs):
        for t in range(2, len(seq)):
            total += 1
            key = (u, t % 2, int(seq[t - 2]))
            pred = max(table[key].items(), key=lambda kv: kv[1])[0]
            bayes_hits += pred == seq[t]
            pop_hits += top_item == seq[t]
    assert bayes_hits / total == 1.0
    assert pop_hits / total < 0.5
