import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opensiam.dataset import SplitSpec, generate_synthetic, make_split
from opensiam.recognition import (
    Decision,
    GalleryIndex,
    ScoreRecord,
    build_gallery,
    calibrate_threshold,
    decide,
    embed_gallery,
    read_scores,
    score_probe,
    split_scores,
    write_scores,
)
from opensiam.siamese import distance, forward, init_net


def brute_force_min(net, probe, vectors):
    return min(distance(net, probe, v) for v in vectors)


def rates(known, unknown, t):
    fpr = sum(u <= t for u in unknown) / len(unknown)
    fnr = sum(k > t for k in known) / len(known)
    return fpr, fnr


class TestGallery:
    def test_one_entry_per_train_sample(self):
        store = generate_synthetic(8, 4, 5, 0.1, 0)
        split = make_split(store, SplitSpec.absolute(5), rng_seed=1)
        idx = build_gallery(init_net((5, 4, 3), 0), split, store)
        assert len(idx) == 10
        assert set(idx.identities) <= split.known_ids

    def test_embeddings_match_forward_bitwise(self, store, split, small_net):
        idx = build_gallery(small_net, split, store)
        for i, e in zip(idx.sample_indices, idx.embeddings):
            assert np.array_equal(e, forward(small_net, store.vectors[i]))

    def test_self_probe_scores_zero(self, store, split, small_net):
        idx = build_gallery(small_net, split, store)
        for i in split.train:
            s = score_probe(idx, small_net, store.vectors[i])
            assert s.score == 0.0
            assert store.labels[s.nearest_index] == store.labels[i]

    def test_empty_train_rejected(self, store, small_net):
        with pytest.raises(ValueError):
            embed_gallery(small_net, store, [])

    def test_index_is_read_only(self, store, split, small_net):
        idx = build_gallery(small_net, split, store)
        with pytest.raises(ValueError):
            idx.embeddings[0, 0] = 1.0


class TestScoreProbe:
    def test_exact_match_witness(self, store, split, small_net):
        idx = build_gallery(small_net, split, store)
        target = split.train[3]
        s = score_probe(idx, small_net, store.vectors[target])
        assert s.score == 0.0 and s.nearest_index == target

    def test_singleton_gallery(self, store, small_net, rng):
        idx = embed_gallery(small_net, store, [4])
        probe = rng.normal(size=5)
        assert score_probe(idx, small_net, probe).score == distance(small_net, probe, store.vectors[4])

    def test_ties_go_to_first_entry(self, small_net):
        emb = np.array([[1.0, 0, 0], [1.0, 0, 0], [0, 0, 0]])
        idx = GalleryIndex(("a", "b", "c"), (10, 11, 12), emb)
        net = init_net((5, 3), 0)
        net.weights[0][:] = 0
        net.biases[0][:] = [1.0, 0, 0]
        s = score_probe(idx, net, np.zeros(5))
        assert (s.score, s.nearest_identity, s.nearest_index) == (0.0, "a", 10)

    def test_dimension_mismatch(self, store, split, small_net):
        idx = build_gallery(small_net, split, store)
        with pytest.raises(ValueError):
            score_probe(idx, small_net, np.zeros(3))

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12))
    def test_min_property_and_monotonicity(self, seed, n):
        rng = np.random.default_rng(seed)
        store = generate_synthetic(4, 4, 5, 1.0, seed % 997)
        net = init_net((5, 6, 3), seed % 991)
        probe = rng.normal(size=5)
        rows = list(rng.choice(len(store), size=n, replace=False))
        s = score_probe(embed_gallery(net, store, rows), net, probe)
        dists = [distance(net, probe, store.vectors[i]) for i in rows]
        assert all(s.score <= d for d in dists)
        assert s.score == distance(net, probe, store.vectors[s.nearest_index])
        extra = [i for i in range(len(store)) if i not in rows][:1]
        if extra:
            bigger = score_probe(embed_gallery(net, store, rows + extra), net, probe)
            assert bigger.score <= s.score


class TestDecide:
    def test_cases(self):
        assert decide(0.0, 0.0) is Decision.KNOWN
        assert decide(0.5, 0.4) is Decision.UNKNOWN
        assert all(decide(s, 1e308) is Decision.KNOWN for s in (0.0, 3.0, 1e300))

    @given(s1=st.floats(0, 1e6), s2=st.floats(0, 1e6), t=st.floats(0, 1e6))
    def test_monotone(self, s1, s2, t):
        lo, hi = sorted((s1, s2))
        if decide(hi, t) is Decision.KNOWN:
            assert decide(lo, t) is Decision.KNOWN


class TestCalibrate:
    def test_equal_error_separated(self):
        known, unknown = [0.1, 0.2], [0.9, 1.0]
        t = calibrate_threshold(known, unknown, "equal_error")
        assert t == pytest.approx(0.55)
        assert rates(known, unknown, t) == (0.0, 0.0)

    def test_target_zero_fpr(self):
        t = calibrate_threshold([0.1, 0.2, 0.95], [0.9, 1.0], "target_fpr", alpha=0.0)
        assert t < 0.9
        assert t == pytest.approx(0.55)

    def test_target_fpr_when_unknown_is_lowest(self):
        t = calibrate_threshold([0.5], [0.0, 1.0], "target_fpr", alpha=0.0)
        assert decide(0.0, t) is Decision.UNKNOWN

    def test_identical_lists(self):
        scores = [0.3, 0.5, 0.7, 0.7]
        t = calibrate_threshold(scores, scores, "equal_error")
        fpr, fnr = rates(scores, scores, t)
        assert fpr == 1 - fnr
        assert abs(fpr - fnr) == 0.0

    @settings(max_examples=100, deadline=None)
    @given(
        known=st.lists(st.integers(0, 20).map(lambda v: v / 10), min_size=1, max_size=15),
        unknown=st.lists(st.integers(0, 20).map(lambda v: v / 10), min_size=1, max_size=15),
    )
    def test_equal_error_minimizes_gap_over_sweep(self, known, unknown):
        t = calibrate_threshold(known, unknown, "equal_error")
        # brute-force sweep over a fine grid covering every gap between scores
        grid = np.linspace(-0.05, 2.05, 2101)
        best = min(abs(np.subtract(*rates(known, unknown, g))) for g in grid)
        assert abs(np.subtract(*rates(known, unknown, t))) == pytest.approx(best)

    def test_errors(self):
        with pytest.raises(ValueError):
            calibrate_threshold([], [1.0])
        with pytest.raises(ValueError):
            calibrate_threshold([1.0], [2.0], "target_fpr")
        with pytest.raises(ValueError):
            calibrate_threshold([1.0], [2.0], "bogus")


def test_scores_file_roundtrip(tmp_path):
    recs = [ScoreRecord("0", Decision.KNOWN, 0.125, "alice"), ScoreRecord("7", Decision.UNKNOWN, 1 / 3, "bob")]
    write_scores(recs, tmp_path / "s.txt")
    text = (tmp_path / "s.txt").read_text()
    assert text.splitlines()[0] == "0,known,0.125,alice"
    back = read_scores(tmp_path / "s.txt")
    assert back == recs
    assert split_scores(back) == ([0.125], [1 / 3])


def test_scores_file_errors(tmp_path):
    (tmp_path / "bad.txt").write_text("0,maybe,0.1,a\n")
    with pytest.raises(ValueError, match=":1:"):
        read_scores(tmp_path / "bad.txt")
