import numpy as np
import pytest

from tprcap import vocab as V


def test_reserved_ids_and_unknown():
    voc = V.Vocabulary(["cat", "dog"])
    assert [voc.token(i) for i in range(4)] == ["<pad>", "<s>", "</s>", "<unk>"]
    assert voc.lookup("dog") == 5
    assert voc.lookup("zebra") == V.UNK_ID
    assert voc.decode(voc.encode(["cat", "dog"])) == ["cat", "dog"]


def test_vocab_file_round_trip(tmp_path):
    voc = V.Vocabulary(["a", "red", "cat"])
    voc.save(tmp_path / "v.txt")
    lines = (tmp_path / "v.txt").read_text().splitlines()
    assert lines.index("red") == voc.lookup("red") - 4
    assert V.Vocabulary.load(tmp_path / "v.txt").tokens == voc.tokens


def test_vocab_file_duplicate(tmp_path):
    (tmp_path / "v.txt").write_text("a\nb\na\n")
    with pytest.raises(V.FormatError, match=":3"):
        V.Vocabulary.load(tmp_path / "v.txt")


class TestGlove:
    def test_counting(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("the 0.1 0.2 0.3 0.4\ncat 1 2 3 4\nsat -1 0 1 2.5\n")
        voc, W = V.load_glove_text(p)
        assert len(voc) == 7 and W.shape == (4, 7)
        assert np.abs(W.sum(axis=1)).max() < 1e-9 * 7

    def test_bad_line_named(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("the 0.1 0.2\ncat 1\n")
        with pytest.raises(V.FormatError, match=":2"):
            V.load_glove_text(p)

    def test_duplicate_named(self, tmp_path):
        p = tmp_path / "g.txt"
        p.write_text("the 0.1 0.2\ncat 1 2\nthe 3 4\n")
        with pytest.raises(V.FormatError, match=":3.*duplicate"):
            V.load_glove_text(p)

    def test_save_load_bit_exact(self, tmp_path, rng):
        voc = V.Vocabulary(["w%d" % i for i in range(20)])
        W = V.zero_mean(rng.normal(size=(6, len(voc))))
        V.save_glove_text(tmp_path / "g.txt", voc, W)
        voc2, W2 = V.load_glove_text(tmp_path / "g.txt", center=False)
        assert voc2.tokens == voc.tokens
        np.testing.assert_array_equal(W2, W)


class TestRandomInit:
    def test_deterministic(self):
        np.testing.assert_array_equal(V.random_init(30, 8, 5), V.random_init(30, 8, 5))
        assert not np.array_equal(V.random_init(30, 8, 5), V.random_init(30, 8, 6))

    def test_zero_mean_rows(self):
        W = V.random_init(500, 16, 0)
        assert np.abs(W.sum(axis=1)).max() < 1e-9 * 500

    def test_distinct_columns_pairwise(self):
        W = V.random_init(1000, 50, 3)
        sq = (W**2).sum(axis=0)
        dist2 = sq[:, None] + sq[None, :] - 2 * W.T @ W
        np.fill_diagonal(dist2, np.inf)
        assert dist2.min() > 0

    def test_zero_mean_idempotent(self, rng):
        W = V.zero_mean(rng.normal(size=(5, 40)))
        assert np.abs(V.zero_mean(W) - W).max() < 1e-12


class TestEmbed:
    def test_matches_one_hot_product(self):
        W = V.random_init(25, 6, 1)
        ids = list(range(25))
        np.testing.assert_array_equal(V.embed(ids, W), (W @ np.eye(25)[:, ids]).T)

    def test_pad_consistent(self):
        W = V.random_init(10, 4, 1)
        np.testing.assert_array_equal(V.embed([0, 0], W), np.stack([W[:, 0], W[:, 0]]))

    def test_permutation(self, rng):
        W = V.random_init(10, 4, 1)
        ids = np.array([3, 7, 1, 9])
        perm = rng.permutation(4)
        np.testing.assert_array_equal(V.embed(ids[perm], W), V.embed(ids, W)[perm])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            V.embed([10], V.random_init(10, 4, 1))
