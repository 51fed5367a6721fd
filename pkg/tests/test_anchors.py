from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import anchor_fixture as fx
from xlanchor.anchors import (BilingualDictionary, LanguageProfile, PivotMismatch, UnalignedCorpora,
                              build_anchor_datasets, clean_dictionary, fold_accents, load_dictionary,
                              save_dictionary, split_dataset, train_size, triangulate)
from xlanchor.numerics import Rng
from xlanchor.synthetic import random_corpus
from xlanchor.vecstore import AnchorDataset, Context, ContextCorpus, LayeredTokenEmbedding

EN = LanguageProfile.for_language("en")
SL = LanguageProfile.for_language("sl")


class TestCleaning:
    def test_multiword_dropped(self):
        d = clean_dictionary(BilingualDictionary({("new york", "x"), ("a", "b")}), EN, SL)
        assert d.pairs == {("a", "b")}

    def test_accent_folding(self):
        d = clean_dictionary(BilingualDictionary({("café", "kava")}), EN, SL)
        assert d.pairs == {("cafe", "kava")}

    def test_forbidden_char(self):
        assert len(clean_dictionary(BilingualDictionary({("a#b", "x"), ("c", "d|e")}), EN, SL)) == 0

    def test_accents_kept_when_profile_says_so(self):
        fr = LanguageProfile.for_language("fr")
        assert clean_dictionary(BilingualDictionary({("café", "kava")}), fr, SL).pairs == {("café", "kava")}

    def test_fold_keeps_consonant_diacritics(self):
        assert fold_accents("čébùla") == "čebula"
        assert fold_accents("ЗДРА́ВСТВУЙ") == "ЗДРАВСТВУЙ"

    def test_duplicates_collapse(self):
        d = clean_dictionary(BilingualDictionary({("café", "x"), ("cafe", "x")}), EN, SL)
        assert d.pairs == {("cafe", "x")}

    @settings(max_examples=60)
    @given(st.sets(st.tuples(st.text(max_size=6), st.text(max_size=6)), max_size=8))
    def test_idempotent_and_clean(self, pairs):
        once = clean_dictionary(BilingualDictionary(pairs), EN, SL)
        assert clean_dictionary(once, EN, SL).pairs == once.pairs
        for a, b in once.pairs:
            assert a and b and not any(c.isspace() for c in a + b)
            assert not set(a + b) & EN.forbidden_chars

    def test_file_round_trip(self, tmp_path):
        d = BilingualDictionary({("b", "y"), ("a", "x")}, "en", "de", "triangulated")
        save_dictionary(d, tmp_path / "d.tsv")
        assert (tmp_path / "d.tsv").read_text().splitlines() == ["# xlanchor-dict en de triangulated", "a\tx", "b\ty"]
        back = load_dictionary(tmp_path / "d.tsv")
        assert back == d


class TestTriangulate:
    def test_empty(self):
        assert len(triangulate(BilingualDictionary(), BilingualDictionary({("c", "b")}))) == 0

    def test_single_chain(self):
        out = triangulate(BilingualDictionary({("a", "c")}, "en", "hr"), BilingualDictionary({("c", "b")}, "hr", "sl"))
        assert out.pairs == {("a", "b")}
        assert (out.lang_a, out.lang_b, out.provenance) == ("en", "sl", "triangulated")

    def test_set_semantics(self):
        out = triangulate(BilingualDictionary({("a", "c1"), ("a", "c2")}),
                          BilingualDictionary({("c1", "b"), ("c2", "b")}))
        assert out.pairs == {("a", "b")}

    def test_pivot_mismatch(self):
        with pytest.raises(PivotMismatch):
            triangulate(BilingualDictionary(set(), "en", "hr"), BilingualDictionary(set(), "de", "sl"))

    @given(st.sets(st.tuples(st.sampled_from("abc"), st.sampled_from("xyz"))),
           st.sets(st.tuples(st.sampled_from("xyz"), st.sampled_from("pqr"))))
    def test_matches_definition(self, ac, cb):
        expected = {(a, b) for a, c in ac for c2, b in cb if c == c2}
        assert triangulate(BilingualDictionary(ac), BilingualDictionary(cb)).pairs == expected


def brute_force_anchors(ca, cb, d, cap):
    """Independent enumeration straight from the rule."""
    out, count = [], Counter()
    for x, y in zip(ca.contexts, cb.contexts):
        first_a, first_b = {}, {}
        for j, t in enumerate(x.tokens):
            first_a.setdefault(t.lemma, j)
        for j, t in enumerate(y.tokens):
            first_b.setdefault(t.lemma, j)
        for lem_a, ja in sorted(first_a.items(), key=lambda kv: kv[1]):
            for a, b in sorted(d.pairs):
                if a == lem_a and b in first_b and count[a, b] < cap:
                    count[a, b] += 1
                    out.append((x.context_id, a, b, ja, first_b[b]))
    return out


class TestBuildAnchors:
    def test_golden_fixture(self):
        ca, cb = fx.corpora()
        for cap, expected in ((20, fx.EXPECTED_CAP20), (1, fx.EXPECTED_CAP1)):
            layers = build_anchor_datasets(ca, cb, fx.DICTIONARY, cap)
            for k, ds in enumerate(layers):
                assert ds.layer == k and ds.dim == fx.DIMS[k]
                assert ds.triples() == [e[:3] for e in expected]
                va, vb = fx.expected_vectors(expected, k)
                assert np.array_equal(ds.vecs_a, va) and np.array_equal(ds.vecs_b, vb)

    def test_empty_dictionary(self):
        ca, cb = fx.corpora()
        assert all(len(ds) == 0 for ds in build_anchor_datasets(ca, cb, BilingualDictionary()))

    def test_single_context(self):
        va = (np.array([1.0]), np.array([2.0]), np.array([3.0]))
        vb = (np.array([4.0]), np.array([5.0]), np.array([6.0]))
        ca = ContextCorpus((1, 1, 1), [Context(0, [LayeredTokenEmbedding("Dog", "dog", va)])])
        cb = ContextCorpus((1, 1, 1), [Context(0, [LayeredTokenEmbedding("Pes", "pes", vb)])])
        layers = build_anchor_datasets(ca, cb, BilingualDictionary({("dog", "pes")}))
        for k, ds in enumerate(layers):
            assert ds.triples() == [(0, "dog", "pes")]
            assert ds.vecs_a[0, 0] == va[k][0] and ds.vecs_b[0, 0] == vb[k][0]

    def test_cap_takes_lowest_context_ids(self):
        def ctx(i, lemma, v):
            return Context(i, [LayeredTokenEmbedding(lemma, lemma, (np.array([v]),) * 3)])
        ids = list(range(0, 60, 2))
        ca = ContextCorpus((1, 1, 1), [ctx(i, "dog", i) for i in ids])
        cb = ContextCorpus((1, 1, 1), [ctx(i, "pes", -i) for i in ids])
        ds = build_anchor_datasets(ca, cb, BilingualDictionary({("dog", "pes")}), 20)[0]
        assert ds.context_ids == ids[:20]

    def test_unaligned(self):
        ca, cb = fx.corpora()
        cb.contexts = cb.contexts[:-1]
        with pytest.raises(UnalignedCorpora):
            build_anchor_datasets(ca, cb, fx.DICTIONARY)

    def test_dim_mismatch(self):
        ca = random_corpus(Rng(0), 3, dims=(2, 2, 2))
        cb = random_corpus(Rng(0), 3, dims=(2, 3, 2))
        with pytest.raises(ValueError):
            build_anchor_datasets(ca, cb, fx.DICTIONARY)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 4))
    def test_matches_brute_force(self, seed, cap):
        r = Rng(seed)
        ca = random_corpus(r, 15, dims=(1, 1, 1), vocab=5, prefix="a")
        cb = random_corpus(r, 15, dims=(1, 1, 1), vocab=5, prefix="b")
        pairs = {(f"a{int(i)}", f"b{int(j)}") for i, j in r.integers(5, (8, 2))}
        d = BilingualDictionary(pairs)
        layers = build_anchor_datasets(ca, cb, d, cap)
        expected = brute_force_anchors(ca, cb, d, cap)
        for k, ds in enumerate(layers):
            assert ds.triples() == [e[:3] for e in expected]
            for row, (cid, _, _, ja, jb) in enumerate(expected):
                i = ca.context_ids().index(cid)
                assert ds.vecs_a[row, 0] == ca.contexts[i].tokens[ja].layer_vecs[k][0]
                assert ds.vecs_b[row, 0] == cb.contexts[i].tokens[jb].layer_vecs[k][0]
        counts = Counter((a, b) for _, a, b in layers[0].triples())
        assert all(v <= cap for v in counts.values())


def plain_ds(n):
    return AnchorDataset(0, "en", "sl", 1, list(range(n)), [f"a{i}" for i in range(n)],
                         [f"b{i}" for i in range(n)], np.arange(n, dtype=float), np.arange(n, dtype=float))


class TestSplit:
    def test_default_ratio_985_15(self):
        tr, ev = split_dataset(plain_ds(1000), 0.985, 7)
        assert (len(tr), len(ev)) == (985, 15)

    def test_single_record(self):
        tr, ev = split_dataset(plain_ds(1), 0.985, 0)
        assert (len(tr), len(ev)) == (1, 0)

    def test_half_rounds_up(self):
        assert train_size(3, 0.5) == 2
        assert train_size(200, 0.985) == 197

    def test_reproducible(self):
        a = split_dataset(plain_ds(50), 0.8, 3)
        b = split_dataset(plain_ds(50), 0.8, 3)
        assert a[0] == b[0] and a[1] == b[1]
        c = split_dataset(plain_ds(50), 0.8, 4)
        assert c[0].context_ids != a[0].context_ids

    @given(st.integers(1, 300), st.floats(0.01, 0.99), st.integers(0, 1000))
    def test_partition(self, n, frac, seed):
        tr, ev = split_dataset(plain_ds(n), frac, seed)
        ids_tr, ids_ev = set(tr.context_ids), set(ev.context_ids)
        assert not ids_tr & ids_ev and ids_tr | ids_ev == set(range(n))
        assert len(tr) == train_size(n, frac)
        assert tr.context_ids == sorted(tr.context_ids)

    @pytest.mark.parametrize("frac", [0.0, 1.0, 1.5, -0.1])
    def test_bad_fraction(self, frac):
        with pytest.raises(ValueError):
            split_dataset(plain_ds(10), frac, 0)

    def test_empty(self):
        with pytest.raises(ValueError):
            split_dataset(plain_ds(0), 0.5, 0)
