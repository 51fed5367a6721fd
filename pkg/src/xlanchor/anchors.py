"""Contextual anchor extraction from paragraph-aligned, pre-embedded corpora.

Pipeline: clean the bilingual dictionary (optionally after triangulating
it through a pivot language), scan aligned contexts for tokens whose
lemmas form a dictionary pair, emit one record per layer, split.
"""

from __future__ import annotations

import unicodedata
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import ROUND_FLOOR, Decimal

import numpy as np

from .numerics import Rng
from .vecstore import AnchorDataset, ContextCorpus, read_dictionary_file, write_dictionary_file

PROVENANCES = ("direct", "triangulated", "external")

# combining marks removed after a vowel: grave, acute, circumflex, tilde,
# macron, diaeresis, double acute, double grave, inverted breve
ACCENT_MARKS = frozenset("̀́̂̃̄̈̋̏̑")
VOWELS = frozenset("aeiouyAEIOUY" "аеёиоуыэюяАЕЁИОУЫЭЮЯ" "іїєІЇЄ")
DEFAULT_FORBIDDEN = frozenset('#()[]{}<>|*@=~^_"\\')
# languages whose orthography has no accented vowels, so accents in
# dictionary entries are stress/tone marks or noise
STRIP_ACCENT_LANGS = frozenset({"en", "sl", "hr", "ru"})


class PivotMismatch(ValueError):
    pass


class UnalignedCorpora(ValueError):
    pass


@dataclass
class BilingualDictionary:
    pairs: set[tuple[str, str]] = field(default_factory=set)
    lang_a: str | None = None
    lang_b: str | None = None
    provenance: str = "direct"

    def __post_init__(self):
        self.pairs = set(self.pairs)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")

    def __len__(self) -> int:
        return len(self.pairs)

    def sorted_pairs(self) -> list[tuple[str, str]]:
        return sorted(self.pairs)

    def translations(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = defaultdict(list)
        for a, b in self.sorted_pairs():
            out[a].append(b)
        return dict(out)


def load_dictionary(path, lang_a: str | None = None, lang_b: str | None = None,
                    provenance: str | None = None) -> BilingualDictionary:
    pairs, meta = read_dictionary_file(path)
    return BilingualDictionary(set(pairs), lang_a or meta.get("lang_a"), lang_b or meta.get("lang_b"),
                               provenance or meta.get("provenance", "direct"))


def save_dictionary(d: BilingualDictionary, path) -> None:
    write_dictionary_file(path, d.sorted_pairs(), d.lang_a, d.lang_b, d.provenance)


@dataclass(frozen=True)
class LanguageProfile:
    lang: str
    strip_accented_vowels: bool = False
    forbidden_chars: frozenset = DEFAULT_FORBIDDEN

    @classmethod
    def for_language(cls, lang: str) -> "LanguageProfile":
        return cls(lang, lang in STRIP_ACCENT_LANGS)


def fold_accents(text: str) -> str:
    """Drop accent marks sitting on vowels (``café`` -> ``cafe``); keep other diacritics."""
    out = []
    base = ""
    for ch in unicodedata.normalize("NFD", text):
        if unicodedata.combining(ch):
            if ch in ACCENT_MARKS and base in VOWELS:
                continue
        else:
            base = ch
        out.append(ch)
    return unicodedata.normalize("NFC", "".join(out))


def _clean_lemma(lemma: str, profile: LanguageProfile) -> str | None:
    lemma = unicodedata.normalize("NFC", lemma.strip())
    if not lemma or any(c.isspace() for c in lemma):
        return None
    if any(c in profile.forbidden_chars for c in lemma):
        return None
    return fold_accents(lemma) if profile.strip_accented_vowels else lemma


def clean_dictionary(d: BilingualDictionary, profile_a: LanguageProfile, profile_b: LanguageProfile) -> BilingualDictionary:
    """Drop multi-word and noisy entries, fold accents per language."""
    out = set()
    for a, b in d.pairs:
        ca = _clean_lemma(a, profile_a)
        cb = _clean_lemma(b, profile_b)
        if ca is not None and cb is not None:
            out.add((ca, cb))
    return BilingualDictionary(out, d.lang_a, d.lang_b, d.provenance)


def triangulate(dict_ac: BilingualDictionary, dict_cb: BilingualDictionary) -> BilingualDictionary:
    """Compose A-C and C-B dictionaries through the pivot language C."""
    if dict_ac.lang_b is not None and dict_cb.lang_a is not None and dict_ac.lang_b != dict_cb.lang_a:
        raise PivotMismatch(f"pivot languages differ: {dict_ac.lang_b!r} vs {dict_cb.lang_a!r}")
    via = defaultdict(set)
    for c, b in dict_cb.pairs:
        via[c].add(b)
    out = {(a, b) for a, c in dict_ac.pairs for b in via.get(c, ())}
    return BilingualDictionary(out, dict_ac.lang_a, dict_cb.lang_b, "triangulated")


def build_anchor_datasets(corpus_a: ContextCorpus, corpus_b: ContextCorpus, dictionary: BilingualDictionary,
                          max_contexts: int = 20, lang_a: str | None = None,
                          lang_b: str | None = None) -> tuple[AnchorDataset, AnchorDataset, AnchorDataset]:
    """One anchor dataset per layer from matching contexts.

    For every context, each dictionary pair whose A lemma occurs in the A
    paragraph and whose B lemma occurs in the B paragraph yields one
    record built from the first occurrence on each side. A pair
    contributes at most ``max_contexts`` records, taken in context order.
    """
    if max_contexts < 1:
        raise ValueError("max_contexts must be at least 1")
    if corpus_a.context_ids() != corpus_b.context_ids():
        raise UnalignedCorpora("corpora do not have identical context id sequences")
    if corpus_a.dims != corpus_b.dims:
        raise ValueError(f"layer dims differ between corpora: {corpus_a.dims} vs {corpus_b.dims}")
    lang_a = lang_a or dictionary.lang_a or "a"
    lang_b = lang_b or dictionary.lang_b or "b"
    trans = dictionary.translations()
    counts: dict[tuple[str, str], int] = defaultdict(int)
    cids, la, lb = [], [], []
    va: list[list[np.ndarray]] = [[], [], []]
    vb: list[list[np.ndarray]] = [[], [], []]
    for ctx_a, ctx_b in zip(corpus_a.contexts, corpus_b.contexts):
        first_b = {}
        for tok in ctx_b.tokens:
            first_b.setdefault(tok.lemma, tok)
        seen = set()
        for tok in ctx_a.tokens:
            if tok.lemma in seen:
                continue
            seen.add(tok.lemma)
            for target in trans.get(tok.lemma, ()):
                other = first_b.get(target)
                key = (tok.lemma, target)
                if other is None or counts[key] >= max_contexts:
                    continue
                counts[key] += 1
                cids.append(ctx_a.context_id)
                la.append(tok.lemma)
                lb.append(target)
                for k in range(3):
                    va[k].append(tok.layer_vecs[k])
                    vb[k].append(other.layer_vecs[k])
    out = []
    for k in range(3):
        dim = corpus_a.dims[k]
        A = np.array(va[k]).reshape(len(cids), dim)
        B = np.array(vb[k]).reshape(len(cids), dim)
        out.append(AnchorDataset(k, lang_a, lang_b, dim, list(cids), list(la), list(lb), A, B))
    return tuple(out)


def train_size(n: int, train_fraction: float) -> int:
    """``round(train_fraction * n)`` with halves rounded up, in exact decimal."""
    x = Decimal(repr(train_fraction)) * n + Decimal("0.5")
    return int(x.to_integral_value(rounding=ROUND_FLOOR))


def split_dataset(ds: AnchorDataset, train_fraction: float = 0.985, rng: Rng | int = 0):
    """Seeded shuffle split into ``(train, eval)``; both keep the original record order."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    n = len(ds)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if not isinstance(rng, Rng):
        rng = Rng(rng)
    perm = rng.permutation(n)
    k = train_size(n, train_fraction)
    return ds.subset(np.sort(perm[:k])), ds.subset(np.sort(perm[k:]))
