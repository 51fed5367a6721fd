"""Slow, loop-based reference implementations of the retrieval metrics.

They share no code with the package: cosine is computed per pair with
``math.fsum``, ranking is an explicit sort on (-similarity, index).
"""

import math


def cosine(u, v):
    nu = math.sqrt(math.fsum(x * x for x in u))
    nv = math.sqrt(math.fsum(x * x for x in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return math.fsum(a * b for a, b in zip(u, v)) / (nu * nv)


def ranking(query, candidates):
    sims = [(-cosine(query, c), i) for i, c in enumerate(candidates)]
    return [i for _, i in sorted(sims)]


def precision(queries, gold_indices, candidates, k):
    hits = sum(1 for q, g in zip(queries, gold_indices) if g in ranking(q, candidates)[:k])
    return hits / len(queries)


def vocab_average(lemmas, vectors):
    order, sums, counts = [], {}, {}
    for lem, v in zip(lemmas, vectors):
        if lem not in sums:
            order.append(lem)
            sums[lem] = [0.0] * len(v)
            counts[lem] = 0
        sums[lem] = [s + float(x) for s, x in zip(sums[lem], v)]
        counts[lem] += 1
    return order, [[s / counts[lem] for s in sums[lem]] for lem in order]


def induction(ds, maps, ks=(1, 5, 10)):
    """Six-way average for an anchor dataset.

    ``maps`` gives ``(query_fn, candidate_fn)`` per direction; candidates
    are averaged per lemma first and then mapped, as in the package.
    """
    vals = []
    sides = {"a_to_b": (ds.vecs_a, ds.lemmas_b, ds.vecs_b), "b_to_a": (ds.vecs_b, ds.lemmas_a, ds.vecs_a)}
    for direction in ("a_to_b", "b_to_a"):
        qf, cf = maps[direction]
        q_vecs, gold_lemmas, cand_vecs = sides[direction]
        order, avg = vocab_average(gold_lemmas, cand_vecs.tolist())
        cands = [list(map(float, row)) for row in cf(avg)] if cf else avg
        queries = [list(map(float, row)) for row in (qf(q_vecs) if qf else q_vecs)]
        gold = [order.index(g) for g in gold_lemmas]
        ranks = [ranking(q, cands) for q in queries]
        for k in ks:
            vals.append(sum(1 for r, g in zip(ranks, gold) if g in r[:k]) / len(queries))
    return vals, sum(vals) / len(vals)


def accuracy_at_1(queries, candidates):
    return sum(1 for i, q in enumerate(queries) if ranking(q, candidates)[0] == i) / len(queries)
