"""Compare the five linear presets as noise and mean offset grow.

Each cell is induction p@1 averaged over both directions on held-out pairs
of a rotation task y = xQ + noise, with both sides shifted by random means.

    python3 scripts/vecmap_presets.py --dim 32 --offsets 0 1 2 4
"""

import argparse

from xlanchor.linear_align import MODES, PRESETS, fit_vecmap, preset
from xlanchor.numerics import Rng
from xlanchor.synthetic import pair_datasets, random_orthogonal
from xlanchor.xeval import induction_score


def task(seed, n, dim, noise, offset, n_eval):
    r = Rng(seed)
    X = r.normal((n, dim))
    Y = X @ random_orthogonal(r, dim) + noise * r.normal((n, dim))
    return pair_datasets(X + offset * r.normal(dim), Y + offset * r.normal(dim), n_eval=n_eval)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--eval", type=int, default=200)
    ap.add_argument("--noise", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    ap.add_argument("--offsets", type=float, nargs="+", default=[0.0, 1.0, 2.0, 4.0])
    ap.add_argument("--mode", choices=MODES, default="orthogonal")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    names = list(PRESETS)
    print("noise\toffset\t" + "\t".join(names))
    for noise in args.noise:
        for offset in args.offsets:
            tr, ev = task(args.seed, args.pairs, args.dim, noise, offset, args.eval)
            cells = []
            for name in names:
                rep = induction_score(fit_vecmap(tr, preset(name), args.mode), ev)
                cells.append((rep.values[("precision_at_1", "a_to_b")] + rep.values[("precision_at_1", "b_to_a")]) / 2)
            print(f"{noise:g}\t{offset:g}\t" + "\t".join(f"{c:.3f}" for c in cells), flush=True)


if __name__ == "__main__":
    main()
