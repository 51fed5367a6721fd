"""Induction precision as a function of the number of training pairs.

Linear maps (plain Procrustes and the ELMoVM preset) are always fitted;
pass ``--gan-iterations`` to add the adversarial aligner, which is much
slower. The eval slice stays fixed while the training slice grows. Targets get
extra Gaussian noise so the linear fits need data to average it out.

    python3 scripts/dataset_size_sweep.py --sizes 50 100 200 500 1000 2800
"""

import argparse

from xlanchor.gan_align import GanTrainConfig, init_gan, train
from xlanchor.linear_align import fit_vecmap, preset
from xlanchor.numerics import Rng
from xlanchor.synthetic import pair_datasets, warped_pairs
from xlanchor.vecstore import l2_normalize
from xlanchor.xeval import induction_score


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--warp", type=float, default=0.1)
    ap.add_argument("--noise", type=float, default=0.3, help="per-component Gaussian noise on the targets")
    ap.add_argument("--sizes", type=int, nargs="+", default=[40, 80, 160, 320, 640, 1280, 2800])
    ap.add_argument("--eval", type=int, default=200)
    ap.add_argument("--gan-iterations", type=int, default=0)
    ap.add_argument("--seed", type=int, default=123)
    args = ap.parse_args()

    n = max(args.sizes) + args.eval
    r = Rng(args.seed)
    X, Y, _, _ = warped_pairs(r, n, args.dim, args.warp)
    Y = l2_normalize(Y + args.noise * r.normal(Y.shape))
    full, ev = pair_datasets(X, Y, n_eval=args.eval)
    methods = ["procrustes", "ELMoVM"] + (["gan"] if args.gan_iterations else [])
    print("train_pairs\t" + "\t".join(methods))
    for size in args.sizes:
        tr = full.subset(list(range(size)))
        models = {"procrustes": fit_vecmap(tr, preset("nonorm")), "ELMoVM": fit_vecmap(tr, preset("ELMoVM"))}
        if args.gan_iterations:
            cfg = GanTrainConfig(iterations=args.gan_iterations, checkpoint_every=0,
                                 batch_size=min(256, size), gen_hidden=(128, 256, 128),
                                 disc_hidden=(128, 128, 64), seed=1)
            models["gan"], _ = train(init_gan(args.dim, cfg), tr, None, cfg)
        row = [induction_score(models[m], ev).value for m in methods]
        print(f"{size}\t" + "\t".join(f"{v:.3f}" for v in row), flush=True)


if __name__ == "__main__":
    main()
