"""Command-line pipeline: dictionary prep, anchors, split, fit, map, evaluate.

Exit codes: 0 success, 2 I/O or unreadable input, 3 validation/usage,
4 numerical failure. Every output file gets a ``<file>.manifest`` next to
it recording the command, resolved flags, seed and input digests.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .anchors import (LanguageProfile, PivotMismatch, UnalignedCorpora, build_anchor_datasets, clean_dictionary,
                      load_dictionary, save_dictionary, split_dataset, triangulate)
from .gan_align import (GanFormatError, GanModel, GanNumericalError, load_gan, preset_config, read_scores, save_gan,
                        select_best_iteration, train, write_scores, init_gan, map_vector)
from .linear_align import PRESETS as LINEAR_PRESETS
from .linear_align import LINEAR_MAGIC, apply_linear, fit_vecmap, load_linear, preset, save_linear
from .numerics import Rng, ShapeError, SvdNotConverged
from .vecstore import (EmbeddingTable, FormatError, file_digest, load_anchor_dataset, load_context_corpus,
                       load_embeddings, save_anchor_dataset, save_embeddings)
from .xeval import LayerwiseMapper, TermEntry, TermIndex, MissingTermError, induction_score, term_vector, terminology_accuracy

log = logging.getLogger("xlanchor")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def write_manifest(out_path, args: argparse.Namespace, inputs: dict[str, str], extra: dict | None = None) -> None:
    rows = [("command", args.command), ("tool_version", __version__)]
    if getattr(args, "seed", None) is not None:
        rows.append(("seed", str(args.seed)))
    for key in sorted(vars(args)):
        if key in ("command", "func", "seed", "config", "verbose"):
            continue
        rows.append((f"config.{key}", str(getattr(args, key))))
    for name in sorted(inputs):
        rows.append((f"input.{name}.sha256", file_digest(inputs[name])))
    for k, v in (extra or {}).items():
        rows.append((k, str(v)))
    with open(f"{out_path}.manifest", "w", encoding="utf-8", newline="\n") as f:
        for k, v in rows:
            f.write(f"{k}\t{v}\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _profile(code: str) -> LanguageProfile:
    return LanguageProfile.for_language(code)


def cmd_clean_dict(args) -> None:
    d = load_dictionary(args.input, args.lang_a, args.lang_b)
    cleaned = clean_dictionary(d, _profile(args.profile_a), _profile(args.profile_b))
    save_dictionary(cleaned, args.out)
    write_manifest(args.out, args, {"in": args.input}, {"pairs_in": len(d), "pairs_out": len(cleaned)})


def cmd_triangulate(args) -> None:
    ac = load_dictionary(args.ac)
    cb = load_dictionary(args.cb)
    out = triangulate(ac, cb)
    save_dictionary(out, args.out)
    write_manifest(args.out, args, {"ac": args.ac, "cb": args.cb}, {"pairs_out": len(out)})


def cmd_build_anchors(args) -> None:
    ca = load_context_corpus(args.corpus_a)
    cb = load_context_corpus(args.corpus_b)
    d = load_dictionary(args.dict, args.lang_a, args.lang_b)
    datasets = build_anchor_datasets(ca, cb, d, args.max_contexts, args.lang_a, args.lang_b)
    inputs = {"corpus_a": args.corpus_a, "corpus_b": args.corpus_b, "dict": args.dict}
    for ds in datasets:
        path = anchor_path(args.out_prefix, ds.layer)
        save_anchor_dataset(ds, path)
        write_manifest(path, args, inputs, {"records": len(ds), "layer": ds.layer})
        print(f"{path}\t{len(ds)}")


def anchor_path(prefix: str, layer: int) -> str:
    return f"{prefix}.layer{layer}.tsv"


def cmd_split(args) -> None:
    if not 0.0 < args.fraction < 1.0:
        raise UsageError("--fraction must lie strictly between 0 and 1")
    ds = load_anchor_dataset(args.input)
    tr, ev = split_dataset(ds, args.fraction, Rng(args.seed))
    save_anchor_dataset(tr, args.out_train)
    save_anchor_dataset(ev, args.out_eval)
    for path in (args.out_train, args.out_eval):
        write_manifest(path, args, {"in": args.input}, {"train": len(tr), "eval": len(ev)})
    print(f"train\t{len(tr)}\neval\t{len(ev)}")


def cmd_train_linear(args) -> None:
    ds = load_anchor_dataset(args.train)
    mode = {"procrustes": "orthogonal", "lsq": "least_squares"}[args.mode]
    options = preset(args.preset)
    model = fit_vecmap(ds, options, mode)
    save_linear(model, args.out)
    extra = {f"option.{k}": int(v) for k, v in options.describe().items()}
    write_manifest(args.out, args, {"train": args.train}, extra)


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if len(vals) != 3 or min(vals) < 1:
        raise argparse.ArgumentTypeError("expected three positive widths")
    return vals


def _gan_config(args, seed: int):
    over = {"seed": seed}
    for key in ("iterations", "checkpoint_every", "checkpoint_start", "batch_size", "lr", "lr_decay",
                "sup_weight", "gen_hidden", "disc_hidden"):
        val = getattr(args, key)
        if val is not None:
            over[key] = val
    try:
        return preset_config(args.preset, **over)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _train_one(args, train_path: str, eval_path: str, out: str, scores_out: str | None, seed: int):
    tr = load_anchor_dataset(train_path)
    ev = load_anchor_dataset(eval_path)
    if args.layer is not None and tr.layer != args.layer:
        raise UsageError(f"{train_path} holds layer {tr.layer}, not --layer {args.layer}")
    if len(tr) < (args.batch_size or 256):
        raise UsageError(f"{train_path} has {len(tr)} pairs, fewer than the batch size")
    config = _gan_config(args, seed)
    model = init_gan(tr.dim, config, tr.layer)
    best: dict = {}
    ckpt_dir = Path(args.checkpoint_dir) if args.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    def on_checkpoint(m: GanModel, score):
        if ckpt_dir:
            save_gan(m, ckpt_dir / f"layer{m.layer}.iter{m.iteration}.xlgan")
        if not best or score.avg_precision > best["score"].avg_precision:
            best.update(score=score, model=m.copy())

    model, scores = train(model, tr, ev, config, on_checkpoint)
    selected = None
    if args.preset == "sweep" and scores:
        selected = select_best_iteration(scores)
        model = best["model"]
    save_gan(model, out, include_state=args.save_state)
    extra = {f"gan.{k}": v for k, v in sorted(vars(config).items())}
    extra["model_iteration"] = model.iteration
    if selected is not None:
        extra["selected_iteration"] = selected
    write_manifest(out, args, {"train": train_path, "eval": eval_path}, extra)
    if scores_out:
        write_scores(scores, scores_out)
        write_manifest(scores_out, args, {"train": train_path, "eval": eval_path}, extra)
    return out, model.iteration


def layer_seed(seed: int, layer: int) -> int:
    """Each layer trains from its own stream, the same whether run alone or with the others."""
    return Rng(seed).spawn(layer).seed


def cmd_train_gan(args) -> None:
    if len(args.train) != len(args.eval):
        raise UsageError("--train and --eval need the same number of files")
    jobs = []
    multi = len(args.train) > 1
    if multi and "{layer}" not in args.out:
        raise UsageError("--out must contain '{layer}' when training several layers")
    if multi and args.scores_out and "{layer}" not in args.scores_out:
        raise UsageError("--scores-out must contain '{layer}' when training several layers")
    for i, (tp, ep) in enumerate(zip(args.train, args.eval)):
        for p in (tp, ep):
            if not Path(p).is_file():
                raise FileNotFoundError(p)
        layer = load_anchor_dataset(tp).layer
        out = args.out.format(layer=layer) if multi else args.out
        scores_out = args.scores_out.format(layer=layer) if (args.scores_out and multi) else args.scores_out
        jobs.append((tp, ep, out, scores_out, layer_seed(args.seed, layer)))
    if args.jobs > 1 and multi:
        with ThreadPoolExecutor(args.jobs) as pool:
            results = list(pool.map(lambda j: _train_one(args, *j), jobs))
    else:
        results = [_train_one(args, *j) for j in jobs]
    for out, it in results:
        print(f"{out}\titeration\t{it}")


def cmd_select_iterations(args) -> None:
    scores = read_scores(args.scores)
    if not scores:
        raise UsageError(f"{args.scores} holds no checkpoint scores")
    best = select_best_iteration(scores)
    print(best)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"{best}\n")
        write_manifest(args.out, args, {"scores": args.scores})


def load_model(path: str):
    """Load a linear or GAN model file; ``identity`` means no mapping."""
    if path == "identity":
        return None
    with open(path, "rb") as f:
        head = f.read(len(LINEAR_MAGIC))
    if head.startswith(b"XLGAN"):
        return load_gan(path)
    if head == LINEAR_MAGIC.encode():
        return load_linear(path)
    raise FormatError(path, 1, "unrecognised model file")


def map_with(model, X: np.ndarray, direction: str) -> np.ndarray:
    """Linear: a_to_b applies the eval-side transform, b_to_a the train-side one."""
    if model is None:
        return X
    if isinstance(model, GanModel):
        if X.shape[1] != model.dim:
            raise ShapeError(f"vector dim {X.shape[1]} != model dim {model.dim}")
        return map_vector(model, X, direction)
    side = "source_eval" if direction == "a_to_b" else "target_train"
    return apply_linear(model, X, side)


def cmd_map_vectors(args) -> None:
    model = load_model(args.model)
    table = load_embeddings(args.input)
    mapped = map_with(model, table.vectors, args.direction)
    save_embeddings(EmbeddingTable(table.tokens, mapped), args.out)
    inputs = {"in": args.input} if args.model == "identity" else {"in": args.input, "model": args.model}
    write_manifest(args.out, args, inputs)


def _write_report(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def cmd_eval_induction(args) -> None:
    model = load_model(args.model)
    ev = load_anchor_dataset(args.eval)
    report = induction_score(model, ev, keep_queries=bool(args.per_query))
    _write_report(args.report, report.to_text())
    sys.stdout.write(report.to_text())
    inputs = {"eval": args.eval} | ({} if args.model == "identity" else {"model": args.model})
    write_manifest(args.report, args, inputs)
    if args.per_query:
        _write_report(args.per_query, report.per_query_tsv())


def _read_terms(path: str) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip()]


def cmd_eval_terms(args) -> None:
    src = _read_terms(args.src_terms)
    trg = _read_terms(args.trg_terms)
    if not src or not trg:
        raise UsageError("term lists must be non-empty")
    if len(src) != len(trg):
        raise UsageError("source and target term lists must have the same length (aligned pairs)")
    cs = load_context_corpus(args.corpus_src)
    ct = load_context_corpus(args.corpus_trg)
    ss = load_embeddings(args.static_src) if args.static_src else None
    st = load_embeddings(args.static_trg) if args.static_trg else None
    idx_s, idx_t = TermIndex(cs, ss), TermIndex(ct, st)
    S = [TermEntry(t, term_vector(t, idx_s)) for t in src]
    T = [TermEntry(t, term_vector(t, idx_t)) for t in trg]
    models = [load_model(m) for m in args.model]
    if len(models) == 3:
        mapper = LayerwiseMapper(models, cs.dims)
    elif len(models) == 1:
        mapper = models[0]
    else:
        raise UsageError("--model takes one model or three per-layer models")
    report = terminology_accuracy(S, T, mapper, args.direction)
    _write_report(args.report, report.to_text())
    sys.stdout.write(report.to_text())
    inputs = {"src_terms": args.src_terms, "trg_terms": args.trg_terms,
              "corpus_src": args.corpus_src, "corpus_trg": args.corpus_trg}
    inputs.update({f"model{i}": m for i, m in enumerate(args.model) if m != "identity"})
    write_manifest(args.report, args, inputs)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="xlanchor", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key=value file supplying flag defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("clean-dict", help="drop multi-word/noisy entries, fold accents")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--profile-a", required=True, help="language code of side A (e.g. en, sl)")
    s.add_argument("--profile-b", required=True)
    s.add_argument("--lang-a")
    s.add_argument("--lang-b")
    s.set_defaults(func=cmd_clean_dict)

    s = sub.add_parser("triangulate", help="compose A-C and C-B dictionaries")
    s.add_argument("--ac", required=True)
    s.add_argument("--cb", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_triangulate)

    s = sub.add_parser("build-anchors", help="extract per-layer anchor datasets")
    s.add_argument("--corpus-a", required=True)
    s.add_argument("--corpus-b", required=True)
    s.add_argument("--dict", required=True)
    s.add_argument("--out-prefix", required=True)
    s.add_argument("--max-contexts", type=int, default=20)
    s.add_argument("--lang-a")
    s.add_argument("--lang-b")
    s.set_defaults(func=cmd_build_anchors)

    s = sub.add_parser("split", help="train/eval split of an anchor dataset")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out-train", required=True)
    s.add_argument("--out-eval", required=True)
    s.add_argument("--fraction", type=float, default=0.985)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train-linear", help="fit a Procrustes or least-squares map")
    s.add_argument("--train", required=True)
    s.add_argument("--mode", choices=("procrustes", "lsq"), default="procrustes")
    s.add_argument("--preset", choices=tuple(LINEAR_PRESETS), default="ELMoVM")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_linear)

    s = sub.add_parser("train-gan", help="train the bidirectional GAN mapping")
    s.add_argument("--train", nargs="+", required=True)
    s.add_argument("--eval", nargs="+", required=True)
    s.add_argument("--layer", type=int, choices=(0, 1, 2))
    s.add_argument("--preset", choices=("10k", "sweep"), default="10k")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--scores-out")
    s.add_argument("--checkpoint-dir")
    s.add_argument("--iterations", type=int)
    s.add_argument("--checkpoint-every", type=int)
    s.add_argument("--checkpoint-start", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--lr-decay", type=float)
    s.add_argument("--sup-weight", type=float)
    s.add_argument("--gen-hidden", type=_int_tuple)
    s.add_argument("--disc-hidden", type=_int_tuple)
    s.add_argument("--save-state", action="store_true", help="append optimizer/RNG state for exact resumption")
    s.add_argument("--jobs", type=int, default=1, help="train several layer datasets concurrently")
    s.set_defaults(func=cmd_train_gan)

    s = sub.add_parser("select-iterations", help="pick the best checkpoint from a scores file")
    s.add_argument("--scores", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_select_iterations)

    s = sub.add_parser("map-vectors", help="map an embedding table with a model")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--direction", choices=("a_to_b", "b_to_a"), default="a_to_b")
    s.set_defaults(func=cmd_map_vectors)

    s = sub.add_parser("eval-induction", help="dictionary induction precision@{1,5,10}")
    s.add_argument("--model", required=True)
    s.add_argument("--eval", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--per-query")
    s.set_defaults(func=cmd_eval_induction)

    s = sub.add_parser("eval-terms", help="terminology alignment accuracy@1")
    s.add_argument("--src-terms", required=True)
    s.add_argument("--trg-terms", required=True)
    s.add_argument("--corpus-src", required=True)
    s.add_argument("--corpus-trg", required=True)
    s.add_argument("--static-src")
    s.add_argument("--static-trg")
    s.add_argument("--model", nargs="+", required=True)
    s.add_argument("--direction", choices=("a_to_b", "b_to_a", "both"), default="both")
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval_terms)
    return p


def _read_config(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{i}: expected key=value")
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = _read_config(known.config)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in sub_action.choices.values():
        for action in sp._actions:
            if action.dest in values:
                raw = values[action.dest]
                action.default = action.type(raw) if action.type else raw
                action.required = False


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except UsageError as e:
        print(f"xlanchor: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"xlanchor: error: {e}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (UsageError, PivotMismatch, UnalignedCorpora, ShapeError, MissingTermError) as e:
        print(f"xlanchor: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, GanFormatError, OSError) as e:
        print(f"xlanchor: error: {e}", file=sys.stderr)
        return EXIT_IO
    except (SvdNotConverged, GanNumericalError, FloatingPointError) as e:
        print(f"xlanchor: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"xlanchor: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
