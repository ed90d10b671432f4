"""Command-line entry point: ``tprcap <subcommand> [options]``.

Option values come from built-in defaults, then ``--config FILE``
(``key = value`` lines using the long option names), then the command line.
Exit status is 0 on success, 1 on invalid input or a failed check, 2 on a
runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint, metrics, tpr
from .captioner import Dims, Model, generate
from .cell import VARIANTS, variant
from .config import ConfigError, read_config, resolve_seed
from .data import CaptionSample, DatasetError, load_dataset, save_dataset, synth_generate
from .trainer import TrainConfig, encode_samples, grad_check, greedy_captions, per_image, train
from .vocab import FormatError, Vocabulary, random_init

log = logging.getLogger("tprcap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


_PRECEDENCE = "Precedence: built-in defaults < --config file < command-line flags."


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> _Parser:
    p = _Parser(prog="tprcap", description="TPR-generated decomposed SCN-LSTM captioning toolkit.",
                epilog=_PRECEDENCE)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="SUBCOMMAND")

    def command(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text, epilog=_PRECEDENCE)
        sp.add_argument("--config", help="key=value file with option defaults")
        sp.add_argument("--seed", type=int, help="random seed (falls back to $TPR_SEED, then 0)")
        return sp

    g = command("gen-data", "Write a synthetic attribute-caption corpus as JSONL.")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=32, help="number of images")
    g.add_argument("--k-v", type=int, default=64, help="image feature width")
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--min-captions", type=int, default=1)
    g.add_argument("--max-captions", type=int, default=3)

    t = command("train", "Train a model with teacher forcing, then optional SCST.")
    t.add_argument("--data", required=True, help="training JSONL")
    t.add_argument("--val", help="validation JSONL (default: hold out --val-fraction of --data)")
    t.add_argument("--val-fraction", type=float, default=0.1)
    t.add_argument("--out", required=True, help="checkpoint path; the vocabulary goes to OUT.vocab")
    t.add_argument("--history", help="JSONL file for per-epoch history")
    t.add_argument("--variant", default="e+dt", help=f"one of {', '.join(VARIANTS)}")
    t.add_argument("--d", type=int, default=32, help="role dimension (power of two)")
    t.add_argument("--m", type=int, default=64, help="hidden width")
    t.add_argument("--d-emb", type=int, default=None, help="embedding width (default: d)")
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--scst-epochs", type=int, default=0)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--patience", type=int, default=5)
    t.add_argument("--eval-every", type=int, default=10)
    t.add_argument("--max-steps", type=int, default=None)
    t.add_argument("--clip-norm", type=float, default=5.0)
    t.add_argument("--g-activation", choices=("sigmoid", "tanh"), default="sigmoid")
    t.add_argument("--freeze-embedding", type=_bool, default=False)

    for name, text in (("eval", "Greedy-decode a dataset and report corpus metrics."),
                       ("caption", "Write one generated caption per sample as JSONL.")):
        e = command(name, text)
        e.add_argument("--ckpt", required=True)
        e.add_argument("--data", required=True)
        e.add_argument("--vocab", help="vocabulary file (default: CKPT.vocab)")
        if name == "caption":
            e.add_argument("--out", help="output JSONL (default: stdout)")
            e.add_argument("--beam-width", type=int, default=1)
            e.add_argument("--max-len", type=int, default=None)

    m = command("metrics", "Score candidate captions against references.")
    m.add_argument("--candidates", required=True, help="JSONL with id and tokens")
    m.add_argument("--references", required=True, help="JSONL with id and captions")
    m.add_argument("--out", help="output JSON (default: stdout)")

    c = command("gradcheck", "Compare backward() with central differences for one variant.")
    c.add_argument("--variant", required=True, help=f"one of {', '.join(VARIANTS)}")
    c.add_argument("--coords", type=int, default=32, help="coordinates sampled per tensor")
    c.add_argument("--eps", type=float, default=1e-5)
    c.add_argument("--tol", type=float, default=1e-4)
    for flag, val in (("--d", 32), ("--m", 64), ("--k-v", 64), ("--k-s", 16), ("--vocab-size", 64)):
        c.add_argument(flag, type=int, default=val)

    r = command("tpr-demo", "Bind/unbind random token sequences and report retrieval accuracy.")
    r.add_argument("--d", type=int, default=32, help="role dimension (power of two)")
    r.add_argument("--trials", type=int, default=1000)
    r.add_argument("--vocab-size", type=int, default=1000)
    r.add_argument("--d-emb", type=int, default=None, help="embedding width (default: d)")
    r.add_argument("--glove", help="GloVe-format text file to use instead of random embeddings")
    return p


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_help())
    if args.config:
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        values = read_config(args.config)
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"{args.config}: unknown option(s) {', '.join(unknown)} for {args.command}")
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
        for a in sp._actions:
            if a.dest in values and isinstance(getattr(args, a.dest), str) and a.type is not None:
                setattr(args, a.dest, a.type(getattr(args, a.dest)))
    args.seed = resolve_seed(args.seed)
    return args


# ---------------------------------------------------------------------------


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_gen_data(args) -> int:
    samples = synth_generate(args.seed, args.n, k_v=args.k_v, noise=args.noise,
                             captions_per_sample=(args.min_captions, args.max_captions))
    save_dataset(samples, args.out)
    log.info("wrote %d samples to %s", len(samples), args.out)
    return 0


def cmd_train(args) -> int:
    samples = load_dataset(args.data)
    if not samples:
        raise DatasetError(f"{args.data}: no samples")
    if args.val:
        val = load_dataset(args.val, k_v=len(samples[0].v), k_S=len(samples[0].tags))
    else:
        rng = np.random.Generator(np.random.PCG64(args.seed))
        order = rng.permutation(len(samples))
        n_val = max(1, int(round(args.val_fraction * len(samples))))
        if n_val >= len(samples):
            raise DatasetError("need at least two samples to hold out a validation split")
        val = [samples[i] for i in order[:n_val]]
        samples = [samples[i] for i in order[n_val:]]
    vocab = Vocabulary.from_captions(c for s in samples for c in s.captions)
    d_emb = args.d if args.d_emb is None else args.d_emb
    dims = Dims(d=args.d, m=args.m, k_v=len(samples[0].v), k_S=len(samples[0].tags), V=len(vocab), d_emb=d_emb)
    for s in (*samples, *val):
        if max(len(c) for c in s.captions) > dims.d:
            raise DatasetError(f"sample {s.id}: caption longer than role capacity {dims.d}")
    model = Model.build(dims, variant(args.variant), seed=args.seed, g_activation=args.g_activation,
                        freeze_embedding=args.freeze_embedding)
    cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed,
                      optimizer=args.optimizer, patience=args.patience, clip_norm=args.clip_norm,
                      scst_epochs=args.scst_epochs, max_steps=args.max_steps, eval_every=args.eval_every)
    hist_fh = open(args.history, "w", encoding="utf-8") if args.history else None

    def on_epoch(row):
        log.info("epoch %(epoch)d [%(phase)s] xe_loss=%(xe_loss).4f val_cider=%(val_cider).4f", row)
        if hist_fh:
            hist_fh.write(json.dumps(row, sort_keys=True) + "\n")
            hist_fh.flush()

    try:
        model, hist = train(samples, val, model, vocab, cfg, on_epoch)
    finally:
        if hist_fh:
            hist_fh.close()
    checkpoint.save_checkpoint(model, args.out)
    vocab.save(str(args.out) + ".vocab")
    print(json.dumps({"best_val_cider": hist.best_score, "epochs": len(hist.rows)}))
    return 0


def _load_model(args) -> tuple[Model, Vocabulary]:
    model = checkpoint.load_checkpoint(args.ckpt)
    vocab = Vocabulary.load(args.vocab or str(args.ckpt) + ".vocab")
    if len(vocab) != model.dims.V:
        raise FormatError(f"vocabulary has {len(vocab)} entries, checkpoint expects {model.dims.V}")
    return model, vocab


def cmd_eval(args) -> int:
    model, vocab = _load_model(args)
    samples = load_dataset(args.data, k_v=model.dims.k_v, k_S=model.dims.k_S)
    items = per_image(samples, vocab)
    caps = greedy_captions(model, items)
    _, mean = metrics.corpus_scores(caps, [it.references for it in items])
    _emit({"n": len(items), **mean}, None)
    return 0


def cmd_caption(args) -> int:
    model, vocab = _load_model(args)
    samples = load_dataset(args.data, k_v=model.dims.k_v, k_S=model.dims.k_S)
    mode = "greedy" if args.beam_width == 1 else "beam"
    lines = []
    for s in samples:
        g = generate(s.v, s.tags, model, mode=mode, beam_width=args.beam_width, max_len=args.max_len)
        lines.append(json.dumps({"id": s.id, "tokens": vocab.decode(g.tokens), "logprob": g.logprob}))
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _read_jsonl(path: str, fields: tuple[str, ...]) -> dict[str, dict]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from None
            missing = [f for f in fields if f not in obj]
            if missing:
                raise DatasetError(f"{path}: line {lineno}: missing {', '.join(missing)}")
            if str(obj["id"]) in out:
                raise DatasetError(f"{path}: line {lineno}: duplicate id {obj['id']!r}")
            out[str(obj["id"])] = obj
    return out


def cmd_metrics(args) -> int:
    cands = _read_jsonl(args.candidates, ("id", "tokens"))
    refs = _read_jsonl(args.references, ("id", "captions"))
    missing = sorted(set(cands) - set(refs))
    if missing:
        raise DatasetError(f"no references for candidate id(s) {', '.join(missing[:5])}")
    ids = list(cands)
    ref_sets = [refs[i]["captions"] for i in ids]
    for i, rs in zip(ids, ref_sets):
        if not rs:
            raise DatasetError(f"id {i}: empty reference set")
    stats = metrics.CorpusStats.build([refs[i]["captions"] for i in refs])
    rows, mean = metrics.corpus_scores([cands[i]["tokens"] for i in ids], ref_sets, stats)
    _emit({"per_sample": [{"id": i, **r} for i, r in zip(ids, rows)], "mean": mean}, args.out)
    return 0


def cmd_gradcheck(args) -> int:
    from .trainer import Item

    dims = Dims(d=args.d, m=args.m, k_v=args.k_v, k_S=args.k_s, V=args.vocab_size, d_emb=args.d)
    model = Model.build(dims, variant(args.variant), seed=args.seed)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    length = min(dims.d, 7)
    caption = [1, *rng.integers(4, dims.V, size=length - 2).tolist(), 2]
    item = Item("gradcheck", rng.normal(size=dims.k_v), rng.uniform(size=dims.k_S), caption)
    t0 = time.perf_counter()
    report = grad_check(model, item, n_coords=args.coords, eps=args.eps, seed=args.seed)
    worst = max(report.values())
    for name, err in report.items():
        print(f"{name:16s} {err:.3e}")
    ok = worst < args.tol
    print(f"variant {variant(args.variant).name}: worst relative error {worst:.3e} "
          f"({'PASS' if ok else 'FAIL'} at tol {args.tol:g}, {time.perf_counter() - t0:.1f}s)")
    return 0 if ok else 1


def cmd_tpr_demo(args) -> int:
    d_emb = args.d if args.d_emb is None else args.d_emb
    if args.glove:
        from .vocab import load_glove_text

        _, emb = load_glove_text(args.glove)
    else:
        emb = random_init(args.vocab_size, d_emb, args.seed)
    acc = tpr.retrieval_accuracy(emb, args.d, args.trials, rng=np.random.default_rng(args.seed))
    print(f"d={args.d} vocab={emb.shape[1]} trials={args.trials} retrieval accuracy {acc:.3f}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "caption": cmd_caption,
    "metrics": cmd_metrics,
    "gradcheck": cmd_gradcheck,
    "tpr-demo": cmd_tpr_demo,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (DatasetError, FormatError, ConfigError, checkpoint.CheckpointError, tpr.BasisError,
            tpr.CapacityError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
