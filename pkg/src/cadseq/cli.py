"""Command-line pipeline driver.

    cadseq <subcommand> [--config path] [--profile desk|full] [--seed n]
           [--threads n] [--deterministic] [--set key=value ...] ...

Subcommands: synth, validate, train-ae, eval-ae, encode, train-diff,
sample, decode, eval-gen. Training subcommands print machine-parseable
"step<TAB>loss<TAB>lr" progress lines. CADSEQ_LOG in {error, info, debug}
controls extra logging. Heavy imports happen inside the handlers so that
--threads / --deterministic can pin BLAS thread pools first.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

log = logging.getLogger("cadseq")


class ConfigError(ValueError):
    pass


def _setup_logging() -> None:
    level = os.environ.get("CADSEQ_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"CADSEQ_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s")


def _pin_threads(n: int) -> None:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _apply_set(d: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = d
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set key {key!r}: {p!r} is not a section")
    node[parts[-1]] = value


def _load_run_config(args):
    from dataclasses import asdict

    from .pipeline import PROFILES, RunConfig

    base = PROFILES[args.profile]()
    merged = asdict(base)
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read --config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--config {args.config} is not valid JSON: {exc}") from exc
        for section, content in file_cfg.items():
            if isinstance(content, dict):
                merged.setdefault(section, {}).update(content)
            else:
                merged[section] = content
    for assignment in args.set or []:
        _apply_set(merged, assignment)
    run = RunConfig.from_dict(merged)
    if args.seed is not None:
        run.seed = args.seed
        run.ae_train.seed = args.seed
        run.diff_train.seed = args.seed
    return run


def _progress_printer(args):
    def emit(line: str) -> None:
        print(line, flush=True)
    return emit


# -- subcommand handlers -----------------------------------------------------


def cmd_synth(args) -> int:
    import numpy as np

    from . import seqmodel as sm

    rng = np.random.default_rng(args.seed or 0)
    seqs = []
    for i in range(args.count):
        target = args.length or sm.sample_length_target(rng)
        seqs.append(sm.synthesize_sequence((args.seed or 0) * 1_000_003 + i, target))
    sm.write_sequences(args.out, seqs)
    log.info("wrote %d sequences to %s", len(seqs), args.out)
    return 0


def cmd_validate(args) -> int:
    from . import seqmodel as sm

    bad = total = 0
    for path in args.files:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = [ln.strip() for ln in fh if ln.strip()]
        except OSError as exc:
            print(f"error: cannot read {path}: {exc}", file=sys.stderr)
            return 2
        for k, line in enumerate(lines):
            total += 1
            try:
                sm.parse_sequence(line)
            except (sm.SequenceSyntaxError, sm.GrammarError, sm.LengthError) as exc:
                bad += 1
                print(f"{path}:{k + 1}: {exc}")
    print(f"checked {total} records, {bad} invalid")
    return 1 if bad else 0


def cmd_train_ae(args) -> int:
    from . import seqmodel as sm
    from .pipeline import train_autoencoder

    run = _load_run_config(args)
    seqs = list(sm.read_sequences(args.data))
    if not seqs:
        raise ConfigError(f"--data {args.data}: no sequences")
    train_autoencoder(seqs, run, args.out, resume_from=args.resume,
                      log=_progress_printer(args))
    return 0


def cmd_eval_ae(args) -> int:
    from . import metrics as mx
    from . import seqmodel as sm
    from .autoencoder import Reconstructor
    from .pipeline import load_ae_checkpoint

    run = _load_run_config(args)
    model, _ = load_ae_checkpoint(args.ckpt)
    gt = list(sm.read_sequences(args.data))
    pred = Reconstructor(model).sequences(gt)
    report = mx.reconstruction_metrics(
        pred, gt, n_points=run.n_points, resolution=run.resolution,
        squared=(args.chamfer or run.chamfer) == "squared", seed=run.seed)
    print(mx.format_table(report))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    return 0


def cmd_encode(args) -> int:
    from . import seqmodel as sm
    from .pipeline import encode_dataset, load_ae_checkpoint

    model, _ = load_ae_checkpoint(args.ckpt)
    seqs = list(sm.read_sequences(args.data))
    z = encode_dataset(model, seqs, args.out)
    log.info("encoded %d latents to %s", z.shape[0], args.out)
    return 0


def cmd_train_diff(args) -> int:
    from .pipeline import load_latents, train_denoiser

    run = _load_run_config(args)
    latents = load_latents(args.latents)
    train_denoiser(latents, run, args.out, resume_from=args.resume,
                   log=_progress_printer(args))
    return 0


def cmd_sample(args) -> int:
    from .pipeline import sample_and_save

    z = sample_and_save(args.ckpt, args.n, args.seed or 0, args.out,
                        mode=args.sampler_mode, steps=args.steps)
    log.info("sampled %d latents to %s", z.shape[0], args.out)
    return 0


def cmd_decode(args) -> int:
    from . import seqmodel as sm
    from .pipeline import decode_latents_to_sequences, load_ae_checkpoint, load_latents

    model, _ = load_ae_checkpoint(args.ckpt)
    latents = load_latents(args.latents)
    seqs, invalid = decode_latents_to_sequences(model, latents)
    sm.write_sequences(args.out, seqs)
    print(f"decoded {len(seqs)} latents, {invalid} invalid sequences")
    return 0


def cmd_eval_gen(args) -> int:
    from . import geom
    from . import metrics as mx
    from . import seqmodel as sm

    run = _load_run_config(args)
    gen = list(sm.read_sequences(args.gen))
    ref = list(sm.read_sequences(args.ref))
    squared = (args.chamfer or run.chamfer) == "squared"

    def clouds(seqs, base_seed):
        out, ok = [], []
        for k, s in enumerate(seqs):
            try:
                out.append(geom.sequence_to_pointcloud(
                    s, run.n_points, run.resolution, seed=base_seed + k))
                ok.append(s)
            except geom.InvalidModelError:
                pass
        return out, ok

    gen_clouds, gen_ok = clouds(gen, 10_000)
    ref_clouds, _ = clouds(ref, 20_000)
    if not gen_clouds or not ref_clouds:
        print("error: no convertible sequences on one side", file=sys.stderr)
        return 1
    cov, mmd, jsd = mx.generation_metrics(gen_clouds, ref_clouds, squared=squared)
    train_seqs = list(sm.read_sequences(args.train)) if args.train else []
    unique, novel = mx.unique_novel(gen, train_seqs)
    sr = len(gen_ok) / len(gen)
    report = mx.GenReport(cov, mmd, jsd, unique, novel, sr, len(gen))
    print(mx.format_table(report))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cadseq", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="JSON run-config overlay")
    ap.add_argument("--profile", choices=("desk", "full"), default="desk")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--threads", type=int, default=0,
                    help="pin BLAS thread pools to n threads")
    ap.add_argument("--deterministic", action="store_true",
                    help="force single-threaded, serial reductions")
    ap.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a config entry (dotted path)")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("synth", help="generate synthetic sequences")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--length", type=int, default=0,
                   help="fixed target length (default: corpus distribution)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("validate", help="validate sequence files")
    p.add_argument("files", nargs="+")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("train-ae", help="train the autoencoder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume")
    p.set_defaults(fn=cmd_train_ae)

    p = sub.add_parser("eval-ae", help="reconstruction metrics")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--chamfer", choices=("squared", "unsquared"))
    p.set_defaults(fn=cmd_eval_ae)

    p = sub.add_parser("encode", help="encode sequences to latents")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("train-diff", help="train the diffusion denoiser")
    p.add_argument("--latents", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume")
    p.set_defaults(fn=cmd_train_diff)

    p = sub.add_parser("sample", help="sample latents from the denoiser")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sampler-mode", choices=("standard", "paper-literal"))
    p.add_argument("--steps", type=int, default=0)
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("decode", help="decode latents to sequences")
    p.add_argument("--ckpt", required=True, help="autoencoder checkpoint")
    p.add_argument("--latents", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("eval-gen", help="generation metrics")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--train", help="training set for novelty")
    p.add_argument("--out")
    p.add_argument("--chamfer", choices=("squared", "unsquared"))
    p.set_defaults(fn=cmd_eval_gen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.deterministic:
            _pin_threads(1)
        elif args.threads:
            _pin_threads(args.threads)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
