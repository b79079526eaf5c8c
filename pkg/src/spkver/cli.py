"""Command-line entry point: ``spkver <command> [flags]``.

Commands: make-toy-corpus, train, finetune, embed, score, fuse, eval.
Exit status 0 on success, 1 on pipeline errors, 2 on usage errors. Every
command that writes an artifact also writes its resolved run config next to
it as ``<artifact>.cfg``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np
import torch

from spkver import config as runcfg
from spkver.augment import AugmentBank
from spkver.dataio import (
    EmbeddingStore,
    load_embeddings,
    load_manifest,
    load_scores,
    load_trials,
    read_wav,
    save_embeddings,
    save_scores,
)
from spkver.errors import ConfigError, SpkVerError
from spkver.models.checkpoint import load_checkpoint, save_checkpoint
from spkver.scoring import (
    compute_eer,
    det_curve,
    enrollment_models,
    fuse_scores,
    score_trials,
    segment_enrollment,
    split_by_label,
)
from spkver.toy import make_toy_corpus
from spkver.training import SpeakerDataset, embed_waveform, finetune, init_model, pretrain

log = logging.getLogger("spkver")

TOY_CONFIG = {
    "arch": "ecapa", "channels": "64", "embed_dim": "32", "attention_channels": "32",
    "batch_size": "20", "crop_seconds": "2.0", "max_steps": "300", "half_cycle_steps": "100",
    "log_every": "50",
}
SEGMENT_SEP = "#"


# ------------------------------------------------------------------ helpers


def _resolve_config(args, base: runcfg.RunConfig | None = None, extra: dict | None = None) -> runcfg.RunConfig:
    cfg = base or runcfg.RunConfig()
    if getattr(args, "config", None):
        path = Path(args.config)
        cfg = runcfg.parse_run_config(path.read_text(encoding="utf-8"), base=cfg, source=str(path))
    overrides = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    overrides.update({k: str(v) for k, v in (extra or {}).items() if v is not None})
    cfg = runcfg.apply_overrides(cfg, overrides)
    log.info("resolved config:\n%s", runcfg.format_run_config(cfg).rstrip())
    return cfg


def _echo_config(out: Path, cfg: runcfg.RunConfig) -> None:
    target = out / "run.cfg" if out.is_dir() else out.with_name(out.name + ".cfg")
    target.write_text(runcfg.format_run_config(cfg), encoding="utf-8")


def _bank(cfg: runcfg.RunConfig) -> AugmentBank:
    if cfg.noise_dir or cfg.rir_dir:
        return AugmentBank.from_dirs(cfg.noise_dir or None, cfg.rir_dir or None, cfg.sample_rate)
    return AugmentBank.synthetic(cfg.seed, cfg.sample_rate)


def _dataset(manifest, cfg) -> SpeakerDataset:
    return SpeakerDataset(load_manifest(manifest), cfg.sample_rate)


# ----------------------------------------------------------------- commands


def cmd_make_toy_corpus(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    paths = make_toy_corpus(out, seed=cfg.seed, n_speakers=args.n_speakers,
                            train_utts=args.train_utts, test_utts=args.test_utts)
    toy = runcfg.apply_overrides(runcfg.RunConfig(), {**TOY_CONFIG, "seed": str(cfg.seed)})
    (out / "toy.cfg").write_text(runcfg.format_run_config(toy), encoding="utf-8")
    _echo_config(out, cfg)
    for domain, files in paths.items():
        print(f"{domain}: " + " ".join(str(p) for p in files.values()))
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args, extra={"arch": args.arch, "max_steps": args.max_steps})
    ds = _dataset(args.manifest, cfg)
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        encoder = init_model(resume.arch, resume.model_config, cfg.seed)
    else:
        encoder = init_model(cfg.arch, cfg.model_config(), cfg.seed)
    result = pretrain(encoder, ds, cfg.train_config(), cfg.augment_policy(), _bank(cfg),
                      cfg.feature_config(), run_config=cfg.to_dict(), resume=resume)
    out = Path(args.out)
    save_checkpoint(out, result.checkpoint)
    _echo_config(out, cfg)
    tail = result.batch_accuracy[-50:]
    print(f"trained {result.checkpoint.step} steps; final loss {result.losses[-1]:.4f}; "
          f"recent batch accuracy {np.mean(tail) if tail else float('nan'):.3f}")
    return 0


def cmd_finetune(args) -> int:
    source = load_checkpoint(args.source)
    base = runcfg.run_config_from_dict(source.run_config) if source.run_config else None
    cfg = _resolve_config(args, base=base, extra={
        "finetune_mode": args.mode, "lambda_wt": args.lambda_wt, "max_steps": args.max_steps,
        "source_checkpoint": args.source,
    })
    ds = _dataset(args.manifest, cfg)
    torch.manual_seed(cfg.seed)
    result = finetune(source, None, ds, cfg.finetune_config(), cfg.augment_policy(), _bank(cfg),
                      cfg.feature_config(), run_config=cfg.to_dict())
    out = Path(args.out)
    save_checkpoint(out, result.checkpoint)
    _echo_config(out, cfg)
    print(f"fine-tuned ({cfg.finetune_mode}) {result.checkpoint.step} steps; "
          f"final loss {result.losses[-1]:.4f}")
    return 0


def cmd_embed(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    base = runcfg.run_config_from_dict(ckpt.run_config) if ckpt.run_config else None
    cfg = _resolve_config(args, base=base)
    encoder = ckpt.build_encoder().eval()
    feat_cfg = cfg.feature_config()
    rng = np.random.default_rng(cfg.seed)
    store = EmbeddingStore(encoder.embed_dim)
    for rec in load_manifest(args.manifest):
        wave, sr = read_wav(rec.path)
        if sr != cfg.sample_rate:
            raise ConfigError(f"{rec.path}: sample rate {sr}, expected {cfg.sample_rate}")
        if args.enroll:
            segs = segment_enrollment(wave, rng, sr, cfg.enroll_min_s, cfg.enroll_max_s)
            for k, seg in enumerate(segs):
                store.add(f"{rec.utt_id}{SEGMENT_SEP}{k}", embed_waveform(encoder, seg, feat_cfg))
        else:
            store.add(rec.utt_id, embed_waveform(encoder, wave, feat_cfg))
    out = Path(args.out)
    save_embeddings(store, out)
    _echo_config(out, cfg)
    print(f"wrote {len(store)} embeddings (dim {store.dim}) to {out}")
    return 0


def enrollment_groups(records, store: EmbeddingStore) -> dict[str, list[str]]:
    """Map each speaker to the store ids of its enrollment recordings and their segments."""
    by_utt = defaultdict(list)
    for key in store.entries:
        by_utt[key.split(SEGMENT_SEP, 1)[0]].append(key)
    groups = defaultdict(list)
    for rec in records:
        if rec.utt_id not in by_utt:
            raise ConfigError(f"no embeddings for enrollment recording {rec.utt_id!r}")
        groups[rec.speaker_id].extend(by_utt[rec.utt_id])
    return dict(groups)


def cmd_score(args) -> int:
    cfg = _resolve_config(args)
    enroll_store = load_embeddings(args.enroll_emb)
    test_store = load_embeddings(args.test_emb)
    models = enrollment_models(enroll_store, enrollment_groups(load_manifest(args.enroll_manifest), enroll_store))
    scores = score_trials(load_trials(args.trials), models, test_store)
    out = Path(args.out)
    save_scores(scores, out)
    _echo_config(out, cfg)
    print(f"scored {len(scores)} trials against {len(models)} enrolled speakers")
    return 0


def cmd_fuse(args) -> int:
    cfg = _resolve_config(args)
    sets = [load_scores(p) for p in args.scores]
    weights = [float(w) for w in args.weights.split(",")] if args.weights else None
    fused = fuse_scores(sets, weights)
    out = Path(args.out)
    save_scores(fused, out)
    _echo_config(out, cfg)
    print(f"fused {len(sets)} systems over {len(fused)} trials")
    return 0


def eval_report(scores, trials) -> tuple[str, object]:
    res = compute_eer(scores, trials)
    report = (f"EER {100 * res.eer:.3f}%\n"
              f"threshold {res.threshold:.6f}\n"
              f"trials {res.n_target + res.n_nontarget} target {res.n_target} nontarget {res.n_nontarget}\n")
    return report, res


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    scores = load_scores(args.scores)
    trials = load_trials(args.trials)
    report, _ = eval_report(scores, trials)
    sys.stdout.write(report)
    if args.det:
        thr, far, frr = det_curve(*split_by_label(scores, trials))
        lines = [f"{t:.6f} {a:.6f} {r:.6f}\n" for t, a, r in zip(thr, far, frr) if np.isfinite(t)]
        Path(args.det).write_text("# threshold far frr\n" + "".join(lines), encoding="utf-8")
    if args.out:
        out = Path(args.out)
        out.write_text(report, encoding="utf-8")
        _echo_config(out, cfg)
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config file (key: type = value lines)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key; repeatable; beats --config")
    common.add_argument("-q", "--quiet", action="store_true", help="log warnings only")

    parser = argparse.ArgumentParser(prog="spkver", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-corpus", parents=[common], help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n-speakers", type=int, default=10)
    p.add_argument("--train-utts", type=int, default=20)
    p.add_argument("--test-utts", type=int, default=5)
    p.set_defaults(func=cmd_make_toy_corpus)

    p = sub.add_parser("train", parents=[common], help="pre-train an embedding model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--arch", choices=["ecapa", "resnet34se"])
    p.add_argument("--max-steps", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", parents=[common], help="fine-tune a pre-trained model")
    p.add_argument("--source", required=True, help="pre-trained checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["vanilla", "weight-transfer"], default="weight-transfer")
    p.add_argument("--lambda-wt", type=float)
    p.add_argument("--max-steps", type=int)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("embed", parents=[common], help="extract embeddings for a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--enroll", action="store_true",
                   help="split each recording into random 10-60 s segments first")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("score", parents=[common], help="cosine-score a trial list")
    p.add_argument("--trials", required=True)
    p.add_argument("--enroll-manifest", required=True)
    p.add_argument("--enroll-emb", required=True)
    p.add_argument("--test-emb", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fuse", parents=[common], help="average several score files")
    p.add_argument("scores", nargs="+")
    p.add_argument("--weights", help="comma-separated nonnegative weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", parents=[common], help="EER report for a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--trials", required=True)
    p.add_argument("--det", help="write DET points (threshold far frr) here")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "fuse" and len(args.scores) < 2:
        parser.error("fuse needs at least two score files")
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SpkVerError, OSError) as exc:
        print(f"spkver {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
