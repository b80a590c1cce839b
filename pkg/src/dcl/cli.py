"""Command-line entry point: synth / train / eval / report / xgen.

Exit codes: 0 success, 2 configuration error (offending key named),
1 runtime failure. Logs go to stderr; artifacts to the paths given by flags.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

from . import evaluate, trainer
from .config import ConfigError, load_config
from .data import CorpusSpec, ManipKind, generate_corpus, load_dataset


def _log(msg: str) -> None:
    print(f"[dcl] {msg}", file=sys.stderr)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="config file ([section] key = value)")
        p.add_argument(
            "--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
            help="override a config value (repeatable)",
        )

    p = sub.add_parser("synth", help="generate a synthetic forgery corpus")
    common(p)
    p.add_argument("--spec", help="corpus spec file (alias for --config)")
    p.add_argument("--out", required=True, help="output corpus directory")

    p = sub.add_parser("train", help="train the dual contrastive model")
    common(p)
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="JSON-lines loss log path")
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("eval", help="compute AUC/EER for a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="metrics JSON path (default: stdout)")

    p = sub.add_parser("report", help="full report: metrics, CSVs, histograms")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report output directory")

    p = sub.add_parser(
        "xgen", help="cross-manipulation experiment with a CE-only baseline arm"
    )
    common(p)
    p.add_argument("--train-family", required=True, choices=[k.value for k in ManipKind])
    p.add_argument("--test-family", required=True, choices=[k.value for k in ManipKind])
    p.add_argument("--workdir", required=True, help="scratch directory for corpora")
    p.add_argument("--out", required=True, help="result JSON path")
    return parser


def _cmd_synth(args) -> int:
    _, corpus_spec = load_config(args.spec or args.config, args.set)
    root = generate_corpus(corpus_spec, args.out)
    _log(f"corpus written to {root}")
    return 0


def _cmd_train(args) -> int:
    cfg, _ = load_config(args.config, args.set)
    dataset = load_dataset(args.data)
    _log(f"training on {len(dataset)} samples for {cfg.epochs} epochs")
    t0 = time.time()
    trainer.train(
        cfg, dataset, checkpoint_path=args.out, log_path=args.log,
        resume_from=args.resume,
    )
    _log(f"done in {time.time() - t0:.1f}s; checkpoint at {args.out}")
    return 0


def _cmd_eval(args) -> int:
    state = trainer.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    result = evaluate.metrics(state, dataset)
    text = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
        _log(f"metrics written to {args.out}")
    else:
        print(text)
    return 0


def _cmd_report(args) -> int:
    state = trainer.load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    result = evaluate.report(state, dataset, args.out)
    _log(f"report written to {args.out}: auc_frame={result['auc_frame']:.4f}")
    return 0


def cross_manipulation_experiment(
    cfg, corpus_spec: CorpusSpec, train_family: ManipKind, test_family: ManipKind,
    workdir,
) -> dict:
    """Train a DCL arm and a CE-only arm (contrastive weight zero, gates
    wide open so the queues are inert) on one manipulation family, then
    evaluate both on an unseen family."""
    import copy
    from pathlib import Path

    workdir = Path(workdir)
    spec_a = copy.deepcopy(corpus_spec)
    spec_a.manipulation_families = [train_family]
    spec_b = copy.deepcopy(corpus_spec)
    spec_b.manipulation_families = [test_family]
    spec_b.seed = corpus_spec.seed + 10_000  # unseen content, not just unseen family

    dir_a = workdir / f"train_{train_family.value}"
    dir_b = workdir / f"test_{test_family.value}"
    if not dir_a.exists():
        generate_corpus(spec_a, dir_a)
    if not dir_b.exists():
        generate_corpus(spec_b, dir_b)
    train_set = load_dataset(dir_a)
    test_set = load_dataset(dir_b)

    baseline_cfg = copy.deepcopy(cfg)
    baseline_cfg.phi_warm = 0.0
    baseline_cfg.phi_main = 0.0
    baseline_cfg.contrast.warmup_fill = 0
    baseline_cfg.contrast.gate_threshold = -1.0  # gates off: everything enqueues

    result: dict = {
        "train_family": train_family.value,
        "test_family": test_family.value,
        "seed": cfg.seed,
    }
    for arm, arm_cfg in (("dcl", cfg), ("ce_baseline", baseline_cfg)):
        state, _ = trainer.train(arm_cfg, train_set)
        result[arm] = {
            "seen": evaluate.metrics(state, train_set),
            "unseen": evaluate.metrics(state, test_set),
            "selfsim_auc_unseen": evaluate.selfsim_auc(state, test_set),
        }
        _log(
            f"arm {arm}: unseen auc_frame={result[arm]['unseen']['auc_frame']:.4f}"
        )
    return result


def _cmd_xgen(args) -> int:
    cfg, corpus_spec = load_config(args.config, args.set)
    result = cross_manipulation_experiment(
        cfg, corpus_spec,
        ManipKind(args.train_family), ManipKind(args.test_family),
        args.workdir,
    )
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(result, f, indent=2)
    _log(f"cross-manipulation results written to {args.out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "xgen": _cmd_xgen,
}


def run(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        _log(f"config error: {e}")
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        _log(f"error: {e}")
        return 1


def main() -> None:
    sys.exit(run())
