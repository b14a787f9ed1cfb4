"""Command line entry point.

One subcommand per pipeline stage: gen-data, build-cooc, anchors, train,
eval, project, ablate, report.  All file outputs are written atomically
(temp file in the target directory, then rename), and every stage is a
pure function of its inputs and seeds, so rerunning a command reproduces
its outputs byte for byte.

Exit codes: 0 success, 1 validation or data error (stderr line prefixed
``error:<module>:<kind>:``), 2 usage error.  ACP_THREADS, when set, caps
worker parallelism; the current implementation is single-threaded, which
satisfies any positive cap.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .anchors import build_groups_from_sets, groups_to_dict, nes_select
from .cooc import build_bank, load_bank, save_bank
from .corpus import (
    action_occurrence_sets,
    class_frequencies,
    corpus_to_dict,
    load_corpus,
)
from .errors import AcpError, ContractError
from .evaluation import (
    AblationRow,
    AblationTable,
    EvalConfig,
    ablation,
    evaluate,
    render_report,
    render_table,
    report_to_dict,
    table_to_dict,
)
from .objective import LossWeights
from .projection import ProjectionWeights, project_weighted
from .synth import SynthConfig, generate, planted_to_dict
from .training import (
    Checkpoint,
    TrainConfig,
    checkpoint_to_dict,
    history_csv,
    load_checkpoint,
    train,
)

ARCH_CHOICES = ("baseline", "modified", "multitask", "twostream", "hierarchical")


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp.", suffix=path.name)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _resolve(workdir: str, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(workdir) / p


def _proj_weights(alpha: float) -> ProjectionWeights:
    return ProjectionWeights(alpha=alpha, beta=2.0 - alpha)


def _threads_cap() -> int:
    raw = os.environ.get("ACP_THREADS")
    if raw is None:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise ContractError(f"ACP_THREADS must be an integer, got {raw!r}",
                            module="cli")
    if cap < 1:
        raise ContractError(f"ACP_THREADS must be at least 1, got {cap}",
                            module="cli")
    return cap


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_data(args) -> int:
    cfg = SynthConfig(
        n_actions=args.actions,
        n_objects=args.objects,
        n_scenarios=args.scenarios,
        images=args.images,
        zipf_exponent=args.zipf,
        feature_dim=args.feature_dim,
        noise_sigma=args.noise_sigma,
        label_drop_rate=args.drop_rate,
        seed=args.seed,
        uniform_scenarios=args.uniform,
        id_prefix=args.id_prefix,
    )
    corpus, planted = generate(cfg)
    out = _resolve(args.workdir, args.out)
    write_atomic(out, _dump(corpus_to_dict(corpus)))
    planted_path = (
        _resolve(args.workdir, args.planted)
        if args.planted
        else out.with_suffix(".planted.json")
    )
    write_atomic(planted_path, _dump(planted_to_dict(planted)))
    print(f"wrote {out} ({corpus.n_images} images) and {planted_path}")
    return 0


def cmd_build_cooc(args) -> int:
    corpus = load_corpus(_resolve(args.workdir, args.corpus))
    bank = build_bank(corpus)
    out_dir = _resolve(args.workdir, args.out)
    written = save_bank(
        bank,
        out_dir,
        corpus.label_space.actions,
        corpus.label_space.objects,
        occurrence_sets=action_occurrence_sets(corpus),
        write=write_atomic,
    )
    print(f"wrote {len(written)} files to {out_dir}")
    return 0


def cmd_anchors(args) -> int:
    bank, meta = load_bank(_resolve(args.workdir, args.cooc))
    if "occurrence_sets" not in meta:
        raise ContractError(
            "cooc directory has no occurrence sets; rebuild it with build-cooc",
            module="cli",
        )
    sets = [set(s) for s in meta["occurrence_sets"]]
    anchors = nes_select(bank.global_pair)
    groups = build_groups_from_sets(bank.global_pair, anchors, sets)
    out = _resolve(args.workdir, args.out)
    write_atomic(out, _dump(groups_to_dict(groups)))
    names = [meta["actions"][a] for a in anchors]
    print(f"selected {len(anchors)} anchors: {', '.join(names)}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        arch_kind=args.arch,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer_kind=args.optimizer,
        seed=args.seed,
        loss_weights=LossWeights(args.lambda1, args.lambda2, args.lambda3),
        projection_weights=_proj_weights(args.alpha),
        fusion_dim=args.fusion_dim,
        hidden_dim=args.hidden_dim,
    )


def cmd_train(args) -> int:
    corpus = load_corpus(_resolve(args.workdir, args.corpus))
    bank = build_bank(corpus)
    anchors = nes_select(bank.global_pair)
    groups = build_groups_from_sets(
        bank.global_pair, anchors, action_occurrence_sets(corpus)
    )
    cfg = _train_config(args)
    params, history = train(corpus, groups, bank, cfg)
    rare = class_frequencies(corpus, threshold=args.rare_threshold).rare
    out = _resolve(args.workdir, args.out)
    ckpt = Checkpoint(params=params, groups=groups, bank=bank, rare_classes=rare)
    write_atomic(out, _dump(checkpoint_to_dict(ckpt)))
    history_path = out.with_suffix(".history.csv")
    write_atomic(history_path, history_csv(history))
    print(
        f"trained {cfg.arch_kind} for {cfg.epochs} epochs, "
        f"final epoch loss {history.epoch_loss[-1]:.6f}; wrote {out}"
    )
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(_resolve(args.workdir, args.checkpoint))
    corpus = load_corpus(_resolve(args.workdir, args.corpus))
    cfg = EvalConfig(
        postprocess=args.postprocess == "on",
        projection_weights=_proj_weights(args.alpha),
        rare_classes=ckpt.rare_classes,
    )
    report = evaluate(ckpt.params, corpus, ckpt.groups, ckpt.bank, cfg)
    sys.stdout.write(render_report(report))
    if args.out:
        write_atomic(_resolve(args.workdir, args.out), _dump(report_to_dict(report)))
    return 0


def cmd_project(args) -> int:
    probs_path = _resolve(args.workdir, args.probs)
    raw = json.loads(probs_path.read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ContractError("probability input must be a JSON array", module="cli")
    a = np.asarray(raw, dtype=np.float64)
    bank, meta = load_bank(_resolve(args.workdir, args.cooc))
    pair = bank.global_pair
    if args.object is not None:
        if args.object not in meta["objects"]:
            raise ContractError(
                f"object {args.object!r} not in vocabulary", module="cli"
            )
        pair = bank.pair_for(meta["objects"].index(args.object))
    projected = project_weighted(a, pair, _proj_weights(args.alpha))
    print(json.dumps([float(v) for v in projected]))
    return 0


def _ablate_rows(alpha: float, epochs: int, seed: int, batch_size: int,
                 lr: float) -> list[TrainConfig]:
    def cfg(arch, lw, post=False):
        return TrainConfig(
            arch_kind=arch,
            epochs=epochs,
            batch_size=batch_size,
            learning_rate=lr,
            seed=seed,
            loss_weights=lw,
            projection_weights=_proj_weights(alpha),
            use_postprocess_in_eval=post,
        )

    plain = LossWeights(1.0, 0.0, 0.0)
    distill = LossWeights(1.0, 0.5, 0.5)
    return [
        cfg("baseline", plain),
        cfg("modified", plain),
        cfg("multitask", plain),
        cfg("twostream", plain),
        cfg("hierarchical", plain),
        cfg("modified", distill),
        cfg("hierarchical", distill),
        cfg("hierarchical", distill, post=True),
    ]


def cmd_ablate(args) -> int:
    if args.train_corpus and args.test_corpus:
        corpus_train = load_corpus(_resolve(args.workdir, args.train_corpus))
        corpus_test = load_corpus(_resolve(args.workdir, args.test_corpus))
    else:
        train_cfg = SynthConfig(images=args.images, seed=args.seed,
                                id_prefix="train")
        test_cfg = SynthConfig(
            images=args.test_images,
            seed=args.seed + 1,
            label_drop_rate=0.0,
            id_prefix="test",
        )
        corpus_train, _ = generate(train_cfg)
        corpus_test, _ = generate(test_cfg)
    configs = _ablate_rows(args.alpha, args.epochs, args.seed,
                           args.batch_size, args.lr)
    table = ablation(corpus_train, corpus_test, configs,
                     rare_threshold=args.rare_threshold)
    sys.stdout.write(render_table(table))
    if args.out:
        write_atomic(_resolve(args.workdir, args.out), _dump(table_to_dict(table)))
    return 0


def cmd_report(args) -> int:
    data = json.loads(_resolve(args.workdir, args.input).read_text(encoding="utf-8"))
    if "rows" in data:
        rows = tuple(
            AblationRow(
                label=r["label"],
                map_full=r["map_full"],
                map_rare=r["map_rare"],
                map_nonrare=r["map_nonrare"],
            )
            for r in data["rows"]
        )
        sys.stdout.write(render_table(AblationTable(rows=rows)))
        return 0
    if "map_full" in data:
        lines = [
            "label-ranking mAP over candidate pairs (no box matching)",
            f"{'split':<10}{'mAP':>12}{'classes':>10}",
        ]
        splits = ("full", "rare", "nonrare")
        names = ("full", "rare", "non-rare")
        for split, name in zip(splits, names):
            v = data[f"map_{split}"]
            shown = "undefined" if v is None else f"{v:.4f}"
            n = data["n_defined"][split]
            lines.append(f"{name:<10}{shown:>12}{n:>10}")
        sys.stdout.write("\n".join(lines) + "\n")
        return 0
    raise ContractError("input is neither an eval report nor an ablation table",
                        module="cli")


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="acp",
        description="Action co-occurrence priors: build priors, select "
        "anchors, train and evaluate interaction predictors.",
    )
    parser.add_argument("--workdir", default=".",
                        help="base directory for relative paths")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="corpus JSON output path")
    p.add_argument("--planted", help="planted-structure sidecar path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=2000)
    p.add_argument("--actions", type=int, default=20)
    p.add_argument("--objects", type=int, default=4)
    p.add_argument("--scenarios", type=int, default=8)
    p.add_argument("--zipf", type=float, default=1.2)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--noise-sigma", type=float, default=0.25)
    p.add_argument("--drop-rate", type=float, default=0.2)
    p.add_argument("--uniform", action="store_true",
                   help="uniform scenario frequencies instead of Zipf")
    p.add_argument("--id-prefix", default="img")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-cooc", help="build co-occurrence matrices")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_build_cooc)

    p = sub.add_parser("anchors", help="select anchors and build groups")
    p.add_argument("--cooc", required=True, help="build-cooc output directory")
    p.add_argument("--out", required=True, help="groups JSON output path")
    p.set_defaults(func=cmd_anchors)

    p = sub.add_parser("train", help="train a predictor")
    p.add_argument("--corpus", required=True)
    p.add_argument("--arch", choices=ARCH_CHOICES, default="hierarchical")
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=0.5)
    p.add_argument("--lambda3", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--fusion-dim", type=int, default=64)
    p.add_argument("--hidden-dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rare-threshold", type=int, default=10)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="test corpus")
    p.add_argument("--postprocess", choices=("on", "off"), default="off")
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--out", help="report JSON output path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="project a probability vector")
    p.add_argument("--probs", required=True, help="JSON array of probabilities")
    p.add_argument("--cooc", required=True, help="build-cooc output directory")
    p.add_argument("--object", help="object name (global matrices if omitted)")
    p.add_argument("--alpha", type=float, default=1.5)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("ablate", help="train and evaluate the standard rows")
    p.add_argument("--train-corpus")
    p.add_argument("--test-corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--images", type=int, default=2000)
    p.add_argument("--test-images", type=int, default=500)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, default=1.5)
    p.add_argument("--rare-threshold", type=int, default=10)
    p.add_argument("--out", help="table JSON output path")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render a report or table JSON as text")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _threads_cap()
        return args.func(args)
    except AcpError as exc:
        print(exc.prefixed(), file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error:cli:format: invalid JSON ({exc})", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:cli:io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
