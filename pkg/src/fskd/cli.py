"""Command-line front end.

Every subcommand except ``convert-dataset`` reads a flat ``key = value``
config (``--config``) and accepts ``--key value`` overrides for any key.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 non-finite loss.
"""

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .backbone import build_backbone
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .data.datasets import DataError, Dataset, load_dataset, load_pair_list, save_binary, save_image_tree
from .data.evaluate import eval_classification, eval_identification, eval_verification
from .data.iterate import ResolutionSetting
from .data.resize import make_lr_batch
from .data.synth import load_svhn_mat, synthetic_digits
from .distill import DistillConfig, DistillKind
from .estimators import CosFaceNet
from .heads import MarginHeadParams
from .stats import attention_map, block_taps, norm_distribution, pixel_correlation, t_test, write_pgm, write_report
from .training import NumericError, TeacherTaps, TrainState, metrics_csv, train

logger = logging.getLogger("fskd")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

ABLATION_KINDS = ("none", "fitnet_l2", "norm_kd", "fskd")
ABLATION_LABELS = {"none": "base", "fitnet_l2": "fitnet_l2", "norm_kd": "norm_kd", "fskd": "fskd"}


# ---------------------------------------------------------------- helpers


def _require(path: str, what: str) -> Path:
    if not path:
        raise ConfigError(f"no {what} given")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} not found: {p}")
    return p


def _is_face(cfg: RunConfig) -> bool:
    return cfg.task != "digit_classification"


def _load(cfg: RunConfig, path: str, what: str) -> Dataset:
    ds = load_dataset(_require(path, what), cfg.dataset_format, is_face=_is_face(cfg))
    h, w, _ = ds.image_shape
    if h != cfg.input_size or w != cfg.input_size:
        raise ConfigError(f"{what} images are {h}x{w} but input_size is {cfg.input_size}")
    return ds


def _wrap(state: TrainState) -> CosFaceNet:
    return CosFaceNet.from_state(state)


def _evaluator(cfg: RunConfig, ratio: int) -> Optional[Callable[[TrainState], float]]:
    """Accuracy under the task's protocol, or None when no eval data is configured."""
    if cfg.task == "digit_classification":
        if not cfg.eval_set:
            return None
        ds = _load(cfg, cfg.eval_set, "eval_set")
        return lambda state: eval_classification(_wrap(state), ds, ratio)
    if cfg.task == "face_verification":
        if not cfg.pairs:
            return None
        pairs = load_pair_list(_require(cfg.pairs, "pairs"))
        return lambda state: eval_verification(_wrap(state), pairs, ratio, cfg.verification_folds)
    if not (cfg.gallery_set and cfg.probe_set):
        return None
    gallery = _load(cfg, cfg.gallery_set, "gallery_set")
    probes = _load(cfg, cfg.probe_set, "probe_set")
    return lambda state: eval_identification(_wrap(state), gallery, probes, ratio)


def _fresh_state(cfg: RunConfig, ds: Dataset) -> TrainState:
    bcfg = cfg.backbone_config(ds.image_shape[2])
    backbone = build_backbone(bcfg, cfg.seed)
    head = MarginHeadParams.init(cfg.embedding_dim, ds.n_classes, cfg.seed + 1, cfg.scale, cfg.margin)
    return TrainState.create(backbone, head, cfg.schedule())


def _start_state(cfg: RunConfig, ds: Dataset) -> TrainState:
    if not cfg.resume:
        return _fresh_state(cfg, ds)
    state, meta = load_checkpoint(_require(cfg.resume, "resume checkpoint"))
    if meta["rng"]["seed"] != cfg.seed:
        raise ConfigError(f"resume checkpoint was trained with seed {meta['rng']['seed']}, config has {cfg.seed}")
    if state.backbone.config != cfg.backbone_config(ds.image_shape[2]):
        raise ConfigError("resume checkpoint backbone does not match the config")
    return state


def _run_training(
    cfg: RunConfig,
    ds: Dataset,
    setting: ResolutionSetting,
    distill: DistillConfig,
    teacher: Optional[TeacherTaps],
    eval_ratio: int,
    name: str,
    state: Optional[TrainState] = None,
) -> TrainState:
    state = state if state is not None else _start_state(cfg, ds)
    evaluate = _evaluator(cfg, eval_ratio)
    train(
        state,
        ds,
        cfg.schedule(),
        setting,
        cfg.seed,
        distill,
        teacher,
        None if evaluate is None else (lambda: evaluate(state)),
    )
    out = Path(cfg.checkpoint_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / f"{name}.ckpt", state, cfg.seed, {"task": cfg.task, "run": name})
    (out / f"{name}_metrics.csv").write_text(metrics_csv(state.metrics), encoding="utf-8")
    logger.info("wrote %s", out / f"{name}.ckpt")
    return state


def _load_teacher(cfg: RunConfig, ds: Dataset) -> TrainState:
    teacher, _ = load_checkpoint(_require(cfg.teacher, "teacher checkpoint"))
    want = cfg.backbone_config(ds.image_shape[2])
    if teacher.backbone.config != want:
        raise ConfigError(f"teacher backbone {teacher.backbone.config} does not match student {want}")
    return teacher


def _student(cfg: RunConfig, ds: Dataset, kind: str, name: str, teacher: Optional[TrainState]) -> TrainState:
    distill = DistillConfig(kind, cfg.lambda_distill, cfg.flatten_mode)
    taps = None
    if distill.kind is not DistillKind.NONE:
        if teacher is None:
            raise ConfigError(f"distill={kind} needs a teacher checkpoint")
        # horizontal flips change the HR input per epoch, so features cannot be cached
        taps = TeacherTaps(teacher.backbone, None if ds.is_face else ds)
    return _run_training(cfg, ds, cfg.resolution(), distill, taps, cfg.eval_ratio, name)


# ---------------------------------------------------------------- commands


def cmd_train_teacher(cfg: RunConfig) -> TrainState:
    ds = _load(cfg, cfg.train_set, "train_set")
    return _run_training(
        cfg, ds, ResolutionSetting.single(1), DistillConfig(DistillKind.NONE), None, 1, cfg.run_name or "teacher"
    )


def cmd_train_student(cfg: RunConfig) -> TrainState:
    ds = _load(cfg, cfg.train_set, "train_set")
    teacher = _load_teacher(cfg, ds) if DistillKind(cfg.distill) is not DistillKind.NONE else None
    return _student(cfg, ds, cfg.distill, cfg.run_name or "student", teacher)


def cmd_eval(cfg: RunConfig) -> float:
    state, _ = load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    evaluate = _evaluator(cfg, cfg.eval_ratio)
    if evaluate is None:
        raise ConfigError(f"task {cfg.task} needs evaluation data (eval_set, pairs or gallery_set/probe_set)")
    acc = evaluate(state)
    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["checkpoint", "task", "ratio", "accuracy"])
        w.writerow([cfg.checkpoint, cfg.task, cfg.eval_ratio, repr(acc)])
    print(f"accuracy {acc:.4f} ({cfg.task}, ratio {cfg.eval_ratio})")
    return acc


def cmd_analyze(cfg: RunConfig, n_attention: int = 4) -> Dict[str, list]:
    """Norm t-tests, feature correlations and attention maps for a teacher/student pair."""
    teacher, _ = load_checkpoint(_require(cfg.teacher, "teacher checkpoint"))
    student, _ = load_checkpoint(_require(cfg.student, "student checkpoint"))
    ds = _load(cfg, cfg.eval_set, "eval_set")
    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    ratio = cfg.eval_ratio
    n_blocks = teacher.backbone.config.num_taps

    rng = np.random.default_rng(cfg.seed)
    sample = ds.subset(np.sort(rng.choice(len(ds), size=min(cfg.n_images, len(ds)), replace=False)))
    ttest_rows = []
    for b in range(n_blocks):
        t_norms = norm_distribution(teacher.backbone, sample, 1, b)
        s_norms = norm_distribution(student.backbone, sample, ratio, b)
        res = t_test(t_norms, s_norms, alpha=0.01)
        ttest_rows += [
            (b + 1, "teacher_mean_norm", float(np.mean(t_norms))),
            (b + 1, "student_mean_norm", float(np.mean(s_norms))),
            (b + 1, "t", res.t_statistic),
            (b + 1, "dof", res.dof),
            (b + 1, "p_value", res.p_value),
            (b + 1, "critical", res.critical_value),
            (b + 1, "reject", int(res.reject_null)),
        ]
    write_report(out / "ttest.csv", ttest_rows)

    corr = pixel_correlation(teacher.backbone, student.backbone, ds, ratio, cfg.n_images, cfg.seed)
    corr_rows = [(b, "pearson_r", r) for b, r in zip(corr.block_ids, corr.r)]
    corr_rows += [(b, "sample_count", corr.sample_count) for b in corr.block_ids]
    write_report(out / "correlation.csv", corr_rows)

    few = ds.images[: min(n_attention, len(ds))]
    t_taps = block_taps(teacher.backbone, few)
    s_taps = block_taps(student.backbone, make_lr_batch(few, ratio))
    for b in range(n_blocks):
        for i in range(len(few)):
            write_pgm(out / f"attention_teacher_b{b + 1}_{i}.pgm", attention_map(t_taps[b][i]))
            write_pgm(out / f"attention_student_b{b + 1}_{i}.pgm", attention_map(s_taps[b][i]))
    return {"ttest": ttest_rows, "correlation": corr_rows}


def cmd_ablate(cfg: RunConfig) -> List[dict]:
    """Train one student per distillation kind from the same seed and data order."""
    ds = _load(cfg, cfg.train_set, "train_set")
    evaluate = _evaluator(cfg, cfg.eval_ratio)
    if evaluate is None:
        raise ConfigError("ablate needs evaluation data to rank the variants")
    teacher = _load_teacher(cfg, ds)
    rows = []
    for kind in ABLATION_KINDS:
        name = f"{cfg.run_name or 'ablate'}_{ABLATION_LABELS[kind]}_s{cfg.seed}"
        state = _student(cfg, ds, kind, name, teacher)
        acc = evaluate(state)
        rows.append({"variant": ABLATION_LABELS[kind], "seed": cfg.seed, "lr_accuracy": acc})
        logger.info("ablation %s: %.4f", kind, acc)
    out = Path(cfg.report_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"ablation_s{cfg.seed}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "seed", "ratio", "lr_accuracy"])
        for r in rows:
            w.writerow([r["variant"], r["seed"], cfg.eval_ratio, repr(r["lr_accuracy"])])
    return rows


def cmd_convert_dataset(args) -> Dataset:
    if args.synthetic_digits:
        ds = synthetic_digits(args.synthetic_digits, seed=args.seed, size=args.size)
    else:
        src = Path(args.input or "")
        if not args.input or not src.exists():
            raise DataError(f"input not found: {args.input!r}")
        if args.input_format == "svhn-mat":
            ds = load_svhn_mat(src, args.limit)
        else:
            ds = load_dataset(src, args.input_format)
            if args.limit:
                ds = ds.subset(np.arange(min(args.limit, len(ds))))
    fmt = args.output_format
    if fmt == "auto":
        fmt = "bin" if Path(args.output).suffix == ".bin" else "dir"
    if fmt == "bin":
        save_binary(ds, args.output)
    else:
        save_image_tree(ds, args.output)
    print(f"wrote {len(ds)} images to {args.output}")
    return ds


# ---------------------------------------------------------------- argument handling


def _overrides(extra: List[str]) -> Dict[str, str]:
    """Turn ``--key value`` / ``--key=value`` pairs into config overrides."""
    out: Dict[str, str] = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for {tok}")
            i += 1
            val = extra[i]
        out[key.replace("-", "_")] = val
        i += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fskd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("train-teacher", "train the HR teacher with the CosFace loss"),
        ("train-student", "train an LR student, optionally distilled from a teacher"),
        ("eval", "evaluate a checkpoint under the task's protocol"),
        ("analyze", "norm t-tests, feature correlation and attention maps"),
        ("ablate", "compare base / fitnet_l2 / norm_kd / fskd students"),
    ]:
        p = sub.add_parser(name, help=help_, epilog="any config key may be overridden with --key value")
        p.add_argument("--config", help="key = value config file")
    conv = sub.add_parser("convert-dataset", help="convert between dataset formats or render synthetic digits")
    conv.add_argument("--input")
    conv.add_argument("--input-format", default="auto", choices=("auto", "dir", "bin", "svhn-mat"))
    conv.add_argument("--output", required=True)
    conv.add_argument("--output-format", default="auto", choices=("auto", "dir", "bin"))
    conv.add_argument("--limit", type=int, default=0)
    conv.add_argument("--synthetic-digits", type=int, default=0, metavar="N")
    conv.add_argument("--seed", type=int, default=0)
    conv.add_argument("--size", type=int, default=32)
    return parser


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "ablate": cmd_ablate,
}


def _thread_limit() -> Optional[int]:
    raw = os.environ.get("FSKD_THREADS", "").strip()
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"FSKD_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"FSKD_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        threads = _thread_limit()
        if args.command == "convert-dataset":
            if extra:
                raise ConfigError(f"unexpected arguments {extra}")
            cmd_convert_dataset(args)
            return EXIT_OK
        cfg = load_config(args.config, _overrides(extra))
        with threadpool_limits(limits=threads):
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
