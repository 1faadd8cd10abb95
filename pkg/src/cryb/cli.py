"""Command-line workflow: corpus synthesis, pretraining, transfer
fine-tuning, the SVM baseline, robustness sweeps, embedding analysis, and
report rendering.

Every command resolves its settings from (in rising precedence) built-in
defaults, an optional TOML or JSON config file, and explicit flags; the
resolved configuration is stamped into the output directory as run.json so
a run can be replayed exactly. Exit codes: 0 success, 2 configuration or
input problems, 3 model/architecture incompatibilities, 4 numerical
divergence during training.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .errors import (ArchMismatch, BadConfig, CompatError, ConfigError,
                     CrybError, DivergedLoss, MissingArtifacts,
                     TooFewSubjects)
from .audio import PIPELINE_RATE, fit_length, read_wav, resample, write_wav
from .evaluation import (DEFAULT_SNR_LEVELS_DB, NOISE_KINDS, evaluate_labels,
                         filterbank_sweep, length_sweep, noise_sweep,
                         pca_report)
from .features import mfcc_for_file
from .model import (CHECKPOINT_MAGIC, Res8Config, build_res8,
                    forward_embed, load_checkpoint, predict_labels,
                    save_checkpoint, transfer_load)
from .svm import (SVM_MAGIC, class_weights_from_counts, features_from_mfccs,
                  load_svm, save_svm, svm_grid_search)
from .synth import Manifest, TASKS, derive_rng, synth_corpus
from .training import (SplitPlan, TrainConfig, split_clips, split_subjects,
                       train, write_history)

_TASK_DEFAULTS = {  # subjects, clips per subject, classes
    "target_cry": (40, 12, 2),
    "words": (24, 16, 8),
    "speakers": (10, 20, 10),
    "gender": (12, 12, 2),
}

_TRAIN_KEYS = ("epochs", "batch_size", "lr_initial", "lr_after",
               "lr_switch_epoch", "momentum", "time_shift_max_s")


def _load_config_file(path) -> dict:
    path = Path(path)
    if path.suffix == ".json":
        with open(path) as f:
            loaded = json.load(f)
    else:
        with open(path, "rb") as f:
            loaded = tomllib.load(f)
    if not isinstance(loaded, dict):
        raise BadConfig(f"{path}: config file must hold a table/object")
    return loaded


def _resolve(args, key: str, default):
    """Flag > config file > default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    file_cfg = getattr(args, "_file_cfg", {})
    return file_cfg.get(key, default)


def _train_config(args, seed: int) -> TrainConfig:
    values = {k: _resolve(args, k, getattr(TrainConfig, k)) for k in _TRAIN_KEYS}
    return TrainConfig(seed=seed, **values).validate()


def _stamp(out_dir: Path, command: str, config: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run.json", "w") as f:
        json.dump({"command": command, "config": config,
                   "version": __version__}, f, indent=2, sort_keys=True)
        f.write("\n")


def _split(manifest: Manifest, seed: int, split_by: str):
    if split_by == "clip":
        annotated = split_clips(manifest, seed=seed)
        return annotated, annotated
    try:
        plan = split_subjects(manifest, seed=seed)
    except TooFewSubjects as exc:
        raise TooFewSubjects(
            f"{exc} (a corpus whose classes coincide with subjects can use "
            f"--split-by clip)") from exc
    return plan, plan


def _rows(plan, manifest: Manifest, split: str):
    if isinstance(plan, SplitPlan):
        return plan.rows_for(manifest, split)
    return [r for r in plan.rows if r.split == split]


def _features_for_rows(manifest: Manifest, rows) -> np.ndarray:
    return np.stack([
        mfcc_for_file(manifest.clip_path(r)).coeffs.astype(np.float32)
        for r in rows])


def _res8_predictor(model):
    def predict(stack: np.ndarray):
        model.eval()
        return predict_labels(model, stack)
    return predict


def _svm_predictor(model):
    def predict(stack: np.ndarray):
        flat = np.asarray(stack, dtype=np.float64).reshape(len(stack), -1)
        return model.predict_labels(flat)
    return predict


def _write_summary(path, per_seed: list, fields=("uar", "sensitivity",
                                                 "specificity")):
    """Per-seed metric rows plus mean and standard-error rows."""
    import csv

    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["seed", *fields])
        for seed, metrics in per_seed:
            writer.writerow([seed] + [
                "" if metrics.get(k) is None else repr(float(metrics[k]))
                for k in fields])
        for stat in ("mean", "se"):
            row = [stat]
            for k in fields:
                values = [m[k] for _, m in per_seed if m.get(k) is not None]
                if not values:
                    row.append("")
                elif stat == "mean":
                    row.append(repr(float(np.mean(values))))
                else:
                    row.append(repr(float(np.std(values, ddof=1)
                                          / np.sqrt(len(values))))
                               if len(values) > 1 else repr(0.0))
            writer.writerow(row)


# -- commands -----------------------------------------------------------------

def cmd_data_synth(args) -> int:
    task = args.task
    d_subjects, d_clips, d_classes = _TASK_DEFAULTS[task]
    subjects = _resolve(args, "subjects", d_subjects)
    clips = _resolve(args, "clips_per_subject", d_clips)
    classes = _resolve(args, "classes", d_classes)
    if task == "speakers":
        classes = subjects
    out = Path(args.out)
    manifest = synth_corpus(task, subjects, clips, classes, args.seed, out)
    _stamp(out, "data synth", {"task": task, "subjects": subjects,
                               "clips_per_subject": clips, "classes": classes,
                               "seed": args.seed, "out": str(out)})
    print(f"wrote {len(manifest.rows)} clips "
          f"({len(manifest.class_names)} classes, {subjects} subjects) "
          f"to {out / 'manifest.csv'}")
    return 0


def cmd_data_import(args) -> int:
    import csv

    wav_root = Path(args.wavs)
    out = Path(args.out)
    (out / "wavs").mkdir(parents=True, exist_ok=True)
    with open(args.labels, newline="") as f:
        reader = csv.DictReader(f)
        needed = {"path", "label", "subject_id"}
        if reader.fieldnames is None or not needed <= set(reader.fieldnames):
            raise BadConfig(f"{args.labels}: need columns {sorted(needed)}")
        entries = list(reader)
    if not entries:
        raise BadConfig(f"{args.labels}: no rows")
    from .synth import ManifestRow

    rows = []
    for i, entry in enumerate(entries):
        clip = read_wav(wav_root / entry["path"])
        if clip.sample_rate != PIPELINE_RATE:
            clip = resample(clip, PIPELINE_RATE)
        clip = fit_length(clip, 1.0)
        rel = f"wavs/import{i:04d}.wav"
        write_wav(out / rel, clip)
        rows.append(ManifestRow(path=rel, label=entry["label"],
                                subject_id=entry["subject_id"]))
    manifest = Manifest(rows=rows, root=out)
    manifest.save(out / "manifest.csv")
    _stamp(out, "data import", {"wavs": str(wav_root),
                                "labels": str(args.labels), "out": str(out)})
    print(f"imported {len(rows)} clips to {out / 'manifest.csv'}")
    return 0


def cmd_pretrain(args) -> int:
    manifest = Manifest.load(args.manifest)
    out = Path(args.out)
    seed = args.seed
    task_name = args.task_name or Path(args.manifest).resolve().parent.name
    split_by = _resolve(args, "split_by", "subject")
    plan, row_source = _split(manifest, seed, split_by)

    class_names = manifest.class_names
    if len(class_names) < 2:
        raise BadConfig("pretraining needs at least 2 classes")
    config = _train_config(args, seed)
    model = build_res8(Res8Config(n_classes=len(class_names)),
                       derive_rng(seed, "init"), class_names=class_names)
    model, history = train(model, manifest, row_source, config,
                           verbose=not args.quiet)

    test_rows = _rows(row_source, manifest, "test")
    report = evaluate_labels(
        [r.label for r in test_rows],
        _res8_predictor(model)(_features_for_rows(manifest, test_rows)),
        class_names)
    accuracy = float(np.trace(report.confusion) / report.n)

    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.ckpt", source_task=task_name,
                    seed=seed, metrics={"test_uar": report.uar,
                                        "test_accuracy": accuracy,
                                        "best_val_uar": model.meta["best_val_uar"]})
    write_history(out / f"history_seed{seed}.csv", history)
    with open(out / "eval.json", "w") as f:
        json.dump({**report.to_dict(), "accuracy": accuracy}, f, indent=2)
        f.write("\n")
    _write_summary(out / "summary.csv",
                   [(seed, {"uar": report.uar,
                            "sensitivity": report.sensitivity,
                            "specificity": report.specificity})])
    _stamp(out, "pretrain", {"manifest": str(args.manifest), "seed": seed,
                             "task_name": task_name, "split_by": split_by,
                             "train": config.to_dict()})
    print(f"source task {task_name!r}: test accuracy {accuracy:.3f}, "
          f"UAR {report.uar:.3f} -> {out / 'checkpoint.ckpt'}")
    return 0


def cmd_finetune(args) -> int:
    manifest = Manifest.load(args.manifest)
    out = Path(args.out)
    seeds = args.seeds
    init = _resolve(args, "init", "random")
    if init.startswith("transfer:"):
        source_path = Path(init.split(":", 1)[1])
        if not source_path.is_file():
            raise BadConfig(f"transfer checkpoint not found: {source_path}")
    elif init != "random":
        raise BadConfig(f"--init must be 'random' or 'transfer:<ckpt>', "
                        f"got {init!r}")

    class_names = manifest.class_names
    if len(class_names) < 2:
        raise BadConfig("fine-tuning needs at least 2 classes")
    out.mkdir(parents=True, exist_ok=True)
    per_seed = []
    for seed in seeds:
        plan, row_source = _split(manifest, seed, "subject")
        config = _train_config(args, seed)
        rng = derive_rng(seed, "init")
        if init == "random":
            model = build_res8(Res8Config(n_classes=len(class_names)), rng,
                               class_names=class_names)
        else:
            model = transfer_load(Res8Config(n_classes=len(class_names)),
                                  source_path, rng, class_names=class_names)
        model, history = train(model, manifest, row_source, config,
                               verbose=not args.quiet)
        test_rows = _rows(row_source, manifest, "test")
        report = evaluate_labels(
            [r.label for r in test_rows],
            _res8_predictor(model)(_features_for_rows(manifest, test_rows)),
            class_names)
        save_checkpoint(model, out / f"ckpt_seed{seed}.ckpt",
                        source_task=model.meta.get("source_task", ""),
                        seed=seed, metrics={"test_uar": report.uar})
        write_history(out / f"history_seed{seed}.csv", history)
        with open(out / f"eval_seed{seed}.json", "w") as f:
            json.dump(report.to_dict(), f, indent=2)
            f.write("\n")
        per_seed.append((seed, {"uar": report.uar,
                                "sensitivity": report.sensitivity,
                                "specificity": report.specificity}))
        print(f"seed {seed}: test UAR {report.uar:.3f} "
              f"(best val {model.meta['best_val_uar']:.3f} "
              f"at epoch {model.meta['best_epoch']})")

    _write_summary(out / "summary.csv", per_seed)
    _stamp(out, "finetune", {"manifest": str(args.manifest), "seeds": seeds,
                             "init": init,
                             "train": _train_config(args, seeds[0]).to_dict()})
    uars = [m["uar"] for _, m in per_seed]
    se = float(np.std(uars, ddof=1) / np.sqrt(len(uars))) if len(uars) > 1 else 0.0
    print(f"UAR {100 * float(np.mean(uars)):.1f} ({100 * se:.1f}) over "
          f"{len(uars)} seed(s) -> {out / 'summary.csv'}")
    return 0


def cmd_svm(args) -> int:
    from .evaluation import NEGATIVE_CLASS, POSITIVE_CLASS

    manifest = Manifest.load(args.manifest)
    out = Path(args.out)
    seed = args.seed
    class_names = manifest.class_names
    if len(class_names) != 2:
        raise BadConfig(f"the SVM baseline is binary; manifest has "
                        f"{len(class_names)} classes")
    pos = POSITIVE_CLASS if POSITIVE_CLASS in class_names else class_names[0]
    neg = next(c for c in class_names if c != pos)
    plan, row_source = _split(manifest, seed, "subject")

    def block(split):
        rows = _rows(row_source, manifest, split)
        mats = [mfcc_for_file(manifest.clip_path(r)) for r in rows]
        x = features_from_mfccs(mats)
        y = np.array([1 if r.label == pos else -1 for r in rows])
        return rows, x, y

    train_rows, x_train, y_train = block("train")
    _, x_val, y_val = block("val")
    test_rows, x_test, _ = block("test")
    weights = class_weights_from_counts(int(np.sum(y_train > 0)),
                                        int(np.sum(y_train < 0)))
    model, best_c, best_gamma, grid = svm_grid_search(
        x_train, y_train, x_val, y_val, class_weights=weights)
    model.pos_label, model.neg_label = pos, neg

    report = evaluate_labels([r.label for r in test_rows],
                             model.predict_labels(x_test), class_names)
    out.mkdir(parents=True, exist_ok=True)
    save_svm(model, out / "model.svm", class_names=class_names,
             metrics={"test_uar": report.uar, "C": best_c, "gamma": best_gamma})
    with open(out / "eval.json", "w") as f:
        json.dump({**report.to_dict(), "C": best_c, "gamma": best_gamma},
                  f, indent=2)
        f.write("\n")
    import csv

    with open(out / "grid.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["C", "gamma", "val_uar",
                                               "n_support", "converged"])
        writer.writeheader()
        writer.writerows(grid)
    _write_summary(out / "summary.csv",
                   [(seed, {"uar": report.uar,
                            "sensitivity": report.sensitivity,
                            "specificity": report.specificity})])
    _stamp(out, "svm", {"manifest": str(args.manifest), "seed": seed,
                        "C": best_c, "gamma": best_gamma,
                        "class_weights": list(weights)})
    print(f"SVM C={best_c} gamma={best_gamma:.3g}: "
          f"test UAR {report.uar:.3f} -> {out / 'model.svm'}")
    return 0


def _load_any_model(path: Path):
    """(tag, predictor) for a res8 checkpoint or an SVM container."""
    with open(path, "rb") as f:
        magic = f.read(8)
    tag = path.stem.replace("__", "-")
    if magic == CHECKPOINT_MAGIC:
        model = load_checkpoint(path)
        return tag, _res8_predictor(model)
    if magic == SVM_MAGIC:
        model = load_svm(path)
        if not model.pos_label:
            raise ArchMismatch(f"{path}: SVM container lacks class labels")
        return tag, _svm_predictor(model)
    raise ArchMismatch(f"{path}: unrecognized model container")


def cmd_robustness(args) -> int:
    manifest = Manifest.load(args.manifest)
    out = Path(args.out)
    seed = args.seed
    kinds = _resolve(args, "noise_kinds", list(NOISE_KINDS))
    levels = _resolve(args, "snr_levels", list(DEFAULT_SNR_LEVELS_DB))
    plan, row_source = _split(manifest, seed, "subject")
    test_rows = _rows(row_source, manifest, "test")
    clips = [read_wav(manifest.clip_path(r)) for r in test_rows]
    labels = [r.label for r in test_rows]
    class_names = manifest.class_names

    out.mkdir(parents=True, exist_ok=True)
    written = []
    for model_path in args.models:
        tag, predictor = _load_any_model(Path(model_path))
        for kind in kinds:
            curve = noise_sweep(predictor, clips, labels, class_names, kind,
                                levels_db=levels, seed=seed, model_tag=tag)
            path = out / f"{tag}__noise_{kind}.csv"
            curve.save_csv(path)
            written.append(path)
        curve = length_sweep(predictor, clips, labels, class_names,
                             model_tag=tag)
        curve.save_csv(out / f"{tag}__length.csv")
        written.append(out / f"{tag}__length.csv")
        curve = filterbank_sweep(predictor, clips, labels, class_names,
                                 model_tag=tag)
        curve.save_csv(out / f"{tag}__filterbank.csv")
        written.append(out / f"{tag}__filterbank.csv")
        print(f"{tag}: {len(kinds) + 2} sweeps done")
    _stamp(out, "robustness", {"manifest": str(args.manifest), "seed": seed,
                               "models": [str(m) for m in args.models],
                               "noise_kinds": list(kinds),
                               "snr_levels": [str(v) for v in levels]})
    print(f"{len(written)} sweep CSVs -> {out}")
    return 0


def cmd_pca(args) -> int:
    manifest = Manifest.load(args.manifest)
    out = Path(args.out)
    seed = args.seed
    model = load_checkpoint(Path(args.model))
    plan, row_source = _split(manifest, seed, "subject")
    test_rows = _rows(row_source, manifest, "test")
    model.eval()
    embeddings = np.stack([
        forward_embed(model, mfcc_for_file(manifest.clip_path(r)))
        for r in test_rows])
    labels = [r.label for r in test_rows]
    result = pca_report(embeddings, labels, out, tag="pca")
    _stamp(out, "pca", {"manifest": str(args.manifest), "seed": seed,
                        "model": str(args.model)})
    top2 = float(np.sum(result.ratios[:2]))
    print(f"{embeddings.shape[0]} embeddings, top-2 components explain "
          f"{100 * top2:.1f}% of variance -> {out}")
    return 0


def cmd_report(args) -> int:
    from .report import render_report  # matplotlib import is slow

    path = render_report(args.experiment, out_name=args.out_name)
    print(f"report -> {path}")
    return 0


# -- argument parsing ---------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr-initial", type=float, dest="lr_initial")
    p.add_argument("--lr-after", type=float, dest="lr_after")
    p.add_argument("--lr-switch-epoch", type=int, dest="lr_switch_epoch")
    p.add_argument("--momentum", type=float)
    p.add_argument("--time-shift-max-s", type=float, dest="time_shift_max_s")
    p.add_argument("--quiet", action="store_true")


def _seed_list(text: str) -> list:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("seed list is empty")
    return seeds


def _snr_levels(text: str) -> list:
    levels = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        levels.append(float("inf") if chunk in ("inf", "clean") else float(chunk))
    return levels


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cryb",
        description="Infant-cry classification experiments: MFCC features, "
                    "a residual network with transfer initialization, an "
                    "SVM baseline, and robustness analyses.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    data = sub.add_parser("data", help="corpus synthesis and import")
    data_sub = data.add_subparsers(dest="data_command", required=True)
    synth = data_sub.add_parser("synth", help="generate a synthetic corpus")
    synth.add_argument("--task", choices=TASKS, required=True)
    synth.add_argument("--out", required=True)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--subjects", type=int)
    synth.add_argument("--clips-per-subject", type=int, dest="clips_per_subject")
    synth.add_argument("--classes", type=int)
    synth.set_defaults(func=cmd_data_synth)
    imp = data_sub.add_parser("import", help="ingest WAV recordings")
    imp.add_argument("--wavs", required=True)
    imp.add_argument("--labels", required=True,
                     help="CSV with path,label,subject_id columns")
    imp.add_argument("--out", required=True)
    imp.set_defaults(func=cmd_data_import)

    pre = sub.add_parser("pretrain", help="train a source-task model")
    pre.add_argument("--manifest", required=True)
    pre.add_argument("--out", required=True)
    pre.add_argument("--seed", type=int, default=0)
    pre.add_argument("--task-name", dest="task_name")
    pre.add_argument("--split-by", choices=("subject", "clip"), dest="split_by")
    pre.add_argument("--config", dest="config_file")
    _add_train_flags(pre)
    pre.set_defaults(func=cmd_pretrain)

    fine = sub.add_parser("finetune", help="train target-task models")
    fine.add_argument("--manifest", required=True)
    fine.add_argument("--out", required=True)
    fine.add_argument("--seeds", type=_seed_list, default=[1, 2, 3])
    fine.add_argument("--init",
                      help="'random' or 'transfer:<checkpoint path>'")
    fine.add_argument("--config", dest="config_file")
    _add_train_flags(fine)
    fine.set_defaults(func=cmd_finetune)

    svm_p = sub.add_parser("svm", help="grid-searched RBF-SVM baseline")
    svm_p.add_argument("--manifest", required=True)
    svm_p.add_argument("--out", required=True)
    svm_p.add_argument("--seed", type=int, default=0)
    svm_p.add_argument("--config", dest="config_file")
    svm_p.set_defaults(func=cmd_svm)

    rob = sub.add_parser("robustness", help="noise/length/filterbank sweeps")
    rob.add_argument("--manifest", required=True)
    rob.add_argument("--out", required=True)
    rob.add_argument("--seed", type=int, default=0)
    rob.add_argument("--models", nargs="+", required=True)
    rob.add_argument("--noise-kinds", nargs="+", choices=NOISE_KINDS,
                     dest="noise_kinds")
    rob.add_argument("--snr-levels", type=_snr_levels, dest="snr_levels",
                     help="comma-separated dB values, 'inf' for clean")
    rob.add_argument("--config", dest="config_file")
    rob.set_defaults(func=cmd_robustness)

    pca_p = sub.add_parser("pca", help="principal components of embeddings")
    pca_p.add_argument("--manifest", required=True)
    pca_p.add_argument("--model", required=True)
    pca_p.add_argument("--out", required=True)
    pca_p.add_argument("--seed", type=int, default=0)
    pca_p.set_defaults(func=cmd_pca)

    rep = sub.add_parser("report", help="collate results into markdown")
    rep.add_argument("--experiment", required=True)
    rep.add_argument("--out-name", dest="out_name", default="report.md")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config_file", None):
        args._file_cfg = _load_config_file(args.config_file)
    else:
        args._file_cfg = {}
    try:
        return args.func(args) or 0
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return 2
    except MissingArtifacts as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CompatError as exc:
        print(f"error: incompatible model: {exc}", file=sys.stderr)
        return 3
    except DivergedLoss as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return 4
    except CrybError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
