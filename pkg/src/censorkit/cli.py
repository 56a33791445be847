"""Command-line entry point: ``censorkit {fairness,search,image,audit}``."""

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import errors
from .anon import (
    build_expert_model, evaluate, expert_reconstruct, image_adversary, paired_images,
    adversary_accuracy, pretrain_patch_classifier, train_anonymizer, train_image_adversary,
)
from .config import ExperimentConfig, load_config, write_config
from .data import load_csv, split, synth_tabular
from .images import montage, synth_images, write_pgm
from .metrics import Predictions, default_t_grid, fairness_report
from .model import build_censor_model
from .nn import save_tensors
from .search import (
    arm_run, beta_ratio_study, experiment_seed, paired_compare, run_search, select_per_t,
    write_comparison_csv, write_records, write_scatter_csv,
)
from .trainer import train

log = logging.getLogger("censorkit")

EXIT_CODES = {
    errors.ConfigError: 3,
    errors.IngestionError: 4,
    errors.TrainingDiverged: 5,
    errors.UndefinedMetricError: 6,
    errors.IntractableOracleError: 7,
    errors.ShapeError: 8,
}
EXIT_OTHER = 1


def exit_code_for(exc):
    for cls in type(exc).__mro__:
        if cls in EXIT_CODES:
            return EXIT_CODES[cls]
    return EXIT_OTHER


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _seed32(config):
    return config.seed % 2**32


def load_tabular(config):
    """(train, valid, test) parts from the configured source."""
    if config.csv is not None:
        data = load_csv(config.csv.path, config.csv.schema, config.split)
        return data.parts()
    return split(synth_tabular(config.synthetic), config.split)


# -- fairness ---------------------------------------------------------------------


def run_fairness(config, out):
    t_grid = config.t_grid or default_t_grid()
    train_part, valid_part, test_part = load_tabular(config)
    rng = np.random.default_rng(config.seed)
    model = build_censor_model(train_part.n_features, config.model, rng)
    tcfg = dataclasses.replace(config.train, seed=_seed32(config), log_path=os.path.join(out, "trace.jsonl"))
    trace = train(model, train_part, tcfg)

    def report(part):
        p = Predictions(model.predict(part.x), part.s, part.y)
        return fairness_report(p, t_grid, representations=model.encode(part.x))

    test_report = report(test_part)
    test_report.write_json(os.path.join(out, "report.json"))
    report(valid_part).write_json(os.path.join(out, "valid_report.json"))
    test_report.write_delta_csv(os.path.join(out, "delta_curve.csv"))
    save_tensors(os.path.join(out, "params.bin"), model.parameters())
    _write_json(os.path.join(out, "summary.json"), {"model": model.describe(), "train": trace.summary()})
    log.info("test acc %.4f disc %.4f", test_report.y_acc, test_report.y_disc)
    return test_report


# -- search ---------------------------------------------------------------------------


def run_search_cmd(config, out, jobs=1):
    sc = config.search
    t_grid = config.t_grid or default_t_grid()
    arms = sc.arms or [None]
    all_records, runs = [], {}
    for split_seed in sc.split_seeds:
        split_cfg = dataclasses.replace(config.split, seed=int(split_seed))
        parts = load_tabular(dataclasses.replace(config, split=split_cfg))
        master = experiment_seed(config.seed, split_seed)
        for arm in arms:
            name = "main" if arm is None else arm.name
            tcfg = config.train if arm is None else dataclasses.replace(config.train, **arm.train)
            prior = sc.prior if arm is None or not arm.model else dataclasses.replace(sc.prior, **arm.model)
            records = run_search(parts, prior, sc.n_experiments, tcfg, master, jobs, t_grid, int(split_seed))
            records = [dataclasses.replace(r, hyperparams={**r.hyperparams, "arm": name}) for r in records]
            all_records += records
            failed = sum(r.failed for r in records)
            log.info("split %s arm %s: %d experiments, %d failed", split_seed, name, len(records), failed)
            if len(records) - failed:
                runs.setdefault(name, []).append((split_seed, select_per_t(records, t_grid)))

    write_records(all_records, os.path.join(out, "records.jsonl"))
    with open(os.path.join(out, "selection.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "split_seed", "t", "index", "valid_delta", "valid_acc", "valid_disc",
                    "test_delta", "test_acc", "test_disc"])
        for name, per_split in runs.items():
            for split_seed, sel in per_split:
                for t, r in sel.items():
                    w.writerow([name, split_seed, repr(t), r.index, repr(r.valid.delta_at(t)), repr(r.valid.y_acc),
                                repr(r.valid.y_disc), repr(r.test.delta_at(t)), repr(r.test.y_acc),
                                repr(r.test.y_disc)])
    study = beta_ratio_study(all_records)
    write_scatter_csv(study, os.path.join(out, "scatter.csv"))
    summary = {
        "experiments": len(all_records),
        "failed": sum(r.failed for r in all_records),
        "spearman_beta_ratio_vs_disc": study.spearman,
    }
    if len(arms) == 2 and len(runs) == 2:
        (name_a, ra), (name_b, rb) = runs.items()
        comp = paired_compare(
            [arm_run(s, sel, t_grid) for s, sel in ra], [arm_run(s, sel, t_grid) for s, sel in rb], t_grid
        )
        write_comparison_csv(comp, os.path.join(out, "comparison.csv"))
        summary["comparison"] = f"{name_a} - {name_b}"
    _write_json(os.path.join(out, "search_summary.json"), summary)
    return summary


# -- image -------------------------------------------------------------------------------


def run_image(config, out):
    ic = config.image
    corpus_spec = dataclasses.replace(ic.corpus, seed=_seed32(config))
    corpus = synth_images(corpus_spec)
    rng = np.random.default_rng(config.seed)
    model = build_expert_model(corpus.shape, ic.expert, rng)
    pre = pretrain_patch_classifier(model, corpus, dataclasses.replace(ic.pretrain, seed=_seed32(config)))
    trace = train_anonymizer(
        model, corpus, ic.alpha, ic.beta,
        dataclasses.replace(ic.train, seed=_seed32(config), log_path=os.path.join(out, "trace.jsonl")),
    )
    ev = evaluate(model, corpus.test)
    # a fresh adversary fit on raw training images shows the text is detectable at all
    ref = image_adversary(corpus.shape, np.random.default_rng([config.seed, 1]))
    ref_cfg = dataclasses.replace(ic.train, max_steps=ic.reference_steps, seed=_seed32(config))
    train_image_adversary(ref, corpus.train, corpus.train_s, ref_cfg)
    x, s = paired_images(corpus.test)
    ev.extra["reference_acc_raw"] = adversary_accuracy(ref.forward(x[:, None])[:, 0], s)

    cens_dir = os.path.join(out, "censored")
    mont_dir = os.path.join(out, "montage")
    os.makedirs(cens_dir, exist_ok=True)
    os.makedirs(mont_dir, exist_ok=True)
    censored = expert_reconstruct(model, corpus.test.with_text)
    for i, img in enumerate(censored):
        write_pgm(os.path.join(cens_dir, f"test_{i:04d}.pgm"), img)
        write_pgm(
            os.path.join(mont_dir, f"test_{i:04d}.pgm"),
            montage(corpus.test.with_text[i], img, corpus.test.without_text[i]),
        )
    save_tensors(os.path.join(out, "params.bin"), [p for net in (model.classifier, model.autoencoder, model.adversary)
                                                    for p in net.parameters])
    summary = ev.to_dict()
    summary["pretrain_final_loss"] = float(np.mean(pre[-100:])) if pre else None
    summary["train"] = trace.summary()
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary


# -- audit ---------------------------------------------------------------------------


def _read_table(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise errors.IngestionError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows:
        raise errors.IngestionError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], [r for r in rows[1:] if r]


def read_predictions(path):
    header, rows = _read_table(path)
    col = {h: i for i, h in enumerate(header)}
    for name in ("yHat", "s"):
        if name not in col:
            raise errors.IngestionError(f"{path}: missing column {name!r}")

    def column(name, cast):
        try:
            return np.array([cast(r[col[name]]) for r in rows])
        except (ValueError, IndexError) as exc:
            raise errors.IngestionError(f"{path}: bad value in column {name!r}: {exc}") from None

    try:
        return Predictions(
            column("yHat", int), column("s", int),
            column("y", int) if "y" in col else None,
            column("score", float) if "score" in col else None,
        )
    except ValueError as exc:
        raise errors.IngestionError(f"{path}: {exc}") from None


def read_representations(path, n):
    _, rows = _read_table(path)
    try:
        reps = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise errors.IngestionError(f"{path}: {exc}") from None
    if len(reps) != n:
        raise errors.IngestionError(f"{path}: {len(reps)} rows, predictions have {n}")
    return reps


def run_audit(config, out):
    ac = config.audit
    p = read_predictions(ac.predictions)
    reps = read_representations(ac.representations, len(p.y_hat)) if ac.representations else None
    report = fairness_report(p, config.t_grid or default_t_grid(), representations=reps, bins=ac.bins)
    report.write_json(os.path.join(out, "report.json"))
    report.write_delta_csv(os.path.join(out, "delta_curve.csv"))
    return report


# -- plumbing -------------------------------------------------------------------------


COMMANDS = {"fairness": run_fairness, "search": run_search_cmd, "image": run_image, "audit": run_audit}


def build_parser():
    parser = argparse.ArgumentParser(prog="censorkit", description="Censored representation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes (search only)")
        if name == "audit":
            p.add_argument("--predictions", help="CSV with columns yHat, s and optional y, score")
            p.add_argument("--representations", help="CSV of representations aligned by row")
    return parser


def resolve_config(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    config.mode = args.command
    if args.out is not None:
        config.out = args.out
    if args.seed is not None:
        config.seed = args.seed
    if args.command == "audit":
        if args.predictions:
            config.audit.predictions = args.predictions
        if args.representations:
            config.audit.representations = args.representations
    if args.jobs < 1:
        raise errors.ConfigError("--jobs must be >= 1")
    return config.validate()


def configure_logging():
    level = os.environ.get("CENSORKIT_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        os.makedirs(config.out, exist_ok=True)
        write_config(config, os.path.join(config.out, "config.json"))
        if args.command == "search":
            run_search_cmd(config, config.out, args.jobs)
        else:
            COMMANDS[args.command](config, config.out)
    except errors.CensorKitError as exc:
        print(f"censorkit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"censorkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return 0


if __name__ == "__main__":
    sys.exit(main())
