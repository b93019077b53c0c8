"""Command line interface: ``tlboost <subcommand> [flags]``.

Exit status is 0 on success, 2 for usage errors and 1 for runtime errors.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model_store
from .dataset import (DRIFT_MODES, Dataset, DatasetError, DriftSpec, GeneratorSpec,
                      load_csv, synth_domain_pair, write_csv)
from .engine import TrainConfig, train
from .metrics import auc, drift_report, top_recall
from .revise import (ReviseConfig, ReviseError, multi_round, one_round, target_only,
                     traces_table)
from .tree import ModelError

WORKFLOWS = ("baseline1", "baseline2", "oneround", "multiround")
MODEL_PREFIX = {"baseline1": "BM1", "baseline2": "BM2", "oneround": "OR",
                "multiround": "MR"}


class CLIError(Exception):
    pass


# -- flat key/value config files --------------------------------------------

def read_kv_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CLIError(f"{path}:{lineno}: expected key = value")
            key = key.strip().replace("-", "_")
            if key in out:
                raise CLIError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def _ints(text) -> list:
    return [int(v) for v in str(text).replace(" ", "").split(",") if v]


def _bool(text) -> bool:
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise CLIError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    source: Optional[str] = None
    target: Optional[str] = None
    test: Optional[str] = None
    label_column: str = "label"
    workflows: tuple = ("baseline1", "oneround")
    src_depths: tuple = (3, 4, 5)
    src_trees: tuple = (2, 4, 6, 8, 10, 20, 30, 40, 60, 80)
    tgt_trees: tuple = (40, 80, 120, 160, 200, 240)
    tgt_depth: int = 5
    repeat: int = 5
    seed: int = 0
    learning_rate: float = 0.1
    l2_reg: float = 1.0
    leaf_penalty: float = 0.0
    min_child_samples: int = 1
    subsample: float = 1.0
    resplit: str = "gain_based"
    reweight: bool = True
    rare_policy: str = "discount"
    min_samples: int = 30
    discount: float = 0.1
    fraction: float = 1e-4

    _CASTS = {"workflows": lambda v: tuple(w.strip() for w in v.split(",") if w.strip()),
              "src_depths": lambda v: tuple(_ints(v)), "src_trees": lambda v: tuple(_ints(v)),
              "tgt_trees": lambda v: tuple(_ints(v)), "tgt_depth": int, "repeat": int,
              "seed": int, "learning_rate": float, "l2_reg": float, "leaf_penalty": float,
              "min_child_samples": int, "subsample": float, "reweight": _bool,
              "min_samples": int, "discount": float, "fraction": float}

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        kv = read_kv_file(path)
        known = set(cls.__dataclass_fields__)
        kwargs = {}
        for key, value in kv.items():
            if key not in known:
                raise CLIError(f"{path}: unknown key {key!r}")
            cast = cls._CASTS.get(key, str)
            try:
                kwargs[key] = cast(value)
            except ValueError as exc:
                raise CLIError(f"{path}: bad value for {key}: {exc}") from None
        cfg = cls(**kwargs)
        base = os.path.dirname(os.path.abspath(path))
        for key in ("source", "target", "test"):
            p = getattr(cfg, key)
            if p is not None and not os.path.isabs(p):
                setattr(cfg, key, os.path.join(base, p))
        cfg.validate()
        return cfg

    def validate(self):
        for w in self.workflows:
            if w not in WORKFLOWS:
                raise CLIError(f"unknown workflow {w!r}")
        if not self.workflows or not self.tgt_trees:
            raise CLIError("grid lists must be non-empty")
        if any(w != "baseline1" for w in self.workflows) and not (
                self.src_depths and self.src_trees):
            raise CLIError("grid lists must be non-empty")
        if self.repeat < 1:
            raise CLIError("repeat must be >= 1")
        for key in ("target", "test"):
            if getattr(self, key) is None:
                raise CLIError(f"config needs {key!r}")
        if self.source is None and any(w != "baseline1" for w in self.workflows):
            raise CLIError("config needs 'source' for transfer workflows")

    def train_config(self, seed) -> TrainConfig:
        return TrainConfig(shrinkage=self.learning_rate, l2_reg=self.l2_reg,
                           leaf_penalty=self.leaf_penalty,
                           min_child_samples=self.min_child_samples,
                           row_subsample=self.subsample, seed=seed)

    def revise_config(self, workflow) -> ReviseConfig:
        common = dict(min_samples_threshold=self.min_samples,
                      discount_factor=self.discount, l2_reg=self.l2_reg,
                      leaf_penalty=self.leaf_penalty, shrinkage=self.learning_rate)
        if workflow == "baseline2":
            return ReviseConfig.passthrough(**common)
        return ReviseConfig(resplit_mode=self.resplit, reweight=self.reweight,
                            rare_branch_policy=self.rare_policy, **common)


# -- helpers -----------------------------------------------------------------

def _train_config(args) -> TrainConfig:
    return TrainConfig(shrinkage=args.learning_rate, l2_reg=args.l2_reg,
                       leaf_penalty=args.leaf_penalty,
                       min_child_samples=args.min_child_samples,
                       min_split_gain=args.min_split_gain,
                       row_subsample=args.subsample, seed=args.seed)


def _revise_config(args, workflow) -> ReviseConfig:
    common = dict(min_samples_threshold=args.min_samples, discount_factor=args.discount,
                  l2_reg=args.l2_reg, leaf_penalty=args.leaf_penalty,
                  shrinkage=args.learning_rate)
    if workflow == "baseline2":
        return ReviseConfig.passthrough(**common)
    return ReviseConfig(resplit_mode=args.resplit, reweight=args.reweight,
                        rare_branch_policy=args.rare_policy, **common)


def read_features(path, feature_names, label_column="label"):
    """Feature matrix ordered as ``feature_names``, plus labels when present."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        missing = [f for f in feature_names if f not in header]
        if missing:
            raise DatasetError(f"{path}: missing feature columns {missing}")
        cols = [header.index(f) for f in feature_names]
        li = header.index(label_column) if label_column in header else None
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[c]) for c in cols])
                if li is not None:
                    labels.append(float(row[li]))
            except (ValueError, IndexError):
                raise DatasetError(f"{path}:{lineno}: non-numeric or missing cell") from None
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_names))
    if not np.all(np.isfinite(X)):
        raise DatasetError(f"{path}: non-finite feature")
    y = np.array(labels) if li is not None else None
    return X, y


def _metrics_line(model, test: Dataset, fraction: float) -> tuple:
    margin = model.predict_margin(test.features)
    return auc(margin, test.labels), top_recall(margin, test.labels, fraction)


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _run_workflow(workflow, source, target, src_trees, src_depth, tgt_trees, tgt_depth,
                  cfg_s, cfg_t, rcfg, exchange_dir=None):
    if workflow == "baseline1":
        return target_only(target, tgt_trees, tgt_depth, cfg_t), []
    run = multi_round if workflow == "multiround" else one_round
    result = run(source, target, src_trees, tgt_trees, src_depth, tgt_depth,
                 cfg_s, cfg_t, rcfg, exchange_dir=exchange_dir)
    return result.model, result.traces


# -- subcommands -------------------------------------------------------------

def cmd_train(args):
    data = load_csv(args.data, args.label_column)
    base = model_store.load(args.init_model) if args.init_model else None

    def report(i, margins, loss):
        print(f"iter\t{i}\tlogloss\t{loss:.10f}")

    model = train(data.features, data.labels, args.trees, args.depth, base,
                  _train_config(args), data.feature_names, callback=report)
    model_store.save(model, args.out)
    return 0


def cmd_transfer(args):
    target = load_csv(args.target, args.label_column)
    source = None
    if args.workflow != "baseline1":
        if not args.source:
            raise CLIError(f"--source is required for workflow {args.workflow}")
        source = load_csv(args.source, args.label_column)
        if source.feature_names != target.feature_names:
            raise CLIError("feature-space mismatch between source and target")
    cfg = _train_config(args)
    rcfg = _revise_config(args, args.workflow)
    if args.exchange_via_file:
        with tempfile.TemporaryDirectory() as tmp:
            model, traces = _run_workflow(args.workflow, source, target, args.src_trees,
                                          args.src_depth, args.tgt_trees, args.tgt_depth,
                                          cfg, cfg, rcfg, exchange_dir=tmp)
    else:
        model, traces = _run_workflow(args.workflow, source, target, args.src_trees,
                                      args.src_depth, args.tgt_trees, args.tgt_depth,
                                      cfg, cfg, rcfg)
    model_store.save(model, args.out)
    if args.trace:
        _write_text(args.trace, traces_table(traces))
    if args.test:
        test = load_csv(args.test, args.label_column)
        a, r = _metrics_line(model, test, args.fraction)
        line = f"{MODEL_PREFIX[args.workflow]}\t{a:.6f}\t{r:.6f}"
        print("Model\tAUC\tTop Recall")
        print(line)
        if args.report:
            _write_text(args.report, "Model\tAUC\tTop Recall\n" + line + "\n")
    return 0


GRID_HEADER = ("Model", "AUC", "Top Recall", "AUC Lift", "Recall Lift",
               "src_depth", "src_trees", "tgt_trees")


def _lift(value, ref) -> str:
    if ref == 0:
        return "-"
    return f"{100.0 * (value - ref) / ref:.3f}%"


def grid_cells(cfg: ExperimentConfig):
    """(workflow, src_depth, src_trees, tgt_trees) in fixed output order."""
    for w in cfg.workflows:
        if w == "baseline1":
            for tt in cfg.tgt_trees:
                yield w, None, None, tt
        else:
            for d in cfg.src_depths:
                for st in cfg.src_trees:
                    for tt in cfg.tgt_trees:
                        yield w, d, st, tt


def run_grid(cfg: ExperimentConfig, out=None) -> list:
    """Run every grid cell ``cfg.repeat`` times and return averaged rows.

    Lifts are relative to the BM1 cell with the same number of target trees.
    Rows are written to ``out`` as soon as they are known.
    """
    target = load_csv(cfg.target, cfg.label_column)
    test = load_csv(cfg.test, cfg.label_column)
    source = load_csv(cfg.source, cfg.label_column) if cfg.source else None
    if source is not None and source.feature_names != target.feature_names:
        raise CLIError("feature-space mismatch between source and target")

    def evaluate(w, d, st, tt):
        aucs, recalls = [], []
        for r in range(cfg.repeat):
            tc = cfg.train_config(cfg.seed + r)
            model, _ = _run_workflow(w, source, target, st, d, tt, cfg.tgt_depth,
                                     tc, tc, cfg.revise_config(w))
            a, rc = _metrics_line(model, test, cfg.fraction)
            aucs.append(a)
            recalls.append(rc)
        return float(np.mean(aucs)), float(np.mean(recalls))

    bm1 = {}
    rows = []
    if out is not None:
        out.write("\t".join(GRID_HEADER) + "\n")
        out.flush()
    for w, d, st, tt in grid_cells(cfg):
        a, r = evaluate(w, d, st, tt)
        if w == "baseline1":
            bm1[tt] = (a, r)
        elif tt not in bm1:
            bm1[tt] = evaluate("baseline1", None, None, tt)
        ref_a, ref_r = bm1[tt]
        label = MODEL_PREFIX[w] + (f"-dep{d}-s{st}" if d is not None else "") + f"-t{tt}"
        row = (label, f"{a:.6f}", f"{r:.6f}", _lift(a, ref_a), _lift(r, ref_r),
               "" if d is None else str(d), "" if st is None else str(st), str(tt))
        rows.append(row)
        if out is not None:
            out.write("\t".join(row) + "\n")
            out.flush()
    return rows


def cmd_grid(args):
    cfg = ExperimentConfig.from_file(args.config)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            run_grid(cfg, fh)
    else:
        run_grid(cfg, sys.stdout)
    return 0


def cmd_predict(args):
    model = model_store.load(args.model)
    X, _ = read_features(args.data, model.feature_names, args.label_column)
    margin = model.predict_margin(X)
    prob = model.predict_prob(X)
    lines = ["prob,margin"] + [f"{p!r},{m!r}" for p, m in zip(prob.tolist(), margin.tolist())]
    text = "\n".join(lines) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_evaluate(args):
    model = model_store.load(args.model)
    X, y = read_features(args.data, model.feature_names, args.label_column)
    if y is None:
        raise CLIError(f"{args.data}: label column {args.label_column!r} not found")
    margin = model.predict_margin(X)
    print(f"auc\t{auc(margin, y):.6f}")
    print(f"top_recall@{args.fraction:g}\t{top_recall(margin, y, args.fraction):.6f}")
    return 0


def cmd_analyze(args):
    source = load_csv(args.source, args.label_column)
    target = load_csv(args.target, args.label_column)
    if source.feature_names != target.feature_names:
        raise CLIError("feature-space mismatch between source and target")
    report = drift_report(source, target, args.bins)
    text = report.to_json() if args.json else report.to_table()
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _floats(text):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def cmd_synth(args):
    opts = {}
    if args.config:
        opts.update(read_kv_file(args.config))
    for key in ("mode", "features", "scale", "offset", "noise_level", "flip_rate",
                "mixture_weights", "mixture_means", "mixture_sds", "n_features",
                "coefs", "intercept", "seed", "n_source", "n_target"):
        value = getattr(args, key)
        if value is not None:
            opts[key] = value
    unknown = set(opts) - {"mode", "features", "scale", "offset", "noise_level",
                           "flip_rate", "mixture_weights", "mixture_means",
                           "mixture_sds", "n_features", "coefs", "intercept", "seed",
                           "n_source", "n_target"}
    if unknown:
        raise CLIError(f"unknown synth options {sorted(unknown)}")
    seed = int(opts.get("seed", 0))
    gen_kw = {"seed": seed}
    if "n_features" in opts:
        gen_kw["n_features"] = int(opts["n_features"])
    if "coefs" in opts:
        gen_kw["coefs"] = _floats(opts["coefs"])
    if "intercept" in opts:
        gen_kw["intercept"] = float(opts["intercept"])
    spec = GeneratorSpec(**gen_kw)
    drifts = []
    modes = str(opts.get("mode", "")).split(",") if opts.get("mode") else []
    for mode in modes:
        mode = mode.strip()
        kw = {"mode": mode, "seed": seed}
        if "features" in opts:
            kw["features"] = tuple(_ints(opts["features"]))
        for key in ("scale", "offset", "noise_level", "flip_rate"):
            if key in opts:
                kw[key] = float(opts[key])
        for key in ("mixture_weights", "mixture_means", "mixture_sds"):
            if key in opts:
                kw[key] = _floats(opts[key])
        drifts.append(DriftSpec(**kw))
    source, target = synth_domain_pair(spec, drifts, int(opts.get("n_source", 10000)),
                                       int(opts.get("n_target", 10000)))
    write_csv(source, args.out_source)
    write_csv(target, args.out_target)
    return 0


# -- parser ------------------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--l2-reg", type=float, default=1.0)
    p.add_argument("--leaf-penalty", type=float, default=0.0)
    p.add_argument("--min-child-samples", type=int, default=1)
    p.add_argument("--min-split-gain", type=float, default=0.0)
    p.add_argument("--subsample", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-column", default="label")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tlboost", description="Gradient boosted trees with tree-revision transfer.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a boosted model on one CSV file")
    p.add_argument("--data", required=True)
    p.add_argument("--trees", type=int, required=True)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--init-model", help="continue from this model file")
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="run a transfer workflow between two domains")
    p.add_argument("--workflow", choices=WORKFLOWS, default="oneround")
    p.add_argument("--source")
    p.add_argument("--target", required=True)
    p.add_argument("--test")
    p.add_argument("--src-trees", type=int, default=10)
    p.add_argument("--src-depth", type=int, default=5)
    p.add_argument("--tgt-trees", type=int, default=40)
    p.add_argument("--tgt-depth", type=int, default=5)
    p.add_argument("--resplit", choices=("gain_based", "fractile", "off"),
                   default="gain_based")
    p.add_argument("--reweight", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--rare-policy", choices=("discount", "prune", "keep"),
                   default="discount")
    p.add_argument("--min-samples", type=int, default=30)
    p.add_argument("--discount", type=float, default=0.1)
    p.add_argument("--fraction", type=float, default=1e-4)
    p.add_argument("--exchange-via-file", action="store_true",
                   help="save and reload models between domain phases")
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="write the revise trace table here")
    p.add_argument("--report", help="write the metrics line here")
    _add_train_flags(p)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("grid", help="grid search over tree counts and depths")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("predict", help="write per-row probability and margin")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--label-column", default="label")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="print AUC and top-fraction recall")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--fraction", type=float, default=1e-4)
    p.add_argument("--label-column", default="label")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="feature drift report between two CSV files")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out")
    p.add_argument("--label-column", default="label")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="write a synthetic source/target CSV pair")
    p.add_argument("--config", help="flat key = value file with the options below")
    p.add_argument("--mode", help=f"comma list of drift modes from {DRIFT_MODES}")
    p.add_argument("--features", help="comma list of drifted feature indices")
    p.add_argument("--scale", type=float)
    p.add_argument("--offset", type=float)
    p.add_argument("--noise-level", type=float)
    p.add_argument("--flip-rate", type=float)
    p.add_argument("--mixture-weights")
    p.add_argument("--mixture-means")
    p.add_argument("--mixture-sds")
    p.add_argument("--n-features", type=int)
    p.add_argument("--coefs")
    p.add_argument("--intercept", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-source", type=int)
    p.add_argument("--n-target", type=int)
    p.add_argument("--out-source", required=True)
    p.add_argument("--out-target", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, DatasetError, ModelError, ReviseError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
