"""Command line: ``ddstn {generate,train,eval,compare}``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import BimodalDataset, GenConfig, generate_synthetic, load_csv, make_fold_plan, save_csv
from .evaluation import EvalReport, Trainer, cross_validate, evaluate, roc_auc, write_roc_csv
from .exceptions import ConfigError, DataError
from .networks import image_backbone, load_checkpoint, save_checkpoint, vector_backbone
from .report import roc_svg, seed_summary, write_json, write_table
from .training import ALGORITHMS, ChannelSpecs, TrainConfig, coerce_specs, train, write_history

log = logging.getLogger("ddstn")

CONFIG_KEYS = {"dataset", "algorithms", "train", "backbone", "specs", "k", "seeds", "out"}


@dataclass
class ExperimentConfig:
    generate: GenConfig | None = field(default_factory=GenConfig)
    csv_path: str | None = None
    mode: str = "vector"
    algorithms: list[str] = field(default_factory=lambda: ["ddstn"])
    train: TrainConfig = field(default_factory=TrainConfig)
    backbone: dict = field(default_factory=dict)
    specs: dict | None = None
    k: int = 3
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "results"

    def to_dict(self) -> dict:
        dataset = (
            {"generate": self.generate.to_dict()}
            if self.generate is not None
            else {"csv": self.csv_path, "mode": self.mode}
        )
        train = self.train.to_dict()
        train.pop("seed")
        return {
            "dataset": dataset,
            "algorithms": list(self.algorithms),
            "train": train,
            "backbone": dict(self.backbone),
            "specs": self.specs,
            "k": self.k,
            "seeds": list(self.seeds),
            "out": self.out,
        }

    def load_dataset(self, seed: int | None = None) -> BimodalDataset:
        if self.generate is not None:
            cfg = self.generate
            if seed is not None:
                cfg = GenConfig(**{**cfg.to_dict(), "seed": seed})
            return generate_synthetic(cfg)
        return load_csv(self.csv_path, mode=self.mode)

    def channel_specs(self, ds: BimodalDataset) -> ChannelSpecs:
        if self.specs is not None:
            return coerce_specs(self.specs, ds)
        feature_dim = int(self.backbone.get("feature_dim", 32))
        if ds.mode == "image":
            layers = image_backbone(
                int(self.backbone.get("k", 3)), int(self.backbone.get("channels", 8)), feature_dim
            )
        else:
            layers = vector_backbone(int(self.backbone.get("hidden", 64)), feature_dim)
        return ChannelSpecs(layers, list(layers), ds.input_shape("source"), ds.input_shape("target"))


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document; ConfigError messages name the offending field."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    cfg = ExperimentConfig()
    dataset = doc.get("dataset", {"generate": {}})
    if "csv" in dataset:
        cfg.generate, cfg.csv_path = None, str(dataset["csv"])
        cfg.mode = dataset.get("mode", "vector")
        if cfg.mode not in ("vector", "image"):
            raise ConfigError(f"dataset.mode: must be 'vector' or 'image', got {cfg.mode!r}")
    elif "generate" in dataset:
        try:
            cfg.generate = GenConfig.from_dict(dataset["generate"] or {})
        except TypeError as exc:
            raise ConfigError(f"dataset.generate: {exc}") from exc
    else:
        raise ConfigError("dataset: expected a 'generate' or 'csv' entry")
    if "algorithms" in doc:
        algs = doc["algorithms"]
        if not isinstance(algs, list) or not algs:
            raise ConfigError("algorithms: must be a non-empty list")
        bad = [a for a in algs if a not in ALGORITHMS]
        if bad:
            raise ConfigError(f"algorithms: unknown algorithm(s) {bad}; expected {list(ALGORITHMS)}")
        if len(set(algs)) != len(algs):
            raise ConfigError("algorithms: duplicate entries")
        cfg.algorithms = list(algs)
    if "train" in doc:
        try:
            cfg.train = TrainConfig.from_dict(doc["train"])
        except TypeError as exc:
            raise ConfigError(f"train: {exc}") from exc
    cfg.backbone = dict(doc.get("backbone") or {})
    cfg.specs = doc.get("specs")
    k = doc.get("k", 3)
    if not isinstance(k, int) or isinstance(k, bool) or k < 2:
        raise ConfigError(f"k: must be an integer >= 2, got {k!r}")
    cfg.k = k
    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds: must be a non-empty list of integers")
    cfg.seeds = list(seeds)
    cfg.out = str(doc.get("out", "results"))
    return cfg


def load_config(args) -> ExperimentConfig:
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"--config: cannot read {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--config: invalid JSON ({exc})") from exc
    cfg = parse_config(doc)
    if getattr(args, "data", None):
        cfg.generate, cfg.csv_path = None, args.data
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seeds = [args.seed]
        if cfg.generate is not None:
            cfg.generate = GenConfig(**{**cfg.generate.to_dict(), "seed": args.seed})
    return cfg


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    return out


def cmd_generate(cfg: ExperimentConfig) -> int:
    if cfg.generate is None:
        raise ConfigError("dataset: generate needs a 'generate' dataset entry, not a CSV")
    ds = cfg.load_dataset()
    out = _out_dir(cfg.out) / "dataset.csv"
    save_csv(ds, out)
    n_pos = int((ds.y_p > 0).sum() + (ds.y_u > 0).sum())
    print(
        f"wrote {out}: {ds.n_paired} paired + {ds.n_unpaired} unpaired records "
        f"({n_pos} positive, {ds.n_paired + ds.n_unpaired - n_pos} negative)"
    )
    return 0


def cmd_train(cfg: ExperimentConfig, algorithm: str | None) -> int:
    algorithm = algorithm or cfg.algorithms[0]
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"--algorithm: unknown algorithm {algorithm!r}; expected {list(ALGORITHMS)}")
    ds = cfg.load_dataset()
    train_cfg = cfg.train.replace(seed=cfg.seeds[0])
    model = train(algorithm, ds, cfg.channel_specs(ds), train_cfg)
    out = _out_dir(cfg.out)
    save_checkpoint(
        out / "checkpoint.json", model.target, model.source,
        algorithm=algorithm, config=model.config, history=model.history,
    )
    write_history(model, out / "history.csv")
    last = model.history[-1] if model.history else float("nan")
    print(f"trained {algorithm} for {train_cfg.epochs} epochs (final loss {last:.6f}); wrote {out / 'checkpoint.json'}")
    return 0


def cmd_eval(cfg: ExperimentConfig, checkpoint: str) -> int:
    if not checkpoint:
        raise ConfigError("--checkpoint: required for eval")
    doc = load_checkpoint(checkpoint)
    ds = cfg.load_dataset()
    X = np.vstack([ds.X_tp, ds.X_tu])
    y = np.concatenate([ds.y_p, ds.y_u])
    result = evaluate(doc["target"], X, y, 0, [], ds.paired_ids + ds.unpaired_ids)
    report = EvalReport([result], doc.get("algorithm", ""), {"checkpoint": str(checkpoint)})
    out = _out_dir(cfg.out) / "report.json"
    out.write_text(report.to_json(), encoding="utf-8")
    m = result.metrics
    print(
        f"acc={m['acc']:.4f} sen={m['sen']:.4f} spe={m['spe']:.4f} yi={m['yi']:.4f} auc={result.auc:.4f}; wrote {out}"
    )
    return 0


def _run_job(cfg: ExperimentConfig, algorithm: str, seed: int) -> EvalReport:
    ds = cfg.load_dataset(seed)
    plan = make_fold_plan(ds, cfg.k, seed)
    trainer = Trainer(algorithm, cfg.channel_specs(ds), cfg.train.replace(seed=seed))
    fold = {"i": 0}

    def fit(train_ds):
        try:
            return trainer.fit(train_ds)
        except ConfigError:
            raise
        except Exception as exc:
            raise RuntimeError(f"training failed: algorithm {algorithm}, seed {seed}, fold {fold['i']}: {exc}") from exc
        finally:
            fold["i"] += 1

    report = cross_validate(ds, plan, fit)
    report.algorithm = algorithm
    report.extra = {
        "seed": seed,
        "paired_ids": list(ds.paired_ids),
        "plan": plan.to_dict(),
    }
    return report


def cmd_compare(cfg: ExperimentConfig, jobs: int = 1) -> int:
    out = _out_dir(cfg.out)
    keys = [(a, s) for a in cfg.algorithms for s in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_job, cfg, a, s) for a, s in keys]
            reports = [f.result() for f in futures]
    else:
        reports = []
        for a, s in keys:
            log.info("running %s seed %d", a, s)
            reports.append(_run_job(cfg, a, s))
    by_alg: dict[str, list[EvalReport]] = {a: [] for a in cfg.algorithms}
    for (a, _), r in zip(keys, reports):
        by_alg[a].append(r)

    summaries = {a: seed_summary(rs) for a, rs in by_alg.items()}
    write_table(out / "table1.csv", summaries)

    curves = {}
    for a, rs in by_alg.items():
        scores = np.concatenate([f.scores for r in rs for f in r.folds])
        labels = np.concatenate([f.labels for r in rs for f in r.folds])
        curves[a] = roc_auc(scores, labels)
        write_roc_csv(curves[a], out / f"roc_{a}.csv")
    (out / "roc.svg").write_text(roc_svg(curves), encoding="utf-8")

    manifest = {
        "config": {k: v for k, v in cfg.to_dict().items() if k != "out"},
        "seeds": list(cfg.seeds),
        "runs": [
            {
                "algorithm": a,
                "seed": s,
                "paired_ids": r.extra["paired_ids"],
                "folds": [
                    {"fold": f.fold, "test_ids": list(f.test_ids), "train_unpaired_ids": list(f.train_ids)}
                    for f in r.folds
                ],
            }
            for (a, s), r in zip(keys, reports)
        ],
    }
    write_json(out / "manifest.json", manifest)
    write_json(
        out / "results.json",
        {
            a: {
                "pooled_auc": curves[a].auc,
                "per_seed": [
                    {"seed": r.extra["seed"], "folds": [f.to_dict() for f in r.folds], "aggregate": r.aggregate}
                    for r in rs
                ],
            }
            for a, rs in by_alg.items()
        },
    )
    for a, summary in summaries.items():
        acc, sd = summary["acc"]
        print(f"{a:>13}: ACC {100 * acc:.2f}±{100 * sd:.2f}  pooled AUC {curves[a].auc:.3f}")
    print(f"wrote {out / 'table1.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddstn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="single seed (overrides config 'seeds')")
        return p

    common(sub.add_parser("generate", help="write a synthetic dataset CSV"))
    p = common(sub.add_parser("train", help="train one algorithm on the full dataset"))
    p.add_argument("--algorithm", help=f"one of {', '.join(ALGORITHMS)}")
    p.add_argument("--data", help="dataset CSV (overrides config dataset)")
    p = common(sub.add_parser("eval", help="evaluate a checkpoint on a dataset CSV"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset CSV (overrides config dataset)")
    p = common(sub.add_parser("compare", help="cross-validate several algorithms over seeds"))
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.algorithm)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        return cmd_compare(cfg, args.jobs)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
