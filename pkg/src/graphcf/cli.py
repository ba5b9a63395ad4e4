"""Command-line pipeline: synth, sample, train-clf, eval-clf, train-gen, generate, report.

Each command reads an optional JSON config (``--config``), applies flag
overrides, and writes its outputs plus a ``manifest_<command>.json`` holding
the effective configuration, seed and SHA-256 digests of every input.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import ModelConfig, NonFiniteLoss, TrainConfig, ClassifierModel, roc_auc, train
from .counterfactual import generate_all, read_result_records, result_from_record, write_results
from .dataset import DatasetError, load_dataset, write_dataset, write_pairs
from .generator import GeneratorConfig, GeneratorModel, LossWeights, Thresholds, train_generator
from .graph import GraphError
from .report import ReportError, emit_report, evaluate, summary_lines
from .sampler import (
    LabeledDataset,
    SamplingError,
    SplitIndices,
    WalkConfig,
    build_labeled_dataset,
    default_split_sizes,
)
from .synth import SynthConfig, generate_marketplace

log = logging.getLogger("graphcf")

CONFIG_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SAMPLE_DEFAULTS = {"k": 30, "n_pos": 1000, "n_neg": 1000, "splits": None, "max_retries_per_graph": 50, "seed": 0}
GENERATE_DEFAULTS = {"mode": "views_only", "tau_add": 0.9, "tau_rem": 0.05, "best_of": 1, "split": "test", "seed": 0}
CONFIG_SECTIONS = ("synth", "sample", "classifier", "generator", "generate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# config ---------------------------------------------------------------------

def load_config(path) -> dict:
    """Read a versioned JSON config; a missing path yields an empty config."""
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: invalid JSON config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise DatasetError(f"{path}: config must be a JSON object")
    version = cfg.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise DatasetError(f"{path}: unsupported config version {version} (expected {CONFIG_VERSION})")
    unknown = set(cfg) - set(CONFIG_SECTIONS) - {"version"}
    if unknown:
        raise DatasetError(f"{path}: unknown config sections {sorted(unknown)}")
    return cfg


def _section(dc_type, values: dict, where: str):
    names = {f.name for f in fields(dc_type)}
    unknown = set(values) - names
    if unknown:
        raise DatasetError(f"config {where}: unknown keys {sorted(unknown)}")
    values = dict(values)
    if "alpha" in values:
        values["alpha"] = tuple(values["alpha"])
    return dc_type(**values)


def _merge(base: dict, overrides: dict) -> dict:
    out = dict(base)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, config: dict, seed: int, inputs: dict, outputs) -> Path:
    manifest = {
        "command": command,
        "graphcf_version": __version__,
        "config_version": CONFIG_VERSION,
        "seed": seed,
        "config": config,
        "inputs": {name: {"path": str(p), "sha256": _digest(p)} for name, p in sorted(inputs.items())},
        "outputs": sorted(Path(p).name for p in outputs),
    }
    path = out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"missing {what}: {p}")
    return p


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_labeled(data_dir) -> tuple:
    data_dir = Path(data_dir)
    ds_path = _require(data_dir / "dataset.jsonl", "dataset")
    split_path = _require(data_dir / "splits.json", "split manifest")
    schema, graphs = load_dataset(ds_path)
    try:
        splits = SplitIndices.from_dict(json.loads(split_path.read_text(encoding="utf-8")))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{split_path}: malformed split manifest: {exc}") from exc
    n = len(graphs)
    for name, idx in (("train", splits.train), ("validation", splits.validation), ("test", splits.test)):
        if len(idx) and (min(idx) < 0 or max(idx) >= n):
            raise DatasetError(f"{split_path}: {name} indices out of range for {n} graphs")
    return schema, LabeledDataset(graphs, splits), {"dataset": ds_path, "splits": split_path}


def _mode(value: str) -> str:
    return value.replace("-", "_")


# commands -------------------------------------------------------------------

def cmd_synth(args, config) -> int:
    values = _merge(config.get("synth", {}), {"seed": args.seed, "num_users": args.num_users, "num_listings": args.num_listings})
    cfg = _section(SynthConfig, values, "synth")
    out = _out_dir(args.out)
    src = generate_marketplace(cfg)
    write_dataset([src], out / "source.jsonl")
    pairs = [(int(src.user_ids[u]), int(src.listing_ids[l])) for u, l in src.transaction_pairs]
    write_pairs(pairs, out / "transactions.csv")
    write_manifest(out, "synth", asdict(cfg), cfg.seed, {}, [out / "source.jsonl", out / "transactions.csv"])
    print(f"source graph: {src.num_users} users, {src.num_listings} listings, "
          f"edges {[len(e) for e in src.interactions]}, {len(pairs)} transactions")
    return EXIT_OK


def _parse_splits(text):
    if text is None:
        return None
    try:
        parts = [int(x) for x in text.split(",")]
    except ValueError as exc:
        raise UsageError(f"--splits expects two integers 'validation,test', got {text!r}") from exc
    if len(parts) != 2 or min(parts) < 0:
        raise UsageError(f"--splits expects two non-negative integers 'validation,test', got {text!r}")
    return parts


def cmd_sample(args, config) -> int:
    values = _merge(SAMPLE_DEFAULTS, config.get("sample", {}))
    values = _merge(values, {"k": args.k, "n_pos": args.n_pos, "n_neg": args.n_neg, "seed": args.seed,
                             "splits": _parse_splits(args.splits)})
    unknown = set(values) - set(SAMPLE_DEFAULTS)
    if unknown:
        raise DatasetError(f"config sample: unknown keys {sorted(unknown)}")
    src_path = _require(args.source, "source graph")
    _, graphs = load_dataset(src_path)
    if len(graphs) != 1:
        raise DatasetError(f"{src_path}: expected exactly one source graph, found {len(graphs)}")
    n_total = values["n_pos"] + values["n_neg"]
    splits = tuple(values["splits"]) if values["splits"] is not None else default_split_sizes(n_total)
    values["splits"] = list(splits)
    walk_cfg = WalkConfig(k=values["k"], seed=values["seed"])
    ds = build_labeled_dataset(graphs[0], values["n_pos"], values["n_neg"], walk_cfg, splits=splits,
                               max_retries_per_graph=values["max_retries_per_graph"])
    out = _out_dir(args.out)
    write_dataset(ds.graphs, out / "dataset.jsonl", schema=graphs[0].schema)
    (out / "splits.json").write_text(json.dumps(ds.splits.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(out, "sample", values, values["seed"], {"source": src_path}, [out / "dataset.jsonl", out / "splits.json"])
    print(f"{len(ds.graphs)} graphs; split sizes train/validation/test = {ds.splits.sizes()}")
    return EXIT_OK


def _classifier_configs(args, config):
    section = config.get("classifier", {})
    unknown = set(section) - {"model", "train"}
    if unknown:
        raise DatasetError(f"config classifier: unknown keys {sorted(unknown)}")
    model_cfg = _section(ModelConfig, section.get("model", {}), "classifier.model")
    train_values = _merge(section.get("train", {}), {"seed": args.seed, "epochs": getattr(args, "epochs", None),
                                                     "lr": getattr(args, "lr", None)})
    return model_cfg, _section(TrainConfig, train_values, "classifier.train")


def _auc_metrics(model, ds) -> dict:
    metrics = {}
    for name in ("train", "validation", "test"):
        graphs = ds.split(name)
        labels = np.array([g.label for g in graphs])
        if len(graphs) and 0 < labels.sum() < len(labels):
            metrics[f"{name}_auc"] = roc_auc(model.predict(graphs), labels)
        else:
            metrics[f"{name}_auc"] = None
    return metrics


def _print_metrics(metrics):
    for k, v in metrics.items():
        print(f"{k}: {'n/a' if v is None else f'{v:.5f}'}")


def cmd_train_clf(args, config) -> int:
    model_cfg, train_cfg = _classifier_configs(args, config)
    schema, ds, inputs = _load_labeled(args.data)
    model, tlog = train(ds.split("train"), ds.split("validation"), train_cfg, model_cfg, schema)
    out = _out_dir(args.out)
    model.save(out / "classifier.ckpt")
    tlog.write_csv(out / "train_log.csv")
    metrics = _auc_metrics(model, ds)
    metrics["best_epoch"] = tlog.best_epoch
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(out, "train-clf", {"model": asdict(model_cfg), "train": asdict(train_cfg)}, train_cfg.seed, inputs,
                   [out / "classifier.ckpt", out / "train_log.csv", out / "metrics.json"])
    _print_metrics({k: v for k, v in metrics.items() if k.endswith("auc")})
    return EXIT_OK


def cmd_eval_clf(args, config) -> int:
    schema, ds, inputs = _load_labeled(args.data)
    ckpt = _require(args.classifier, "classifier checkpoint")
    model = ClassifierModel.load(ckpt, schema)
    metrics = _auc_metrics(model, ds)
    out = _out_dir(args.out)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(out, "eval-clf", {}, args.seed if args.seed is not None else 0, {**inputs, "classifier": ckpt},
                   [out / "metrics.json"])
    _print_metrics(metrics)
    return EXIT_OK


def cmd_train_gen(args, config) -> int:
    section = config.get("generator", {})
    unknown = set(section) - {"config", "loss"}
    if unknown:
        raise DatasetError(f"config generator: unknown keys {sorted(unknown)}")
    gen_values = _merge(section.get("config", {}), {"seed": args.seed, "epochs": args.epochs,
                                                    "mode": _mode(args.mode) if args.mode else None})
    gen_cfg = _section(GeneratorConfig, gen_values, "generator.config")
    loss_values = _merge(section.get("loss", {}), {"gamma": args.gamma, "zeta": args.zeta, "beta": args.beta,
                                                   "eta": args.eta, "lam": args.lam})
    weights = _section(LossWeights, loss_values, "generator.loss")
    schema, ds, inputs = _load_labeled(args.data)
    ckpt = _require(args.classifier, "classifier checkpoint")
    clf = ClassifierModel.load(ckpt, schema)
    model, glog = train_generator(ds.split("train"), ds.split("validation"), clf, weights, gen_cfg)
    out = _out_dir(args.out)
    model.save(out / "generator.ckpt")
    glog.write_csv(out / "train_log.csv")
    write_manifest(out, "train-gen", {"config": asdict(gen_cfg), "loss": asdict(weights)}, gen_cfg.seed,
                   {**inputs, "classifier": ckpt}, [out / "generator.ckpt", out / "train_log.csv"])
    print(f"generator trained; best epoch {glog.best_epoch}")
    return EXIT_OK


def cmd_generate(args, config) -> int:
    values = _merge(GENERATE_DEFAULTS, config.get("generate", {}))
    values = _merge(values, {"mode": args.mode, "tau_add": args.tau_add, "tau_rem": args.tau_rem,
                             "best_of": args.best_of, "split": args.split, "seed": args.seed})
    unknown = set(values) - set(GENERATE_DEFAULTS)
    if unknown:
        raise DatasetError(f"config generate: unknown keys {sorted(unknown)}")
    values["mode"] = _mode(values["mode"])
    try:
        thresholds = Thresholds(values["tau_add"], values["tau_rem"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if values["best_of"] < 1:
        raise UsageError("--best-of must be >= 1")
    if values["split"] not in ("train", "validation", "test"):
        raise UsageError(f"--split must be train, validation or test, got {values['split']!r}")
    schema, ds, inputs = _load_labeled(args.data)
    clf_path = _require(args.classifier, "classifier checkpoint")
    gen_path = _require(args.generator, "generator checkpoint")
    clf = ClassifierModel.load(clf_path, schema)
    gen = GeneratorModel.load(gen_path, schema)
    graphs = ds.split(values["split"])
    results, baselines = generate_all(graphs, gen, clf, thresholds, values["mode"], values["seed"], values["best_of"])
    out = _out_dir(args.out)
    write_results(results, out / "counterfactuals.jsonl")
    write_results(baselines, out / "baseline.jsonl")
    weights = gen.loss_weights or LossWeights()
    config_out = {**values, "coefficients": list(weights.tuple4)}
    write_manifest(out, "generate", config_out, values["seed"],
                   {**inputs, "classifier": clf_path, "generator": gen_path},
                   [out / "counterfactuals.jsonl", out / "baseline.jsonl"])
    lifts = np.array([r.lift for r in results])
    print(f"{len(results)} counterfactuals ({values['mode']}); mean lift {lifts.mean() * 100:.2f}%")
    return EXIT_OK


def cmd_report(args, config) -> int:
    schema, ds, inputs = _load_labeled(args.data)
    res_dir = Path(args.results)
    cf_path = _require(res_dir / "counterfactuals.jsonl", "counterfactual results")
    base_path = _require(res_dir / "baseline.jsonl", "baseline results")
    gen_manifest = _require(res_dir / "manifest_generate.json", "generate manifest")
    meta = json.loads(gen_manifest.read_text(encoding="utf-8"))
    graphs = ds.split(meta["config"]["split"])
    cf_recs, base_recs = read_result_records(cf_path), read_result_records(base_path)
    if len(cf_recs) != len(graphs) or len(base_recs) != len(graphs):
        raise ReportError(f"result counts ({len(cf_recs)}, {len(base_recs)}) do not match the {len(graphs)}-graph split")
    try:
        results = [result_from_record(r, g) for r, g in zip(cf_recs, graphs)]
        baselines = [result_from_record(r, g) for r, g in zip(base_recs, graphs)]
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"malformed result record: {exc}") from exc
    report = evaluate(results, baselines, coefficients=tuple(meta["config"]["coefficients"]))
    out = _out_dir(args.out)
    paths = emit_report(report, out / "table.csv", name=args.name)
    write_manifest(out, "report", {"name": args.name, "source_config": meta["config"]},
                   args.seed if args.seed is not None else meta["seed"],
                   {**inputs, "counterfactuals": cf_path, "baseline": base_path, "generate_manifest": gen_manifest},
                   list(paths.values()))
    for line in summary_lines(report):
        print(line)
    return EXIT_OK


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphcf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"graphcf {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file (flags override its values)")
        p.add_argument("--seed", type=int, help="RNG seed for this step")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("synth", help="generate the synthetic source marketplace")
    common(p)
    p.add_argument("--num-users", type=int)
    p.add_argument("--num-listings", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="random-walk labeled subgraphs from a source graph")
    common(p)
    p.add_argument("--source", required=True, help="source.jsonl written by synth")
    p.add_argument("--k", type=int, help="walk node budget")
    p.add_argument("--n-pos", type=int)
    p.add_argument("--n-neg", type=int)
    p.add_argument("--splits", help="validation,test sizes (train gets the rest)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train-clf", help="train the transaction classifier")
    common(p)
    p.add_argument("--data", required=True, help="directory written by sample")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train_clf)

    p = sub.add_parser("eval-clf", help="train/validation/test ROC-AUC of a classifier checkpoint")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--classifier", required=True)
    p.set_defaults(func=cmd_eval_clf)

    p = sub.add_parser("train-gen", help="train the counterfactual graph generator")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--mode", choices=("unconstrained", "views-only"))
    p.add_argument("--epochs", type=int)
    for name in ("gamma", "zeta", "beta", "eta", "lam"):
        p.add_argument(f"--{name}", type=float)
    p.set_defaults(func=cmd_train_gen)

    p = sub.add_parser("generate", help="materialize counterfactuals and matched random baselines")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--generator", required=True)
    p.add_argument("--mode", choices=("unconstrained", "views-only"))
    p.add_argument("--tau-add", type=float)
    p.add_argument("--tau-rem", type=float)
    p.add_argument("--best-of", type=int)
    p.add_argument("--split", choices=("train", "validation", "test"))
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("report", help="summary table and lift histograms for a generate run")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--results", required=True, help="directory written by generate")
    p.add_argument("--name", help="experiment label for the table row")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"graphcf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except UsageError as exc:
        print(f"graphcf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLoss as exc:
        print(f"graphcf: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GraphError, DatasetError, SamplingError, ReportError, OSError, ValueError, KeyError) as exc:
        print(f"graphcf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
