"""Command-line workflow: synthesize data, build taxonomies, inject noise,
train, evaluate, run the ablation grid and inspect confidences.

Every command writes ``<command>.manifest.json`` next to its outputs with
the resolved configuration and SHA-256 digests of all inputs and outputs.
Exit codes: 0 success, 1 invalid input or usage, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import functools
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .confidence import ThresholdStrategy
from .data import (
    FeatureDataset,
    file_digest,
    read_category_map,
    read_dataset,
    read_semantic_table,
    read_topk,
    write_category_map,
    write_dataset,
    write_semantic_table,
    write_topk,
)
from .evaluation import export_histogram, nmi, noisy_identification, recall_at_k, summarize
from .losses import proxy_nca_per_sample
from .model import TrainConfig, TrainingDiverged, benchmark_config, load_checkpoint, save_checkpoint, train
from .noise import NoiseManifest, NoiseModel, NoiseSpec, audit, corrupt
from .numerics import DomainError
from .synth import SynthSpec, generate
from .taxonomy import build_hierarchy, read_lexical_graph, read_taxonomy, write_taxonomy

log = logging.getLogger("procsim")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; we reserve 2 for runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict
    inputs: dict
    outputs: dict
    wall_time: float
    version: str = __version__

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=1, sort_keys=True)
            fh.write("\n")


@dataclass
class _Run:
    """What a command reports back for its manifest."""

    out_dir: Path
    config: dict
    inputs: list
    outputs: list


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DomainError(f"{path}: invalid JSON ({exc})") from None


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---- synth ----------------------------------------------------------------


def cmd_synth(args) -> _Run:
    spec = SynthSpec(
        superclass_count=args.superclasses,
        classes_per_superclass=args.classes_per_superclass,
        samples_per_class=args.samples_per_class,
        feature_dim=args.dim,
        superclass_spread=args.superclass_spread,
        class_spread=args.class_spread,
        noise_std=args.noise_std,
        seed=args.seed,
        train_classes_per_superclass=args.train_classes_per_superclass,
        top_k=args.top_k,
        signal_dim=args.signal_dim or None,
        nuisance_std=args.nuisance_std,
    )
    data = generate(spec)
    out = _out_dir(args.out)
    paths = {
        "train": out / "train.jsonl",
        "test": out / "test.jsonl",
        "taxonomy": out / "taxonomy.json",
        "semantic_table": out / "semantic_table.csv",
        "train_topk": out / "train_topk.jsonl",
        "test_topk": out / "test_topk.jsonl",
        "categories": out / "categories.csv",
        "class_names": out / "class_names.txt",
        "train_config": out / "train_config.json",
    }
    write_dataset(data.train, paths["train"])
    write_dataset(data.test, paths["test"])
    write_taxonomy(data.taxonomy, paths["taxonomy"])
    write_semantic_table(data.semantic_table, paths["semantic_table"])
    write_topk(data.train.ids, data.train_topk, paths["train_topk"])
    write_topk(data.test.ids, data.test_topk, paths["test_topk"])
    write_category_map(data.categories, paths["categories"])
    names = {**data.train.class_names, **data.test.class_names}
    paths["class_names"].write_text("".join(names[c] + "\n" for c in sorted(names)), encoding="utf-8")
    _dump_json(benchmark_config(seed=args.seed).to_dict(), paths["train_config"])
    log.info("wrote %d train / %d test samples to %s", len(data.train), len(data.test), out)
    return _Run(out, {"synth": spec.to_dict()}, [], list(paths.values()))


# ---- build-taxonomy -------------------------------------------------------


def _read_class_names(path) -> list[str]:
    p = Path(path)
    if p.suffix == ".json":
        names = _load_json(p)
        if not isinstance(names, list):
            raise DomainError(f"{path}: expected a JSON list of class names")
        return [str(n) for n in names]
    return [ln.strip() for ln in p.read_text(encoding="utf-8").splitlines() if ln.strip()]


def cmd_build_taxonomy(args) -> _Run:
    names = _read_class_names(args.classes)
    graph = read_lexical_graph(args.graph, args.senses)
    overrides = _load_json(args.overrides) if args.overrides else None
    tax = build_hierarchy(names, graph, args.root, overrides)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_taxonomy(tax, out)
    inputs = [args.classes, args.graph, args.senses] + ([args.overrides] if args.overrides else [])
    return _Run(out.parent, {"root": args.root, "classes": len(names)}, inputs, [out])


# ---- inject-noise ---------------------------------------------------------


def cmd_inject_noise(args) -> _Run:
    ds = read_dataset(args.dataset)
    taxonomy = read_taxonomy(args.taxonomy) if args.taxonomy else None
    categories = read_category_map(args.categories) if args.categories else None
    spec = NoiseSpec(NoiseModel(args.model), args.p, args.seed, taxonomy, categories)
    noisy, manifest = corrupt(ds, spec)
    report = audit(manifest, spec.model, taxonomy, categories, strict=True)
    out = _out_dir(args.out)
    paths = [out / "dataset.jsonl", out / "noise_manifest.jsonl", out / "noise_audit.json"]
    write_dataset(noisy, paths[0])
    manifest.to_jsonl(paths[1])
    _dump_json(report, paths[2])
    log.info("corrupted %d of %d labels (rate %.4f)", report["corrupted"], report["samples"], report["rate"])
    inputs = [args.dataset] + [p for p in (args.taxonomy, args.categories) if p]
    return _Run(out, {"noise": spec.echo()}, inputs, paths)


# ---- train ----------------------------------------------------------------

_TRAIN_FLAGS = {
    "method": ("method",),
    "seed": ("seed",),
    "epochs": ("epochs",),
    "learning_rate": ("learning_rate",),
    "proxy_learning_rate": ("proxy_learning_rate",),
    "classes_per_batch": ("classes_per_batch",),
    "samples_per_class": ("samples_per_class",),
    "strategy": ("confidence", "strategy"),
    "lam": ("confidence", "lam"),
    "omega": ("loss", "omega"),
    "temperature": ("loss", "temperature"),
    "proxy_scale": ("loss", "proxy_scale"),
}


def resolve_train_config(config_path=None, overrides: dict | None = None) -> TrainConfig:
    """File values (strictly checked) overlaid by non-None flag overrides."""
    d = _load_json(config_path) if config_path else {}
    if not isinstance(d, dict):
        raise DomainError(f"{config_path}: expected a JSON object")
    TrainConfig.from_dict(d, strict=True)  # reject unknown keys up front
    return TrainConfig.from_dict(_apply_overrides(d, overrides or {}), strict=True)


def _apply_overrides(d: dict, overrides: dict) -> dict:
    """Set flat override names (see ``_TRAIN_FLAGS``) on a nested config dict."""
    d = json.loads(json.dumps(d))
    for flag, value in overrides.items():
        if value is None:
            continue
        if flag not in _TRAIN_FLAGS:
            raise DomainError(f"unknown training override {flag!r}")
        keys = _TRAIN_FLAGS[flag]
        target = d
        for k in keys[:-1]:
            target = target.setdefault(k, {})
        target[keys[-1]] = value
    return d


def _aligned_topk(ds: FeatureDataset, path) -> np.ndarray:
    table = read_topk(path)
    missing = [sid for sid in ds.ids if sid not in table]
    if missing:
        raise DomainError(f"{path}: no top-k entry for {len(missing)} samples (first: {missing[0]})")
    return np.array([table[sid] for sid in ds.ids], dtype=np.int64)


def _aligned_flags(ds: FeatureDataset, path) -> np.ndarray:
    man = NoiseManifest.from_jsonl(path)
    flags = dict(zip(man.ids, man.corrupted))
    missing = [sid for sid in ds.ids if sid not in flags]
    if missing:
        raise DomainError(f"{path}: manifest lacks {len(missing)} dataset ids (first: {missing[0]})")
    return np.array([flags[sid] for sid in ds.ids], dtype=bool)


def cmd_train(args) -> _Run:
    overrides = {k: getattr(args, k) for k in _TRAIN_FLAGS}
    cfg = resolve_train_config(args.config, overrides)
    ds = read_dataset(args.dataset)
    table = read_semantic_table(args.semantic_table)
    topk = _aligned_topk(ds, args.topk) if args.topk else None
    flags = _aligned_flags(ds, args.manifest) if args.manifest else None
    out = _out_dir(args.out)
    try:
        result = train(ds, cfg, table, topk, flags, record_samples=not args.no_sample_records)
    except TrainingDiverged as exc:
        _dump_json(exc.record, out / "diverged.json")
        raise
    paths = [out / "checkpoint.json", out / "history.jsonl"]
    save_checkpoint(paths[0], result.embedder, result.proxies, cfg)
    result.history.to_jsonl(paths[1])
    last = result.history.records[-1]
    log.info("trained %d iterations, final objective %.4f", len(result.history), last["objective"])
    inputs = [args.dataset, args.semantic_table] + [p for p in (args.config, args.topk, args.manifest) if p]
    return _Run(out, {"train": cfg.to_dict()}, inputs, paths)


# ---- eval -----------------------------------------------------------------


def _parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(k) for k in text.split(",") if k.strip())
    except ValueError:
        raise DomainError(f"--ks expects comma-separated integers, got {text!r}") from None
    if not ks:
        raise DomainError("--ks is empty")
    return ks


def evaluate(embedder, proxies, cfg: TrainConfig, ds: FeatureDataset, ks, train_ds=None, flags=None) -> dict:
    """Retrieval (clean labels) and NMI on ``ds``; identification on ``train_ds`` when flags are given."""
    emb = embedder(ds.features)
    report = {
        "retrieval": recall_at_k(emb, ds.clean_labels, ks=ks).to_dict(),
        "nmi": nmi(emb, ds.clean_labels).value,
    }
    if flags is not None:
        tr = train_ds if train_ds is not None else ds
        e = embedder(tr.features)
        losses, _, _ = proxy_nca_per_sample(
            e,
            proxies.rows(tr.observed_labels),
            proxies.vectors,
            cfg.loss.proxy_scale,
            cfg.loss.include_target_in_denominator,
        )
        report["identification"] = noisy_identification(losses, flags).to_dict()
    return report


def cmd_eval(args) -> _Run:
    embedder, proxies, cfg = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.dataset)
    ks = _parse_ks(args.ks)
    train_ds = read_dataset(args.train_dataset) if args.train_dataset else None
    flags = None
    if args.manifest:
        flags = _aligned_flags(train_ds if train_ds is not None else ds, args.manifest)
    report = evaluate(embedder, proxies, cfg, ds, ks, train_ds, flags)
    out = _out_dir(args.out)
    path = out / "report.json"
    _dump_json(report, path)
    r = report["retrieval"]["recall_at"]
    print(" ".join(f"R@{k}={v:.4f}" for k, v in r.items()) + f" NMI={report['nmi']:.4f}")
    inputs = [args.checkpoint, args.dataset] + [p for p in (args.manifest, args.train_dataset) if p]
    return _Run(out, {"ks": list(ks)}, inputs, [path])


# ---- ablate ---------------------------------------------------------------

_GRID_KEYS = {"synth", "strategies", "noise_models", "p", "baselines", "train", "noise_seed", "train_seeds"}


@dataclass(frozen=True)
class AblationGrid:
    synth: SynthSpec
    strategies: tuple[str, ...]
    noise_models: tuple[str, ...]
    p: tuple[float, ...]
    baselines: tuple[str, ...] = ()
    train: tuple = ()
    noise_seed: int = 1
    train_seeds: tuple[int, ...] = (0,)

    @classmethod
    def from_dict(cls, d: dict) -> "AblationGrid":
        unknown = set(d) - _GRID_KEYS
        if unknown:
            raise DomainError(f"unknown grid keys: {sorted(unknown)}")
        synth_keys = {f.name for f in fields(SynthSpec)}
        bad = set(d.get("synth", {})) - synth_keys
        if bad:
            raise DomainError(f"unknown synth keys: {sorted(bad)}")
        strategies = tuple(ThresholdStrategy(s).value for s in d.get("strategies", ["otsu"]))
        models = tuple(NoiseModel(m).value for m in d.get("noise_models", ["uniform"]))
        if "category" in models:
            raise DomainError("the ablation grid supports uniform and semantic noise")
        ps = tuple(float(p) for p in d.get("p", [0.0]))
        baselines = tuple(d.get("baselines", []))
        if set(baselines) - {"ms"}:
            raise DomainError("only 'ms' is available as a baseline")
        train_over = d.get("train", {})
        fixed = {"method", "seed", "strategy"} & set(train_over)
        if fixed:
            raise DomainError(f"grid 'train' may not set {sorted(fixed)}; they are grid axes")
        _cell_config("procsim", "otsu", 0, train_over)  # validates the overrides
        return cls(
            SynthSpec(**d.get("synth", {})),
            strategies,
            models,
            ps,
            baselines,
            tuple(sorted(train_over.items())),
            int(d.get("noise_seed", 1)),
            tuple(int(s) for s in d.get("train_seeds", [0])),
        )

    def columns(self) -> list[tuple[str, float]]:
        """``("clean", 0)`` once if requested, then every (model, p > 0) pair."""
        cols = [("clean", 0.0)] if any(p == 0.0 for p in self.p) else []
        cols += [(m, p) for m in self.noise_models for p in self.p if p > 0.0]
        return cols

    def rows(self) -> list[tuple[str, str]]:
        return [(b, "-") for b in self.baselines] + [("procsim", s) for s in self.strategies]


def _cell_config(method, strategy, seed, overrides) -> TrainConfig:
    base = benchmark_config(method=method, strategy=strategy, seed=seed).to_dict()
    return TrainConfig.from_dict(_apply_overrides(base, overrides), strict=True)


@functools.lru_cache(maxsize=4)
def _synth_cached(spec: SynthSpec):
    return generate(spec)


def _ablation_cell(job) -> float:
    grid, (method, strategy), (model, p), seed = job
    data = _synth_cached(grid.synth)
    spec = NoiseSpec(NoiseModel("uniform" if model == "clean" else model), p, grid.noise_seed, data.taxonomy)
    noisy, _ = corrupt(data.train, spec)
    cfg = _cell_config(method, strategy if strategy != "-" else "otsu", seed, dict(grid.train))
    res = train(noisy, cfg, data.semantic_table, data.train_topk, record_samples=False)
    return recall_at_k(res.embedder(data.test.features), data.test.clean_labels, ks=(1,)).recall_at[1]


def run_ablation(grid: AblationGrid, jobs: int = 1) -> dict:
    """Recall@1 on the held-out classes for every (row, column) cell, averaged over train seeds."""
    cells = [(r, c, s) for r in grid.rows() for c in grid.columns() for s in grid.train_seeds]
    work = [(grid, r, c, s) for r, c, s in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_ablation_cell, work))
    else:
        values = [_ablation_cell(w) for w in work]
    acc: dict = {}
    for (r, c, _), v in zip(cells, values):
        acc.setdefault((r, c), []).append(v)
    table = []
    for r in grid.rows():
        row = {"method": r[0], "strategy": r[1]}
        corrupted = []
        for c in grid.columns():
            v = float(np.mean(acc[(r, c)]))
            row[_col_name(c)] = v
            if c[0] != "clean":
                corrupted.append(v)
        if corrupted:
            row["hmean_noisy"] = float(len(corrupted) / sum(1.0 / max(v, 1e-12) for v in corrupted))
        table.append(row)
    return {"columns": [_col_name(c) for c in grid.columns()], "rows": table}


def _col_name(col) -> str:
    model, p = col
    return "clean" if model == "clean" else f"{model}@{p:g}"


def format_table(result: dict) -> str:
    cols = result["columns"] + (["hmean_noisy"] if result["rows"] and "hmean_noisy" in result["rows"][0] else [])
    head = "| method | strategy | " + " | ".join(cols) + " |"
    sep = "|" + "---|" * (len(cols) + 2)
    lines = [head, sep]
    for row in result["rows"]:
        vals = " | ".join(f"{100 * row[c]:.1f}" for c in cols)
        lines.append(f"| {row['method']} | {row['strategy']} | {vals} |")
    return "\n".join(lines)


def cmd_ablate(args) -> _Run:
    raw = _load_json(args.grid)
    if not isinstance(raw, dict):
        raise DomainError(f"{args.grid}: expected a JSON object")
    grid = AblationGrid.from_dict(raw)
    result = run_ablation(grid, jobs=args.jobs)
    out = _out_dir(args.out)
    paths = [out / "ablation.json", out / "ablation.md"]
    _dump_json(result, paths[0])
    text = format_table(result)
    paths[1].write_text(text + "\n", encoding="utf-8")
    print(text)
    return _Run(out, {"grid": raw}, [args.grid], paths)


# ---- analyze-confidence ---------------------------------------------------


def cmd_analyze_confidence(args) -> _Run:
    with open(args.history, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records:
        raise DomainError(f"{args.history}: empty history")
    window = records[-args.last :] if args.last else records
    if "sigma" not in window[0]:
        raise DomainError(f"{args.history}: history lacks per-sample records (trained with --no-sample-records?)")
    sigma = np.concatenate([r["sigma"] for r in window])
    proxy = np.concatenate([r["proxy_losses"] for r in window])
    out = _out_dir(args.out)
    outputs = []
    groups = {"all": np.ones(sigma.size, dtype=bool)}
    if "corrupted" in window[0]:
        noisy = np.concatenate([r["corrupted"] for r in window]).astype(bool)
        groups.update(clean=~noisy, noisy=noisy)
    # shared ranges keep the clean and noisy histograms comparable bin by bin
    ranges = {"sigma": (0.0, 1.0), "proxy_loss": (float(proxy.min()), float(max(proxy.max(), proxy.min() + 1e-12)))}
    summary = {"iterations": len(window), "samples": int(sigma.size)}
    for name, values in (("sigma", sigma), ("proxy_loss", proxy)):
        for group, mask in groups.items():
            path = out / f"{name}_hist_{group}.csv"
            export_histogram(values[mask], args.bins, path, ranges[name])
            outputs.append(path)
            summary[f"{name}_{group}"] = summarize(values[mask])
    for key in ("ident_recall_proxy", "ident_recall_dml"):
        vals = [r[key] for r in window if key in r]
        if vals:
            summary[f"mean_{key}"] = float(np.mean(vals))
    path = out / "confidence_summary.json"
    _dump_json(summary, path)
    outputs.append(path)
    return _Run(out, {"bins": args.bins, "last": args.last}, [args.history], outputs)


# ---- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="procsim", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = SynthSpec()
    p = sub.add_parser("synth", help="generate the hierarchical Gaussian benchmark")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--superclasses", type=int, default=d.superclass_count)
    p.add_argument("--classes-per-superclass", type=int, default=d.classes_per_superclass)
    p.add_argument("--samples-per-class", type=int, default=d.samples_per_class)
    p.add_argument("--dim", type=int, default=d.feature_dim, help="feature dimension")
    p.add_argument("--superclass-spread", type=float, default=d.superclass_spread)
    p.add_argument("--class-spread", type=float, default=d.class_spread)
    p.add_argument("--noise-std", type=float, default=d.noise_std)
    p.add_argument("--signal-dim", type=int, default=d.signal_dim, help="0 = use every coordinate")
    p.add_argument("--nuisance-std", type=float, default=d.nuisance_std)
    p.add_argument("--train-classes-per-superclass", type=int, default=d.train_classes_per_superclass)
    p.add_argument("--top-k", type=int, default=d.top_k, help="predicted classes kept per sample")
    p.add_argument("--seed", type=int, default=d.seed)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-taxonomy", help="build a class hierarchy from a hypernym graph")
    p.add_argument("--classes", required=True, help="class names, one per line (or a JSON list)")
    p.add_argument("--graph", required=True, help="TSV of child<TAB>hypernym edges")
    p.add_argument("--senses", required=True, help="JSON {class name: [concepts]}")
    p.add_argument("--root", required=True, help="concept every class must reach")
    p.add_argument("--overrides", help="JSON {class name: forced hypernym}")
    p.add_argument("--out", default="taxonomy.json", help="output taxonomy file")
    p.set_defaults(func=cmd_build_taxonomy)

    p = sub.add_parser("inject-noise", help="corrupt dataset labels offline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", required=True, choices=[m.value for m in NoiseModel])
    p.add_argument("--p", type=float, required=True, help="corruption probability")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--taxonomy", help="taxonomy JSON (semantic noise)")
    p.add_argument("--categories", help="class_id,category CSV (category noise)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_inject_noise)

    p = sub.add_parser("train", help="train an embedder on (possibly noisy) labels")
    p.add_argument("--dataset", required=True)
    p.add_argument("--semantic-table", required=True, help="class_id,e1..em CSV")
    p.add_argument("--config", help="TrainConfig JSON; flags below override it")
    p.add_argument("--topk", help="per-sample predicted classes (needed when omega > 0)")
    p.add_argument("--manifest", help="noise manifest, only used to monitor identification")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--method", choices=["procsim", "ms"])
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--proxy-learning-rate", type=float)
    p.add_argument("--classes-per-batch", type=int)
    p.add_argument("--samples-per-class", type=int)
    p.add_argument("--strategy", choices=[s.value for s in ThresholdStrategy])
    p.add_argument("--lam", type=float, help="confidence regularization lambda")
    p.add_argument("--omega", type=float, help="semantic regularizer weight")
    p.add_argument("--temperature", type=float)
    p.add_argument("--proxy-scale", type=float)
    p.add_argument("--no-sample-records", action="store_true", help="omit per-sample values from the history")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval and noise-identification metrics")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="query/gallery set (clean labels are used)")
    p.add_argument("--ks", default="1,2,4,8")
    p.add_argument("--manifest", help="noise manifest; adds an identification report")
    p.add_argument("--train-dataset", help="noisy training set scored for identification")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="Recall@1 over strategies x noise models x noise rates")
    p.add_argument("--grid", required=True, help="grid JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze-confidence", help="confidence and proxy-loss histograms from a history")
    p.add_argument("--history", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--last", type=int, default=100, help="iterations to include (0 = all)")
    p.set_defaults(func=cmd_analyze_confidence)
    return parser


def _digests(paths) -> dict:
    return {str(p): file_digest(p) for p in paths}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    start = time.perf_counter()
    try:
        run = args.func(args)
        manifest = RunManifest(
            command=args.command,
            argv=argv,
            config=run.config,
            inputs=_digests(run.inputs),
            outputs=_digests(run.outputs),
            wall_time=time.perf_counter() - start,
        )
        manifest.write(run.out_dir / f"{args.command}.manifest.json")
    except (DomainError, FileNotFoundError, IsADirectoryError, KeyError, TypeError) as exc:
        print(f"procsim {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"procsim {args.command}: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
