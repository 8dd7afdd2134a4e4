"""Command-line surface.

Subcommands cover the pipeline end to end: build the unified hierarchy,
train a model (unified, silo ensemble, or multi-head), evaluate under the
idealistic or realistic scheme, predict on raw mention files, and generate
synthetic benchmark corpora. Every command is driven by an INI config plus a
seed and writes its outputs, with a manifest, under one output directory;
reruns with the same config and seed are byte-identical.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import evaluation, synthbench
from .config import MODEL_KINDS, RunConfig, apply_overrides, load_run_config
from .ensembles import MultiHeadModel, SiloEnsemble, train_multihead, train_silo
from .errors import ConfigError, ParseError, UnitypeError
from .ingestion import (
    DatasetSource,
    SplitSet,
    MentionInstance,
    load_registry,
    merge_tests,
    pool_train,
)
from .oracle import LabelId, SpaceOracle
from .predictor import TrainingLog, UnifiedModel
from .taxonomy import (
    BuildResult,
    LabelMapping,
    UnifiedHierarchy,
    build_uhls,
    load_hierarchy,
    save_hierarchy,
)

PLACEHOLDER_GOLD = "__unlabeled__"


def _canonical_labels(sources: list[DatasetSource]) -> list[LabelId]:
    """Datasets in registration order, label names sorted within each."""
    return [
        LabelId(source.descriptor.name, name)
        for source in sources
        for name in sorted(source.descriptor.labels)
    ]


def _build_hierarchy(config: RunConfig, sources: list[DatasetSource]) -> BuildResult:
    config.require("oracle")
    oracle = SpaceOracle.from_file(config.oracle)
    seed_hierarchy = seed_mapping = None
    if config.seed_hierarchy is not None:
        config.require("seed_hierarchy")
        seed_hierarchy, seed_mapping = load_hierarchy(config.seed_hierarchy)
    return build_uhls(_canonical_labels(sources), oracle, seed_hierarchy, seed_mapping)


def _hierarchy_for_run(
    config: RunConfig, sources: list[DatasetSource]
) -> tuple[UnifiedHierarchy, LabelMapping, BuildResult | None]:
    if config.hierarchy is not None:
        config.require("hierarchy")
        hierarchy, mapping = load_hierarchy(config.hierarchy)
        return hierarchy, mapping, None
    result = _build_hierarchy(config, sources)
    return result.hierarchy, result.mapping, result


def _splits(sources: list[DatasetSource], seed: int) -> list[SplitSet]:
    return [source.load_splits(seed) for source in sources]


def _write_manifest(out: Path, command: str, config: RunConfig, outputs: list[Path]) -> None:
    lines = [f"COMMAND {command}", f"MODEL {config.model}", f"SEED {config.seed}"]
    lines += [f"OUTPUT {p.relative_to(out)}" for p in outputs]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_training_log(path: Path, log: TrainingLog) -> None:
    path.write_text("\n".join(log.to_lines()) + "\n", encoding="utf-8")


# -- subcommands -------------------------------------------------------------


def cmd_build_hierarchy(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    config.require("registry")
    sources = load_registry(config.registry)
    result = _build_hierarchy(config, sources)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    hierarchy_path = out / "hierarchy.txt"
    save_hierarchy(result.hierarchy, hierarchy_path, result.mapping)
    log_path = out / "build_log.txt"
    log_path.write_text("\n".join(result.log_lines()) + "\n", encoding="utf-8")
    _write_manifest(out, "build-hierarchy", config, [hierarchy_path, log_path])
    print(f"built hierarchy with {len(result.hierarchy) - 1} label nodes "
          f"({result.case2_count} labels mapped without new nodes) -> {hierarchy_path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    config.require("registry")
    sources = load_registry(config.registry)
    splitsets = _splits(sources, config.seed)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[Path] = []

    if config.model == "uhls":
        hierarchy, mapping, built = _hierarchy_for_run(config, sources)
        if built is not None:
            hierarchy_path = out / "hierarchy.txt"
            save_hierarchy(hierarchy, hierarchy_path, mapping)
            outputs.append(hierarchy_path)
        model = UnifiedModel.initialize(hierarchy, mapping, config.encoder, config.training)
        pooled = pool_train(splitsets)
        combined_val = [inst for s in splitsets for inst in s.validation]
        log = model.train(pooled, combined_val, config.training)
        checkpoint = out / "checkpoint.bin"
        model.save(checkpoint)
        log_path = out / "training_log.txt"
        _write_training_log(log_path, log)
        outputs += [checkpoint, log_path]
    elif config.model == "silo":
        bundle = [(s.descriptor, split) for s, split in zip(sources, splitsets)]
        ensemble, logs = train_silo(bundle, config.encoder, config.training)
        checkpoint = out / "checkpoint"
        ensemble.save(checkpoint)
        outputs.append(checkpoint / "manifest.txt")
        for name in sorted(logs):
            log_path = out / f"training_log_{name}.txt"
            _write_training_log(log_path, logs[name])
            outputs.append(log_path)
    else:  # multihead
        bundle = [(s.descriptor, split) for s, split in zip(sources, splitsets)]
        model, log = train_multihead(bundle, config.encoder, config.training)
        checkpoint = out / "checkpoint"
        model.save(checkpoint)
        log_path = out / "training_log.txt"
        _write_training_log(log_path, log)
        outputs += [checkpoint / "manifest.txt", log_path]

    _write_manifest(out, "train", config, outputs)
    print(f"trained {config.model} model -> {out}")
    return 0


def _load_model(checkpoint: Path):
    if checkpoint.is_dir():
        manifest = checkpoint / "manifest.txt"
        if not manifest.exists():
            raise ConfigError(f"{checkpoint} has no ensemble manifest")
        kind = None
        for line in manifest.read_text(encoding="utf-8").splitlines():
            if line.startswith("KIND "):
                kind = line.split()[1]
        if kind == "silo":
            return SiloEnsemble.load(checkpoint)
        if kind == "multihead":
            return MultiHeadModel.load(checkpoint)
        raise ConfigError(f"{manifest}: unknown ensemble kind {kind!r}")
    return UnifiedModel.load(checkpoint)


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    config.require("registry")
    checkpoint = Path(args.checkpoint)
    if not checkpoint.exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    model = _load_model(checkpoint)
    sources = load_registry(config.registry)
    merged = merge_tests(_splits(sources, config.seed))

    if isinstance(model, UnifiedModel):
        hierarchy, mapping = model.hierarchy, model.mapping
        if args.scheme == "realistic" and args.criterion != "direct":
            raise ConfigError("a single unified model only supports --criterion direct")
    else:
        hierarchy, mapping, _ = _hierarchy_for_run(config, sources)
        if args.scheme == "realistic" and args.criterion == "direct":
            raise ConfigError("ensembles need --criterion hcl or rhcl in the realistic scheme")

    if args.scheme == "idealistic":
        report = evaluation.evaluate_idealistic(model, merged, mapping, hierarchy)
    else:
        report = evaluation.evaluate_realistic(model, merged, mapping, hierarchy, args.criterion)

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = report.write(out, f"report_{args.scheme}_{args.criterion}")
    traces = [r.trace.to_line() for r in report.records if r.trace is not None]
    if traces:
        trace_path = out / f"traces_{args.scheme}_{args.criterion}.txt"
        trace_path.write_text("\n".join(traces) + "\n", encoding="utf-8")
        outputs.append(trace_path)
    _write_manifest(out, "evaluate", config, outputs)
    print("\n".join(report.table_lines()))
    return 0


def _read_prediction_inputs(path: Path) -> list[MentionInstance]:
    instances = []
    with path.open(encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                instances.append(MentionInstance(
                    tokens=tuple(str(t) for t in record["tokens"]),
                    start=int(record["start"]),
                    end=int(record["end"]),
                    gold=(PLACEHOLDER_GOLD,),
                    dataset=str(record.get("dataset", "<input>")),
                    instance_id=str(record.get("id", f"line-{line_no}")),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(str(path), line_no, f"bad mention record: {exc}") from exc
    return instances


def cmd_predict(args: argparse.Namespace) -> int:
    checkpoint = Path(args.checkpoint)
    input_path = Path(args.input)
    if not checkpoint.exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    if not input_path.exists():
        raise ConfigError(f"input file not found: {input_path}")
    model = _load_model(checkpoint)
    if not isinstance(model, UnifiedModel):
        raise ConfigError("predict needs a unified-model checkpoint file")
    lines = []
    for instance in _read_prediction_inputs(input_path):
        node, confidence = model.predict(instance)
        lines.append(json.dumps(
            {
                "id": instance.instance_id,
                "tokens": list(instance.tokens),
                "start": instance.start,
                "end": instance.end,
                "mention": instance.mention_text,
                "predicted": node,
                "confidence": confidence,
            },
            sort_keys=True,
            ensure_ascii=False,
        ))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    print(f"wrote {len(lines)} predictions -> {out}")
    return 0


def _parse_synth_spec(path: Path) -> synthbench.SynthSpec:
    from configparser import ConfigParser

    parser = ConfigParser()
    parser.read_string(path.read_text(encoding="utf-8"), source=str(path))
    if not parser.has_section("tree"):
        raise ConfigError(f"{path}: synth spec needs a [tree] section")
    parents = {
        node: (parent.strip() or None)
        for node, parent in parser["tree"].items()
    }
    datasets = []
    for section in parser.sections():
        if not section.startswith("dataset:"):
            continue
        opts = parser[section]
        datasets.append(synthbench.PseudoDataset(
            name=section.split(":", 1)[1],
            visible=tuple(v.strip() for v in opts["visible"].split(",") if v.strip()),
            instances_per_label=opts.getint("instances_per_label", fallback=200),
        ))
    noise = 0.0
    seed = 0
    if parser.has_section("synth"):
        noise = parser["synth"].getfloat("noise", fallback=0.0)
        seed = parser["synth"].getint("seed", fallback=0)
    return synthbench.SynthSpec(
        tree=synthbench.TrueTree.from_dict(parents),
        datasets=tuple(datasets),
        noise=noise,
        seed=seed,
    )


def cmd_synth(args: argparse.Namespace) -> int:
    if args.standard:
        spec = synthbench.standard_benchmark_spec(
            seed=args.seed if args.seed is not None else 7,
            instances_per_label=args.instances,
        )
    else:
        if args.spec is None:
            raise ConfigError("synth needs --spec FILE or --standard")
        spec = _parse_synth_spec(Path(args.spec))
        if args.seed is not None:
            spec = synthbench.SynthSpec(
                tree=spec.tree, datasets=spec.datasets, noise=spec.noise, seed=args.seed
            )
    bundle = synthbench.generate(spec, Path(args.out))
    print(f"generated {sum(len(v) for v in bundle.instances.values())} instances "
          f"across {len(spec.datasets)} datasets -> {bundle.out_dir}")
    return 0


def cmd_show_config(args: argparse.Namespace) -> int:
    config = load_run_config(args.config) if args.config else RunConfig()
    print("\n".join(config.to_lines()))
    return 0


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config)
    return apply_overrides(
        config,
        model=getattr(args, "model", None),
        seed=getattr(args, "seed", None),
        out=getattr(args, "out", None),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unitype",
        description="Unified hierarchical label spaces for entity typing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, with_model: bool = True) -> None:
        p.add_argument("--config", required=True, help="run config INI file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        if with_model:
            p.add_argument("--model", choices=MODEL_KINDS, help="override the model kind")

    p = sub.add_parser("build-hierarchy", help="merge all dataset labels into one hierarchy")
    add_common(p, with_model=False)
    p.set_defaults(func=cmd_build_hierarchy)

    p = sub.add_parser("train", help="train a model on the pooled datasets")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on the merged test corpus")
    add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file or ensemble directory")
    p.add_argument("--scheme", choices=("idealistic", "realistic"), required=True)
    p.add_argument("--criterion", choices=("hcl", "rhcl", "direct"), default="direct")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="label a mention file with a unified checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="mention-record JSON lines file")
    p.add_argument("--out", required=True, help="predictions output file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic benchmark corpus")
    p.add_argument("--spec", help="synthetic spec INI file")
    p.add_argument("--standard", action="store_true", help="use the standard benchmark spec")
    p.add_argument("--instances", type=int, default=200, help="instances per label (standard spec)")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("show-config", help="print the effective (or default) config")
    p.add_argument("--config", help="run config INI file")
    p.set_defaults(func=cmd_show_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except UnitypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
