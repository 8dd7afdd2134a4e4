#!/usr/bin/env python3
"""Run the standard synthetic benchmark end to end and print the comparison.

Generates three domain-shifted pseudo-datasets with a known ground-truth
tree, merges their label sets into one hierarchy, trains the unified model
plus silo and multi-head baselines, and scores everything under both
evaluation schemes. Finishes with a fine-grained prediction histogram on the
coarse dataset's test split, whose instances carry only coarse gold labels
but have pattern-determined fine identities.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from unitype.encoder import EncoderConfig
from unitype.ensembles import train_multihead, train_silo
from unitype.evaluation import (
    RuleTag,
    evaluate_idealistic,
    evaluate_realistic,
    fine_grained_eval,
)
from unitype.hashing import derive_seed
from unitype.ingestion import DatasetDescriptor, merge_tests, pool_train, split_dataset
from unitype.predictor import TrainingConfig, UnifiedModel
from unitype.synthbench import generate, standard_benchmark_spec
from unitype.taxonomy import build_uhls, save_hierarchy


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/benchmark", help="output directory")
    parser.add_argument("--seed", type=int, default=13)
    parser.add_argument("--instances", type=int, default=200, help="instances per label")
    parser.add_argument("--epochs", type=int, default=30)
    args = parser.parse_args()

    started = time.time()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    spec = standard_benchmark_spec(seed=args.seed, instances_per_label=args.instances)
    bundle = generate(spec, out / "corpus")
    print(f"generated {sum(len(v) for v in bundle.instances.values())} instances "
          f"across {len(spec.datasets)} pseudo-datasets")

    build = build_uhls(spec.build_order(), bundle.oracle())
    save_hierarchy(build.hierarchy, out / "hierarchy.txt", build.mapping)
    print(f"merged {sum(len(ds.visible) for ds in spec.datasets)} labels into "
          f"{len(build.hierarchy) - 1} hierarchy nodes "
          f"({build.case2_count} mapped onto existing nodes)")

    splits, descriptors = [], []
    for ds in spec.datasets:
        splits.append(split_dataset(
            bundle.instances[ds.name], derive_seed(args.seed, f"split:{ds.name}")
        ))
        descriptors.append(DatasetDescriptor(ds.name, f"{ds.name}-domain", frozenset(ds.visible)))

    encoder_config = EncoderConfig(seed=args.seed)
    training = TrainingConfig(epochs=args.epochs, seed=args.seed)

    unified = UnifiedModel.initialize(build.hierarchy, build.mapping, encoder_config, training)
    pooled = pool_train(splits)
    combined_val = [inst for s in splits for inst in s.validation]
    log = unified.train(pooled, combined_val, training)
    unified.save(out / "unified.ckpt")
    print(f"unified model: best validation {log.best_metric:.4f} at epoch {log.best_epoch}")

    bundle_pairs = list(zip(descriptors, splits))
    silo, _ = train_silo(bundle_pairs, encoder_config, training)
    multihead, mh_log = train_multihead(bundle_pairs, encoder_config, training)
    print(f"baselines trained (multi-head best validation {mh_log.best_metric:.4f})")

    merged = merge_tests(splits)
    h, m = build.hierarchy, build.mapping
    rows = [
        ("uhls (idealistic)", evaluate_idealistic(unified, merged, m, h)),
        ("uhls (realistic, direct)", evaluate_realistic(unified, merged, m, h, "direct")),
        ("silo (idealistic)", evaluate_idealistic(silo, merged, m, h)),
        ("silo (realistic, hcl)", evaluate_realistic(silo, merged, m, h, "hcl")),
        ("silo (realistic, rhcl)", evaluate_realistic(silo, merged, m, h, "rhcl")),
        ("multihead (idealistic)", evaluate_idealistic(multihead, merged, m, h)),
        ("multihead (realistic, hcl)", evaluate_realistic(multihead, merged, m, h, "hcl")),
        ("multihead (realistic, rhcl)", evaluate_realistic(multihead, merged, m, h, "rhcl")),
    ]
    print()
    print(f"{'model / scheme':36s} micro-F1   exact  fine-under-coarse")
    for name, rep in rows:
        exact = rep.rule_counts[RuleTag.EXACT]
        fine = rep.rule_counts[RuleTag.FINE_UNDER_COARSE]
        print(f"{name:36s} {rep.micro_f1:8.4f}   {exact:5d}  {fine:17d}")
        rep.write(out, name.replace(" ", "_").replace("/", "-").strip("()"))

    # fine-grained histogram on the coarse dataset: its gold labels are
    # coarse, but every mention pattern identifies a true fine label
    coarse_test = splits[0].test
    annotated = [
        (inst, bundle.node_for_true[bundle.truth[inst.instance_id]])
        for inst in coarse_test
    ]
    targets = sorted({node for _, node in annotated})
    histograms = fine_grained_eval(unified, annotated, targets)
    print("\nfine-grained predictions on the coarse dataset's test split:")
    for target in targets:
        buckets = histograms[target]
        total = sum(buckets.values())
        if not total:
            continue
        top = max(sorted(buckets), key=buckets.get)
        print(f"  true {target:24s} support {total:4d}  ->  "
              f"{top} x{buckets[top]} ({buckets[top]/total:.0%})")

    print(f"\ndone in {time.time() - started:.1f}s; reports under {out}/")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
