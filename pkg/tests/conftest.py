"""Shared fixtures: small label-space fixtures and the session-wide synthetic
benchmark run reused by the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from unitype.encoder import EncoderConfig
from unitype.ensembles import SiloEnsemble, train_silo
from unitype.evaluation import EvaluationReport, evaluate_idealistic, evaluate_realistic
from unitype.hashing import derive_seed
from unitype.ingestion import DatasetDescriptor, SplitSet, merge_tests, pool_train, split_dataset
from unitype.oracle import SpaceOracle
from unitype.predictor import TrainingConfig, TrainingLog, UnifiedModel
from unitype.synthbench import (
    GeneratedBundle,
    PseudoDataset,
    SynthSpec,
    TrueTree,
    generate,
    standard_benchmark_spec,
)
from unitype.taxonomy import BuildResult, build_uhls

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


def twelve_label_spec() -> SynthSpec:
    """Three pseudo-datasets, twelve labels, exercising both merge cases."""
    tree = TrueTree.from_dict({
        "thing": None,
        "veh": "thing", "ani": "thing", "art": "thing",
        "veh_car": "veh", "veh_bike": "veh",
        "ani_cat": "ani", "ani_dog": "ani",
        "art_book": "art", "art_tool": "art",
    })
    return SynthSpec(
        tree=tree,
        datasets=(
            PseudoDataset("fine1", ("veh_car", "veh_bike", "ani", "art"), 0),
            PseudoDataset("fine2", ("ani_cat", "ani_dog", "veh", "art_book", "art_tool"), 0),
            PseudoDataset("coarse", ("veh", "ani", "art"), 0),
        ),
        seed=5,
    )


@pytest.fixture(scope="session")
def twelve_labels() -> SynthSpec:
    return twelve_label_spec()


@pytest.fixture(scope="session")
def twelve_label_oracle() -> SpaceOracle:
    return SpaceOracle.from_file(DATA_DIR / "twelve_label_oracle.txt")


SMALL_ENCODER = EncoderConfig(
    left_dim=8, right_dim=8, char_dim=8, token_hash_bits=10, char_hash_bits=6, seed=3
)


@dataclass
class BenchmarkRun:
    """Everything the acceptance criteria need from one full benchmark run."""

    bundle: GeneratedBundle
    build: BuildResult
    splits: list[SplitSet]
    descriptors: list[DatasetDescriptor]
    unified: UnifiedModel
    unified_log: TrainingLog
    silo: SiloEnsemble
    reports: dict[str, EvaluationReport]
    seconds: float


BENCH_SEED = 13
BENCH_ENCODER = EncoderConfig(seed=BENCH_SEED)
BENCH_TRAINING = TrainingConfig(epochs=30, seed=BENCH_SEED)


@pytest.fixture(scope="session")
def benchmark_run(tmp_path_factory) -> BenchmarkRun:
    """Generate the standard benchmark, train unified + silo models, and
    evaluate both schemes once for the whole session."""
    import time

    start = time.time()
    out = tmp_path_factory.mktemp("benchmark")
    spec = standard_benchmark_spec()
    bundle = generate(spec, out)
    build = build_uhls(spec.build_order(), bundle.oracle())

    splits, descriptors = [], []
    for ds in spec.datasets:
        splits.append(split_dataset(
            bundle.instances[ds.name], derive_seed(BENCH_SEED, f"split:{ds.name}")
        ))
        descriptors.append(DatasetDescriptor(
            ds.name, f"{ds.name}-domain", frozenset(ds.visible)
        ))

    unified = UnifiedModel.initialize(
        build.hierarchy, build.mapping, BENCH_ENCODER, BENCH_TRAINING
    )
    pooled = pool_train(splits)
    combined_val = [inst for s in splits for inst in s.validation]
    unified_log = unified.train(pooled, combined_val, BENCH_TRAINING)

    silo, _ = train_silo(list(zip(descriptors, splits)), BENCH_ENCODER, BENCH_TRAINING)

    merged = merge_tests(splits)
    h, m = build.hierarchy, build.mapping
    reports = {
        "uhls-idealistic": evaluate_idealistic(unified, merged, m, h),
        "uhls-realistic": evaluate_realistic(unified, merged, m, h, "direct"),
        "silo-idealistic": evaluate_idealistic(silo, merged, m, h),
        "silo-hcl": evaluate_realistic(silo, merged, m, h, "hcl"),
        "silo-rhcl": evaluate_realistic(silo, merged, m, h, "rhcl"),
    }
    return BenchmarkRun(
        bundle=bundle,
        build=build,
        splits=splits,
        descriptors=descriptors,
        unified=unified,
        unified_log=unified_log,
        silo=silo,
        reports=reports,
        seconds=time.time() - start,
    )
