"""Synthetic multi-dataset corpora with a known ground-truth label tree.

Every generated bundle carries its own answer key: the oracle file is
derived exactly from the true tree, the expected merged hierarchy comes from
an independent reference that replays the merge rules with literal leaf-set
arithmetic (no assertion closure involved), and a truth table records each
instance's true fine label.

Mention token patterns encode the true fine label with a distinctive
repeated letter, shared across datasets, so fine-grained identity is
learnable even from coarsely annotated datasets. Context tokens come from
disjoint per-dataset vocabularies, giving each pseudo-dataset a domain of
its own; models trained on one domain see unknown context everywhere else.
Label noise flips an instance's gold annotation to another visible label.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .hashing import derive_seed
from .ingestion import MentionInstance, mention_record
from .oracle import LabelId, SpaceOracle
from .taxonomy import (
    ROOT_ID,
    LabelMapping,
    UnifiedHierarchy,
    hierarchy_to_lines,
)

_LETTERS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
_VOCAB_SIZE = 30
_TOP = "<everything-else>"  # keeps the synthetic root strictly larger than any label


@dataclass(frozen=True)
class TrueTree:
    """Ground-truth label tree: node name -> parent name (root maps to None)."""

    parents: tuple[tuple[str, str | None], ...]

    @classmethod
    def from_dict(cls, parents: dict[str, str | None]) -> "TrueTree":
        return cls(tuple(sorted(parents.items())))

    def __post_init__(self):
        parents = dict(self.parents)
        roots = [n for n, p in parents.items() if p is None]
        if len(roots) != 1:
            raise InvalidSpec(f"true tree must have exactly one root, found {roots}")
        for node, parent in parents.items():
            if parent is not None and parent not in parents:
                raise InvalidSpec(f"node {node} has unknown parent {parent}")
        # acyclicity: every chain must reach the root
        for node in parents:
            seen = set()
            cur = node
            while cur is not None:
                if cur in seen:
                    raise InvalidSpec(f"cycle in true tree at {cur}")
                seen.add(cur)
                cur = parents[cur]

    @property
    def root(self) -> str:
        return next(n for n, p in self.parents if p is None)

    def nodes(self) -> tuple[str, ...]:
        return tuple(sorted(n for n, _ in self.parents))

    def children(self, node: str) -> tuple[str, ...]:
        return tuple(sorted(n for n, p in self.parents if p == node))

    def leaves(self) -> tuple[str, ...]:
        return tuple(n for n in self.nodes() if not self.children(n))

    def leaves_under(self, node: str) -> frozenset[str]:
        kids = self.children(node)
        if not kids:
            return frozenset([node])
        out: set[str] = set()
        for kid in kids:
            out |= self.leaves_under(kid)
        return frozenset(out)

    @classmethod
    def regular(cls, depth: int, branching: int, stem: str = "n") -> "TrueTree":
        """A complete tree of the given depth and branching factor."""
        if depth < 1 or branching < 1:
            raise InvalidSpec("depth and branching must be positive")
        parents: dict[str, str | None] = {stem: None}
        frontier = [stem]
        for _ in range(depth):
            next_frontier = []
            for node in frontier:
                for i in range(branching):
                    child = f"{node}{_LETTERS[i]}"
                    parents[child] = node
                    next_frontier.append(child)
            frontier = next_frontier
        return cls.from_dict(parents)


@dataclass(frozen=True)
class PseudoDataset:
    """One synthetic dataset: which true nodes it can see, and how much data."""

    name: str
    visible: tuple[str, ...]
    instances_per_label: int = 200


@dataclass(frozen=True)
class SynthSpec:
    tree: TrueTree
    datasets: tuple[PseudoDataset, ...]
    noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.noise < 0.5):
            raise InvalidSpec(f"noise rate {self.noise} outside [0, 0.5)")
        if not self.datasets:
            raise InvalidSpec("need at least one pseudo-dataset")
        if len({d.name for d in self.datasets}) != len(self.datasets):
            raise InvalidSpec("dataset names must be unique")
        if len(self.tree.leaves()) > len(_LETTERS):
            raise InvalidSpec(f"at most {len(_LETTERS)} true leaves supported")
        nodes = set(self.tree.nodes())
        for ds in self.datasets:
            if not ds.visible:
                raise InvalidSpec(f"dataset {ds.name} sees no labels")
            if ds.instances_per_label < 0:
                raise InvalidSpec(f"dataset {ds.name} has negative instance count")
            unknown = set(ds.visible) - nodes
            if unknown:
                raise InvalidSpec(f"dataset {ds.name} sees unknown nodes {sorted(unknown)}")
            spaces = [self.tree.leaves_under(v) for v in ds.visible]
            for i in range(len(spaces)):
                for j in range(i + 1, len(spaces)):
                    if spaces[i] & spaces[j]:
                        raise InvalidSpec(
                            f"dataset {ds.name}: labels {ds.visible[i]} and "
                            f"{ds.visible[j]} overlap; visible labels must form "
                            f"an antichain"
                        )

    def label_spaces(self) -> dict[LabelId, frozenset[str]]:
        return {
            LabelId(ds.name, v): self.tree.leaves_under(v)
            for ds in self.datasets
            for v in ds.visible
        }

    def build_order(self) -> list[LabelId]:
        """Datasets in declaration order, label names sorted within each."""
        return [
            LabelId(ds.name, v)
            for ds in self.datasets
            for v in sorted(ds.visible)
        ]


# -- oracle emission -----------------------------------------------------------


def oracle_lines(spec: SynthSpec) -> list[str]:
    """Assertion file derived exactly from the true tree."""
    spaces = spec.label_spaces()
    by_space: dict[frozenset[str], list[LabelId]] = {}
    for label, space in spaces.items():
        by_space.setdefault(space, []).append(label)
    canon: dict[frozenset[str], LabelId] = {
        space: min(labels, key=LabelId.qualified) for space, labels in by_space.items()
    }

    lines = [f"LABEL {label}" for label in sorted(spaces, key=LabelId.qualified)]
    for space, labels in sorted(by_space.items(), key=lambda kv: canon[kv[0]].qualified()):
        rep = canon[space]
        for other in sorted(labels, key=LabelId.qualified):
            if other != rep:
                lines.append(f"EQUAL {other} {rep}")

    reps = sorted(canon.items(), key=lambda kv: kv[1].qualified())
    for i, (space_a, rep_a) in enumerate(reps):
        for space_b, rep_b in reps[i + 1:]:
            if space_a < space_b:
                lines.append(f"SUBSUMES {rep_b} {rep_a}")
            elif space_b < space_a:
                lines.append(f"SUBSUMES {rep_a} {rep_b}")
            elif not (space_a & space_b):
                lines.append(f"DISJOINT {rep_a} {rep_b}")

    for space, rep in reps:
        true_node = _true_node_for_space(spec.tree, space)
        if true_node is None:
            continue
        parts = _decompose(spec.tree, true_node, canon)
        if parts:
            joined = " + ".join(str(p) for p in parts)
            lines.append(f"EQUALS_UNION {rep} = {joined}")
    return lines


def _true_node_for_space(tree: TrueTree, space: frozenset[str]) -> str | None:
    for node in tree.nodes():
        if tree.leaves_under(node) == space:
            return node
    return None


def _decompose(
    tree: TrueTree, node: str, canon: dict[frozenset[str], LabelId]
) -> list[LabelId] | None:
    """Split a node's leaf space into labeled parts along true children."""
    parts: list[LabelId] = []
    for child in tree.children(node):
        child_space = tree.leaves_under(child)
        if child_space == tree.leaves_under(node):
            return _decompose(tree, child, canon)  # unary chain
        label = canon.get(child_space)
        if label is not None:
            parts.append(label)
            continue
        sub = _decompose(tree, child, canon)
        if sub is None:
            return None
        parts.extend(sub)
    return parts if len(parts) >= 2 else None


# -- independent reference construction ---------------------------------------


def reference_build(spec: SynthSpec) -> tuple[UnifiedHierarchy, LabelMapping, dict[str, frozenset[str]]]:
    """Replay the merge rules with literal leaf-set arithmetic.

    This is the answer key for the assertion-driven builder: same processing
    order, but every label-space decision is a plain set comparison against
    the ground truth. Returns the expected hierarchy, label mapping, and the
    leaf space of every created node.
    """
    spaces = spec.label_spaces()
    root_space = frozenset(spec.tree.leaves()) | {_TOP}
    node_space: dict[str, frozenset[str]] = {ROOT_ID: root_space}
    parent: dict[str, str] = {}
    origin: dict[str, LabelId] = {}
    phi: dict[LabelId, tuple[str, ...]] = {}

    def children_of(node: str) -> list[str]:
        return [n for n, p in parent.items() if p == node]

    def subtree_of(node: str) -> set[str]:
        out: set[str] = set()
        stack = children_of(node)
        while stack:
            n = stack.pop()
            out.add(n)
            stack.extend(children_of(n))
        return out

    for y in spec.build_order():
        sy = spaces[y]
        inside = {n for n, s in node_space.items() if s < sy}
        equal = [n for n, s in node_space.items() if s == sy]
        covered = frozenset().union(*[node_space[n] for n in inside]) if inside else frozenset()
        if equal:
            phi[y] = (equal[0],)
            continue
        if covered == sy:
            maximal = [
                n for n in inside
                if not any(node_space[n] < node_space[m] for m in inside if m != n)
            ]
            phi[y] = tuple(sorted(maximal))
            continue
        # new node under the smallest strictly containing space
        above = [n for n, s in node_space.items() if sy < s]
        v = min(above, key=lambda n: (len(node_space[n]), n))
        node_id = y.qualified()
        node_space[node_id] = sy
        origin[node_id] = y
        parent[node_id] = v
        for x in children_of(v):
            if x != node_id and node_space[x] < sy:
                parent[x] = node_id
        in_subtree = subtree_of(node_id)
        extra = [
            n for n in node_space
            if n not in (node_id, ROOT_ID)
            and node_space[n] < sy
            and n not in in_subtree
        ]
        phi[y] = tuple(sorted([node_id, *extra]))

    hierarchy = UnifiedHierarchy()
    pending = sorted(parent.items())
    while pending:
        rest = []
        for node_id, parent_id in pending:
            if parent_id in hierarchy:
                hierarchy.add_node(node_id, origin[node_id], parent_id)
            else:
                rest.append((node_id, parent_id))
        pending = rest
    mapping = LabelMapping({label: nodes for label, nodes in phi.items()})
    node_space.pop(ROOT_ID)
    return hierarchy, mapping, {n: s for n, s in node_space.items()}


# -- corpus generation -----------------------------------------------------


@dataclass
class GeneratedBundle:
    spec: SynthSpec
    out_dir: Path
    oracle_path: Path
    registry_path: Path
    golden_path: Path
    truth_path: Path
    data_paths: dict[str, Path]
    instances: dict[str, list[MentionInstance]]
    truth: dict[str, str]  # instance id -> true leaf name
    expected_hierarchy: UnifiedHierarchy
    expected_mapping: LabelMapping
    node_for_true: dict[str, str] = field(default_factory=dict)

    def oracle(self) -> SpaceOracle:
        return SpaceOracle.from_file(self.oracle_path)


def mention_forms(leaf_index: int) -> tuple[str, ...]:
    """Surface forms of one true leaf: its letter repeated 3 to 5 times."""
    letter = _LETTERS[leaf_index]
    return tuple(letter * n for n in (3, 4, 5))


def generate(spec: SynthSpec, out_dir: str | Path) -> GeneratedBundle:
    """Write dataset files, oracle, registry, expected-hierarchy golden file
    and the instance truth table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    leaves = sorted(spec.tree.leaves())
    letter_of = {leaf: i for i, leaf in enumerate(leaves)}

    instances: dict[str, list[MentionInstance]] = {}
    truth: dict[str, str] = {}
    data_paths: dict[str, Path] = {}
    for ds in spec.datasets:
        rng = np.random.default_rng(derive_seed(spec.seed, f"synth:{ds.name}"))
        rows: list[MentionInstance] = []
        serial = 0
        for visible in sorted(ds.visible):
            pool = sorted(spec.tree.leaves_under(visible))
            for _ in range(ds.instances_per_label):
                leaf = pool[int(rng.integers(len(pool)))]
                forms = mention_forms(letter_of[leaf])
                mention = forms[int(rng.integers(len(forms)))]
                left = [
                    f"{ds.name}w{int(rng.integers(_VOCAB_SIZE))}"
                    for _ in range(2 + int(rng.integers(3)))
                ]
                right = [
                    f"{ds.name}w{int(rng.integers(_VOCAB_SIZE))}"
                    for _ in range(2 + int(rng.integers(3)))
                ]
                gold = visible
                if spec.noise > 0 and rng.random() < spec.noise:
                    others = [v for v in sorted(ds.visible) if v != visible]
                    if others:
                        gold = others[int(rng.integers(len(others)))]
                instance_id = f"{ds.name}-{serial:05d}"
                serial += 1
                rows.append(MentionInstance(
                    tokens=tuple([*left, mention, *right]),
                    start=len(left),
                    end=len(left) + 1,
                    gold=(gold,),
                    dataset=ds.name,
                    instance_id=instance_id,
                ))
                truth[instance_id] = leaf
        instances[ds.name] = rows
        path = out_dir / f"{ds.name}.jsonl"
        path.write_text("".join(mention_record(r) + "\n" for r in rows), encoding="utf-8")
        data_paths[ds.name] = path

    oracle_path = out_dir / "oracle.txt"
    oracle_path.write_text("\n".join(oracle_lines(spec)) + "\n", encoding="utf-8")

    registry_lines = []
    for ds in spec.datasets:
        registry_lines += [
            f"[{ds.name}]",
            f"domain = {ds.name}-domain",
            "format = mention-record",
            "multi_label = false",
            f"labels = {', '.join(sorted(ds.visible))}",
            f"data = {ds.name}.jsonl",
            "",
        ]
    registry_path = out_dir / "registry.ini"
    registry_path.write_text("\n".join(registry_lines), encoding="utf-8")

    expected_hierarchy, expected_mapping, node_spaces = reference_build(spec)
    golden_path = out_dir / "expected_hierarchy.txt"
    golden_path.write_text(
        "\n".join(hierarchy_to_lines(expected_hierarchy, expected_mapping)) + "\n",
        encoding="utf-8",
    )

    truth_path = out_dir / "truth.tsv"
    truth_path.write_text(
        "".join(f"{iid}\t{leaf}\n" for iid, leaf in sorted(truth.items())),
        encoding="utf-8",
    )

    node_for_true = {}
    for node_id, space in node_spaces.items():
        true_node = _true_node_for_space(spec.tree, space)
        if true_node is not None:
            node_for_true[true_node] = node_id

    return GeneratedBundle(
        spec=spec,
        out_dir=out_dir,
        oracle_path=oracle_path,
        registry_path=registry_path,
        golden_path=golden_path,
        truth_path=truth_path,
        data_paths=data_paths,
        instances=instances,
        truth=truth,
        expected_hierarchy=expected_hierarchy,
        expected_mapping=expected_mapping,
        node_for_true=node_for_true,
    )


def standard_benchmark_spec(seed: int = 7, instances_per_label: int = 200) -> SynthSpec:
    """The benchmark used by the acceptance suite and the demo script.

    Three domain-shifted pseudo-datasets over one nine-leaf tree: a coarse
    dataset covering everything with three top-level labels (so its few-way
    head stays confident everywhere), and two fine datasets with
    complementary views. Label noise defaults to 5 percent.
    """
    tree = TrueTree.from_dict({
        "thing": None,
        "alpha": "thing", "bravo": "thing", "charlie": "thing",
        "alpha_one": "alpha", "alpha_two": "alpha", "alpha_three": "alpha",
        "bravo_one": "bravo", "bravo_two": "bravo", "bravo_three": "bravo",
        "charlie_one": "charlie", "charlie_two": "charlie", "charlie_three": "charlie",
    })
    per = instances_per_label
    return SynthSpec(
        tree=tree,
        datasets=(
            PseudoDataset("coarse", ("alpha", "bravo", "charlie"), 2 * per),
            PseudoDataset("finealpha", ("alpha_one", "alpha_two", "alpha_three", "bravo"), per),
            PseudoDataset(
                "finerest",
                ("bravo_one", "bravo_two", "bravo_three",
                 "charlie_one", "charlie_two", "charlie_three"),
                per,
            ),
        ),
        noise=0.05,
        seed=seed,
    )


def random_spec(seed: int, max_nodes: int = 25, max_datasets: int = 4) -> SynthSpec:
    """A random ground-truth tree and random antichain views, for the
    merge-equivalence acceptance check. Instance counts are zero; only the
    label structure matters there."""
    rng = np.random.default_rng(seed)
    n_nodes = int(rng.integers(3, max_nodes + 1))
    names = [f"t{i:02d}" for i in range(n_nodes)]
    parents: dict[str, str | None] = {names[0]: None}
    for i in range(1, n_nodes):
        parents[names[i]] = names[int(rng.integers(i))]
    tree = TrueTree.from_dict(parents)
    if len(tree.leaves()) > len(_LETTERS):
        raise InvalidSpec("random tree exceeded the leaf budget")

    datasets = []
    n_datasets = int(rng.integers(1, max_datasets + 1))
    for d in range(n_datasets):
        # random frontier: start at the root, randomly expand internal nodes
        frontier = [tree.root]
        done: list[str] = []
        while frontier:
            node = frontier.pop()
            kids = tree.children(node)
            if kids and rng.random() < 0.6:
                frontier.extend(kids)
            else:
                done.append(node)
        keep = [n for n in sorted(done) if rng.random() < 0.8] or sorted(done)[:1]
        datasets.append(PseudoDataset(f"ds{d}", tuple(keep), instances_per_label=0))
    return SynthSpec(tree=tree, datasets=tuple(datasets), noise=0.0, seed=seed)
