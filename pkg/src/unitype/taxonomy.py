"""Unified label hierarchy construction and queries.

Pools the labels of many datasets into a single tree. Each incoming label
either becomes a new node under the smallest node whose space strictly
contains it (with children re-parented beneath it when it subsumes them), or,
when existing nodes already cover its space exactly, is mapped onto that node
set without growing the tree. Because the result is restricted to a tree,
labels whose space also contains nodes on other branches pick those nodes up
as extra mapping targets instead of extra edges.

The finished hierarchy and mapping are treated as immutable; construction is
single-threaded and order-deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import EmptyCandidateSet, ParseError, UnknownLabel, UnknownNode
from .oracle import LabelId, Relation, SpaceOracle

logger = logging.getLogger(__name__)

ROOT_ID = "<root>"


class UnifiedHierarchy:
    """A rooted tree of label nodes.

    Node ids are qualified ``dataset:label`` strings for nodes created by a
    dataset label, plus the synthetic root. Every non-root node has exactly
    one parent; the root strictly subsumes every label space by fiat.
    """

    def __init__(self):
        self._origin: dict[str, LabelId | None] = {ROOT_ID: None}
        self._parent: dict[str, str] = {}
        self._children: dict[str, set[str]] = {ROOT_ID: set()}

    # -- mutation (used by the builder only) -------------------------------

    def add_node(self, node_id: str, origin: LabelId | None, parent_id: str) -> None:
        if node_id in self._origin:
            raise ValueError(f"node {node_id} already exists")
        if parent_id not in self._origin:
            raise UnknownNode(f"parent {parent_id} does not exist")
        self._origin[node_id] = origin
        self._parent[node_id] = parent_id
        self._children[node_id] = set()
        self._children[parent_id].add(node_id)

    def reparent(self, node_id: str, new_parent: str) -> None:
        if node_id == ROOT_ID:
            raise ValueError("cannot reparent the root")
        old = self._parent[node_id]
        self._children[old].discard(node_id)
        self._parent[node_id] = new_parent
        self._children[new_parent].add(node_id)

    # -- queries ------------------------------------------------------------

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._origin

    def __len__(self) -> int:
        return len(self._origin)

    def origin(self, node_id: str) -> LabelId | None:
        self._require(node_id)
        return self._origin[node_id]

    def parent(self, node_id: str) -> str | None:
        self._require(node_id)
        return self._parent.get(node_id)

    def children(self, node_id: str) -> tuple[str, ...]:
        self._require(node_id)
        return tuple(sorted(self._children[node_id]))

    def node_ids(self) -> tuple[str, ...]:
        """All node ids, root first, then sorted."""
        rest = sorted(n for n in self._origin if n != ROOT_ID)
        return (ROOT_ID, *rest)

    def non_root_ids(self) -> tuple[str, ...]:
        """Canonical node order used for classifier columns and tie breaks."""
        return tuple(sorted(n for n in self._origin if n != ROOT_ID))

    def subtree(self, node_id: str) -> frozenset[str]:
        """All strict descendants of ``node_id`` (the node itself excluded)."""
        self._require(node_id)
        out: set[str] = set()
        stack = list(self._children[node_id])
        while stack:
            n = stack.pop()
            out.add(n)
            stack.extend(self._children[n])
        return frozenset(out)

    def ancestors(self, node_id: str, include_root: bool = False) -> tuple[str, ...]:
        """Parent chain from immediate parent upward."""
        self._require(node_id)
        chain: list[str] = []
        cur = self._parent.get(node_id)
        while cur is not None:
            if cur != ROOT_ID or include_root:
                chain.append(cur)
            cur = self._parent.get(cur)
        return tuple(chain)

    def copy(self) -> "UnifiedHierarchy":
        dup = UnifiedHierarchy()
        dup._origin = dict(self._origin)
        dup._parent = dict(self._parent)
        dup._children = {k: set(v) for k, v in self._children.items()}
        return dup

    def validate(self) -> None:
        """Check the tree invariants by full traversal."""
        seen = set()
        stack = [ROOT_ID]
        while stack:
            n = stack.pop()
            if n in seen:
                raise ValueError(f"cycle through {n}")
            seen.add(n)
            stack.extend(self._children[n])
        if seen != set(self._origin):
            unreachable = sorted(set(self._origin) - seen)
            raise ValueError(f"nodes unreachable from root: {unreachable}")
        for n in self._origin:
            if n != ROOT_ID and n not in self._parent:
                raise ValueError(f"non-root node {n} has no parent")

    def _require(self, node_id: str) -> None:
        if node_id not in self._origin:
            raise UnknownNode(f"node {node_id} does not exist in the hierarchy")


class LabelMapping:
    """Total map from dataset labels to non-empty sets of hierarchy nodes."""

    def __init__(self, entries: Mapping[LabelId, Iterable[str]] | None = None):
        self._entries: dict[LabelId, tuple[str, ...]] = {}
        if entries:
            for label, nodes in entries.items():
                self.set(label, nodes)

    def set(self, label: LabelId, nodes: Iterable[str]) -> None:
        nodes = tuple(sorted(set(nodes)))
        if not nodes:
            raise ValueError(f"mapping for {label} must be non-empty")
        self._entries[label] = nodes

    def __contains__(self, label: LabelId) -> bool:
        return label in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def labels(self) -> tuple[LabelId, ...]:
        return tuple(sorted(self._entries, key=LabelId.qualified))

    def nodes_for(self, label: LabelId) -> tuple[str, ...]:
        try:
            return self._entries[label]
        except KeyError:
            raise UnknownLabel(f"no mapping entry for label {label}") from None

    def items(self):
        return ((lab, self._entries[lab]) for lab in self.labels())


@dataclass(frozen=True)
class BuildEvent:
    """One line of the build log: which case fired for one label."""

    index: int
    label: LabelId
    case: str  # "case1" | "case2"
    parent: str | None = None
    mapped: tuple[str, ...] = ()
    reparented: tuple[str, ...] = ()
    extra_mappings: tuple[str, ...] = ()
    tie_warning: str | None = None

    def to_line(self) -> str:
        parts = [f"{self.index:04d}", str(self.label), self.case.upper()]
        if self.case == "case1":
            parts.append(f"parent={self.parent}")
            if self.reparented:
                parts.append("reparented=" + ",".join(self.reparented))
            if self.extra_mappings:
                parts.append("extra_mappings=" + ",".join(self.extra_mappings))
        else:
            parts.append("mapped=" + ",".join(self.mapped))
        if self.tie_warning:
            parts.append(f"tie={self.tie_warning}")
        return " ".join(parts)


@dataclass
class BuildResult:
    hierarchy: UnifiedHierarchy
    mapping: LabelMapping
    events: list[BuildEvent] = field(default_factory=list)

    @property
    def case2_count(self) -> int:
        return sum(1 for e in self.events if e.case == "case2")

    def log_lines(self) -> list[str]:
        return [e.to_line() for e in self.events]


class _Builder:
    """Sequential single-mutator construction state."""

    def __init__(
        self,
        oracle: SpaceOracle,
        seed: UnifiedHierarchy | None,
        seed_mapping: LabelMapping | None,
    ):
        self.oracle = oracle
        self.hierarchy = seed.copy() if seed is not None else UnifiedHierarchy()
        self.mapping = LabelMapping()
        if seed_mapping is not None:
            for label, nodes in seed_mapping.items():
                self.mapping.set(label, nodes)
        # One node per oracle equality class, used for exact-cover resolution.
        self.node_of_class: dict[LabelId, str] = {}
        for node_id in self.hierarchy.non_root_ids():
            origin = self.hierarchy.origin(node_id)
            if origin is None:
                continue
            if not oracle.covers(origin):
                raise UnknownLabel(
                    f"seed hierarchy node {node_id} has origin {origin} that the "
                    f"oracle does not cover"
                )
            self.node_of_class[oracle.representative(origin)] = node_id

    def resolve_cover(self, label: LabelId) -> tuple[str, ...] | None:
        """Existing nodes whose spaces union exactly to ``label``'s space.

        Returns None when no exact cover is derivable. A direct equality to
        an existing node wins; otherwise exact-union assertions are expanded
        recursively until every part lands on a node.
        """
        return self._resolve(label, frozenset())

    def _resolve(self, label: LabelId, visited: frozenset[LabelId]) -> tuple[str, ...] | None:
        rep = self.oracle.representative(label)
        node = self.node_of_class.get(rep)
        if node is not None:
            return (node,)
        if rep in visited:
            return None
        for parts in self.oracle.union_expansions(label):
            nodes: set[str] = set()
            ok = True
            for part in parts:
                sub = self._resolve(part, visited | {rep})
                if sub is None:
                    ok = False
                    break
                nodes.update(sub)
            if ok:
                return tuple(sorted(nodes))
        return None

    def minimal_parent(self, y: LabelId) -> tuple[str, str | None]:
        """Deepest node whose space strictly contains y's space.

        The root subsumes everything by fiat, so descent always terminates on
        a valid parent. Ties between multiple subsuming children are broken
        lexicographically and reported.
        """
        current = ROOT_ID
        warning = None
        while True:
            subsuming = []
            for child in self.hierarchy.children(current):
                origin = self.hierarchy.origin(child)
                if origin is not None and self.oracle.compare(y, origin) is Relation.A_INSIDE_B:
                    subsuming.append(child)
            if not subsuming:
                return current, warning
            if len(subsuming) > 1:
                warning = f"{'|'.join(subsuming)}->{subsuming[0]}"
                logger.warning(
                    "label %s is subsumed by several children of %s (%s); "
                    "descending into %s",
                    y, current, ", ".join(subsuming), subsuming[0],
                )
            current = subsuming[0]

    def insert(self, index: int, y: LabelId) -> BuildEvent:
        cover = self.resolve_cover(y)
        if cover is not None:
            self.mapping.set(y, cover)
            return BuildEvent(index, y, "case2", mapped=cover)

        parent_id, warning = self.minimal_parent(y)
        node_id = y.qualified()
        if node_id in self.hierarchy:
            raise ValueError(f"label {y} was already processed")
        siblings = self.hierarchy.children(parent_id)
        self.hierarchy.add_node(node_id, y, parent_id)
        self.node_of_class[self.oracle.representative(y)] = node_id

        reparented = []
        for x in siblings:
            origin = self.hierarchy.origin(x)
            if origin is not None and self.oracle.compare(origin, y) is Relation.A_INSIDE_B:
                self.hierarchy.reparent(x, node_id)
                reparented.append(x)

        inside_subtree = self.hierarchy.subtree(node_id)
        extra = []
        for other in self.hierarchy.non_root_ids():
            if other == node_id or other in inside_subtree:
                continue
            origin = self.hierarchy.origin(other)
            if origin is not None and self.oracle.compare(origin, y) is Relation.A_INSIDE_B:
                extra.append(other)
        self.mapping.set(y, [node_id, *extra])
        return BuildEvent(
            index, y, "case1",
            parent=parent_id,
            mapped=self.mapping.nodes_for(y),
            reparented=tuple(sorted(reparented)),
            extra_mappings=tuple(sorted(extra)),
            tie_warning=warning,
        )


def insert_label(
    hierarchy: UnifiedHierarchy,
    mapping: LabelMapping,
    oracle: SpaceOracle,
    y: LabelId,
) -> BuildEvent:
    """Process one label in place. Mutates ``hierarchy`` and ``mapping``."""
    builder = _Builder(oracle, None, None)
    builder.hierarchy = hierarchy
    builder.mapping = mapping
    builder.node_of_class = {}
    for node_id in hierarchy.non_root_ids():
        origin = hierarchy.origin(node_id)
        if origin is not None and oracle.covers(origin):
            builder.node_of_class[oracle.representative(origin)] = node_id
    return builder.insert(0, y)


def build_uhls(
    labels: Iterable[LabelId],
    oracle: SpaceOracle,
    seed: UnifiedHierarchy | None = None,
    seed_mapping: LabelMapping | None = None,
) -> BuildResult:
    """Fold every pooled label into a unified hierarchy plus label mapping.

    ``labels`` must be given in the canonical processing order (datasets in
    registration order, label names sorted within each dataset); the fold is
    order-sensitive in principle, so the order is recorded in the build log.
    """
    labels = list(labels)
    if len(set(labels)) != len(labels):
        dupes = sorted({l for l in labels if labels.count(l) > 1}, key=LabelId.qualified)
        raise ValueError(f"duplicate labels in build input: {dupes}")
    builder = _Builder(oracle, seed, seed_mapping)
    events = [builder.insert(i, y) for i, y in enumerate(labels)]
    builder.hierarchy.validate()
    return BuildResult(builder.hierarchy, builder.mapping, events)


def subtree(hierarchy: UnifiedHierarchy, node_id: str) -> frozenset[str]:
    """Strict descendants of ``node_id``."""
    return hierarchy.subtree(node_id)


def candidate_set(
    mapping: LabelMapping,
    hierarchy: UnifiedHierarchy,
    y: LabelId,
) -> frozenset[str]:
    """Nodes a training instance annotated ``y`` may be credited with.

    The mapped nodes plus their descendants, except that a mapped node keeps
    its descendants out when its subtree contains any node created by a label
    of ``y``'s own dataset: that dataset distinguishes finer types there, so
    its coarse annotation is informative.
    """
    mapped = mapping.nodes_for(y)
    out: set[str] = set(mapped)
    for node_id in mapped:
        descendants = hierarchy.subtree(node_id)
        same_dataset = any(
            (origin := hierarchy.origin(d)) is not None and origin.dataset == y.dataset
            for d in descendants
        )
        if not same_dataset:
            out.update(descendants)
    if not out:
        raise EmptyCandidateSet(f"label {y} resolved to an empty candidate set")
    return frozenset(out)


def isomorphism_signature(
    hierarchy: UnifiedHierarchy,
    mapping: LabelMapping,
    oracle: SpaceOracle,
) -> tuple[frozenset, frozenset]:
    """Order-insensitive fingerprint of a build result.

    Node ids are rewritten to the canonical representative of their origin's
    equality class, so two builds that differ only in which member of an
    equal pair arrived first (and therefore named the node) compare equal.
    """

    def canon(node_id: str) -> str:
        if node_id == ROOT_ID:
            return ROOT_ID
        origin = hierarchy.origin(node_id)
        if origin is None or not oracle.covers(origin):
            return node_id
        return oracle.representative(origin).qualified()

    edges = frozenset(
        (canon(n), canon(hierarchy.parent(n) or ROOT_ID))
        for n in hierarchy.non_root_ids()
    )
    entries = frozenset(
        (label.qualified(), frozenset(canon(n) for n in nodes))
        for label, nodes in mapping.items()
    )
    return edges, entries


# -- structured-text export/import ------------------------------------------

_SYNTHETIC = "synthetic"


def hierarchy_to_lines(hierarchy: UnifiedHierarchy, mapping: LabelMapping | None = None) -> list[str]:
    lines = []
    for node_id in hierarchy.node_ids():
        parent = hierarchy.parent(node_id)
        origin = hierarchy.origin(node_id)
        lines.append(
            f"NODE {node_id} PARENT {parent if parent is not None else '-'} "
            f"ORIGIN {origin.qualified() if origin is not None else _SYNTHETIC}"
        )
    if mapping is not None:
        for label, nodes in mapping.items():
            lines.append(f"MAP {label} -> {','.join(nodes)}")
    return lines


def save_hierarchy(
    hierarchy: UnifiedHierarchy,
    path: str | Path,
    mapping: LabelMapping | None = None,
) -> None:
    Path(path).write_text(
        "\n".join(hierarchy_to_lines(hierarchy, mapping)) + "\n", encoding="utf-8"
    )


def parse_hierarchy(text: str, path: str = "<string>") -> tuple[UnifiedHierarchy, LabelMapping]:
    nodes: list[tuple[str, str, LabelId | None]] = []
    entries: dict[LabelId, tuple[str, ...]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.partition("#")[0].strip()
        if not line:
            continue
        fields = line.split()
        try:
            if fields[0] == "NODE" and len(fields) == 6 and fields[2] == "PARENT" and fields[4] == "ORIGIN":
                origin = None if fields[5] == _SYNTHETIC else LabelId.parse(fields[5])
                nodes.append((fields[1], fields[3], origin))
            elif fields[0] == "MAP" and len(fields) == 4 and fields[2] == "->":
                entries[LabelId.parse(fields[1])] = tuple(fields[3].split(","))
            else:
                raise ValueError(f"unrecognized record {line!r}")
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from exc

    hierarchy = UnifiedHierarchy()
    pending = [(nid, parent, origin) for nid, parent, origin in nodes if nid != ROOT_ID]
    root_seen = any(nid == ROOT_ID for nid, _, _ in nodes)
    if not root_seen:
        raise ParseError(path, 1, f"hierarchy file has no {ROOT_ID} record")
    # Insert in dependency order; parents may appear after children in a file.
    while pending:
        progressed = False
        rest = []
        for nid, parent, origin in pending:
            if parent in hierarchy:
                hierarchy.add_node(nid, origin, parent)
                progressed = True
            else:
                rest.append((nid, parent, origin))
        if not progressed:
            bad = ", ".join(nid for nid, _, _ in rest)
            raise ParseError(path, 1, f"nodes with missing or cyclic parents: {bad}")
        pending = rest

    mapping = LabelMapping()
    for label, node_list in entries.items():
        for nid in node_list:
            if nid not in hierarchy:
                raise ParseError(path, 1, f"MAP {label} references unknown node {nid}")
        mapping.set(label, node_list)
    return hierarchy, mapping


def load_hierarchy(path: str | Path) -> tuple[UnifiedHierarchy, LabelMapping]:
    path = Path(path)
    return parse_hierarchy(path.read_text(encoding="utf-8"), str(path))
