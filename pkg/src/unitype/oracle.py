"""Declarative label-space oracle.

Every dataset label denotes a *label space*, the set of entity mentions its
annotation guideline allows. The oracle is a finite assertion table over
those spaces (subsumption, equality, disjointness, exact unions), from which
pairwise relations are derived by closure. It answers the comparison queries
that drive hierarchy construction, deterministically and with provenance.

Semantics of the derivation:

* ``EQUAL`` assertions partition labels into equivalence classes.
* ``SUBSUMES big small`` puts ``small`` strictly inside ``big``; membership
  in an ``EQUALS_UNION`` of two or more parts is also treated as strict
  containment of each part. Strict containment is transitively closed over
  the equivalence classes.
* ``DISJOINT`` propagates downward: anything inside two disjoint spaces'
  respective spaces is itself disjoint.
* Two labels *overlap* when they verifiably share mass (some label sits
  inside both) but neither containment, equality, nor disjointness holds.
* Labels in the universe with no derivable relation are disjoint by default.
  Appearing in the file (in an assertion or a ``LABEL`` declaration) is what
  opts a label into that default; querying a label the file never mentions
  is a hard :class:`~unitype.errors.UnknownLabel` error, never a guess.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import InconsistentOracle, ParseError, UnknownLabel

_NAME_RE = re.compile(r"^[^\s:]+$")


@dataclass(frozen=True, order=True)
class LabelId:
    """A dataset-qualified label name."""

    dataset: str
    name: str

    def __post_init__(self):
        if not _NAME_RE.match(self.dataset):
            raise ValueError(f"bad dataset name: {self.dataset!r}")
        if not self.name or any(c.isspace() for c in self.name):
            raise ValueError(f"bad label name: {self.name!r}")

    def qualified(self) -> str:
        return f"{self.dataset}:{self.name}"

    @classmethod
    def parse(cls, text: str) -> "LabelId":
        dataset, sep, name = text.partition(":")
        if not sep:
            raise ValueError(f"expected 'dataset:label', got {text!r}")
        return cls(dataset, name)

    def __str__(self) -> str:
        return self.qualified()


class Relation(str, Enum):
    """Outcome of comparing two label spaces."""

    A_INSIDE_B = "a_inside_b"
    B_INSIDE_A = "b_inside_a"
    EQUAL = "equal"
    DISJOINT = "disjoint"
    OVERLAP = "overlap"

    def swapped(self) -> "Relation":
        if self is Relation.A_INSIDE_B:
            return Relation.B_INSIDE_A
        if self is Relation.B_INSIDE_A:
            return Relation.A_INSIDE_B
        return self


@dataclass(frozen=True)
class Assertion:
    """One row of the assertion table.

    ``kind`` is one of ``subsumes``, ``equal``, ``disjoint``, ``equals_union``.
    For ``equals_union`` the first arg is the whole, the rest are the parts.
    ``provenance`` is a free-text note (typically file:line or a guideline
    citation) used in error chains.
    """

    kind: str
    args: tuple[LabelId, ...]
    provenance: str = ""

    def to_line(self) -> str:
        if self.kind == "subsumes":
            return f"SUBSUMES {self.args[0]} {self.args[1]}"
        if self.kind == "equal":
            return f"EQUAL {self.args[0]} {self.args[1]}"
        if self.kind == "disjoint":
            return f"DISJOINT {self.args[0]} {self.args[1]}"
        if self.kind == "equals_union":
            parts = " + ".join(str(a) for a in self.args[1:])
            return f"EQUALS_UNION {self.args[0]} = {parts}"
        raise ValueError(f"unknown assertion kind {self.kind!r}")

    def describe(self) -> str:
        note = f"  ({self.provenance})" if self.provenance else ""
        return self.to_line() + note


class SpaceOracle:
    """Assertion table plus its derived closure.

    Construction validates consistency and raises
    :class:`~unitype.errors.InconsistentOracle` with the offending assertion
    chain on contradiction.
    """

    def __init__(self, assertions: Iterable[Assertion], declared: Iterable[LabelId] = ()):
        self.assertions: tuple[Assertion, ...] = tuple(assertions)
        self.declared: tuple[LabelId, ...] = tuple(declared)
        labels: set[LabelId] = set(self.declared)
        for a in self.assertions:
            labels.update(a.args)
        self._universe = frozenset(labels)
        self._build_classes()
        self._build_strict_edges()
        self._close()
        self._validate()

    # -- construction ----------------------------------------------------

    def _build_classes(self) -> None:
        parent: dict[LabelId, LabelId] = {lab: lab for lab in self._universe}

        def find(x: LabelId) -> LabelId:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a in self.assertions:
            if a.kind == "equal":
                ra, rb = find(a.args[0]), find(a.args[1])
                if ra != rb:
                    parent[ra] = rb
        members: dict[LabelId, list[LabelId]] = {}
        for lab in self._universe:
            members.setdefault(find(lab), []).append(lab)
        # Canonical class key: lexicographically smallest qualified member.
        self._class_of: dict[LabelId, LabelId] = {}
        self._members: dict[LabelId, tuple[LabelId, ...]] = {}
        for labs in members.values():
            labs.sort(key=lambda l: l.qualified())
            rep = labs[0]
            self._members[rep] = tuple(labs)
            for lab in labs:
                self._class_of[lab] = rep

    def _build_strict_edges(self) -> None:
        # up edge: class -> strictly containing class, tagged with its assertion
        self._up_edges: dict[LabelId, list[tuple[LabelId, Assertion]]] = {}
        self._unions: dict[LabelId, list[Assertion]] = {}
        for a in self.assertions:
            if a.kind == "subsumes":
                big, small = self._class_of[a.args[0]], self._class_of[a.args[1]]
                self._up_edges.setdefault(small, []).append((big, a))
            elif a.kind == "equals_union":
                whole = self._class_of[a.args[0]]
                self._unions.setdefault(whole, []).append(a)
                for part in a.args[1:]:
                    self._up_edges.setdefault(self._class_of[part], []).append((whole, a))

    def _close(self) -> None:
        self._up: dict[LabelId, frozenset[LabelId]] = {}
        for rep in self._members:
            seen: set[LabelId] = set()
            stack = [rep]
            while stack:
                node = stack.pop()
                for target, _ in self._up_edges.get(node, ()):
                    if target not in seen:
                        seen.add(target)
                        stack.append(target)
            self._up[rep] = frozenset(seen)
        self._down: dict[LabelId, set[LabelId]] = {rep: {rep} for rep in self._members}
        for rep, ups in self._up.items():
            for target in ups:
                self._down[target].add(rep)

    def _validate(self) -> None:
        for rep in self._members:
            if rep in self._up[rep]:
                chain = self._containment_chain(rep, rep)
                raise InconsistentOracle(
                    f"containment cycle through {rep}: a label space cannot "
                    f"strictly contain itself",
                    chain,
                )
        for a in self.assertions:
            if a.kind != "disjoint":
                continue
            ra, rb = self._class_of[a.args[0]], self._class_of[a.args[1]]
            common = self._down[ra] & self._down[rb]
            if common:
                witness = sorted(common, key=lambda l: l.qualified())[0]
                chain = [a.describe()]
                if witness != ra:
                    chain += self._containment_chain(witness, ra)
                if witness != rb:
                    chain += self._containment_chain(witness, rb)
                if witness == ra == rb:
                    chain += [f"{a.args[0]} and {a.args[1]} are in the same equality class"]
                raise InconsistentOracle(
                    f"{a.args[0]} and {a.args[1]} are asserted disjoint but "
                    f"share {witness}",
                    chain,
                )

    def _containment_chain(self, lo: LabelId, hi: LabelId) -> list[str]:
        """Assertions witnessing lo strictly inside hi (BFS over up edges)."""
        prev: dict[LabelId, tuple[LabelId, Assertion]] = {}
        queue = deque([lo])
        seen = {lo}
        while queue:
            node = queue.popleft()
            for target, assertion in self._up_edges.get(node, ()):
                if target == hi:
                    chain = [assertion]
                    back = node
                    while back != lo:
                        back, a = prev[back]
                        chain.append(a)
                    return [a.describe() for a in reversed(chain)]
                if target not in seen:
                    seen.add(target)
                    prev[target] = (node, assertion)
                    queue.append(target)
        return []

    # -- queries ----------------------------------------------------------

    @property
    def universe(self) -> frozenset[LabelId]:
        return self._universe

    def covers(self, label: LabelId) -> bool:
        return label in self._universe

    def representative(self, label: LabelId) -> LabelId:
        """Canonical member of ``label``'s equality class."""
        self._require(label)
        return self._class_of[label]

    def compare(self, a: LabelId, b: LabelId) -> Relation:
        """Relate two label spaces. See module docstring for the semantics."""
        self._require(a)
        self._require(b)
        ra, rb = self._class_of[a], self._class_of[b]
        if ra == rb:
            return Relation.EQUAL
        if rb in self._up[ra]:
            return Relation.A_INSIDE_B
        if ra in self._up[rb]:
            return Relation.B_INSIDE_A
        if self._derived_disjoint(ra, rb):
            return Relation.DISJOINT
        if self._down[ra] & self._down[rb]:
            return Relation.OVERLAP
        return Relation.DISJOINT

    def strictly_inside(self, a: LabelId, b: LabelId) -> bool:
        return self.compare(a, b) is Relation.A_INSIDE_B

    def union_expansions(self, label: LabelId) -> tuple[tuple[LabelId, ...], ...]:
        """Part tuples of every exact-union assertion over ``label``'s class."""
        self._require(label)
        rep = self._class_of[label]
        return tuple(a.args[1:] for a in self._unions.get(rep, ()))

    def _derived_disjoint(self, ra: LabelId, rb: LabelId) -> bool:
        ups_a = self._up[ra] | {ra}
        ups_b = self._up[rb] | {rb}
        for a in self.assertions:
            if a.kind != "disjoint":
                continue
            x, y = self._class_of[a.args[0]], self._class_of[a.args[1]]
            if (x in ups_a and y in ups_b) or (x in ups_b and y in ups_a):
                return True
        return False

    def _require(self, label: LabelId) -> None:
        if label not in self._universe:
            raise UnknownLabel(
                f"label {label} is not covered by the oracle; add an assertion "
                f"or a LABEL declaration for it"
            )

    # -- serialization ------------------------------------------------------

    def to_lines(self) -> list[str]:
        lines = [f"LABEL {lab}" for lab in sorted(self.declared, key=LabelId.qualified)]
        lines += [a.to_line() for a in self.assertions]
        return lines

    @classmethod
    def parse(cls, text: str, path: str = "<string>") -> "SpaceOracle":
        assertions: list[Assertion] = []
        declared: list[LabelId] = []
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line, _, comment = raw.partition("#")
            line = line.strip()
            if not line:
                continue
            provenance = comment.strip() or f"{path}:{line_no}"
            fields = line.split()
            try:
                keyword = fields[0].upper()
                if keyword == "LABEL" and len(fields) == 2:
                    declared.append(LabelId.parse(fields[1]))
                elif keyword in ("SUBSUMES", "EQUAL", "DISJOINT") and len(fields) == 3:
                    a, b = LabelId.parse(fields[1]), LabelId.parse(fields[2])
                    assertions.append(Assertion(keyword.lower(), (a, b), provenance))
                elif keyword == "EQUALS_UNION":
                    whole, parts = _parse_union(fields[1:])
                    assertions.append(
                        Assertion("equals_union", (whole, *parts), provenance)
                    )
                else:
                    raise ValueError(f"unrecognized assertion {line!r}")
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from exc
        return cls(assertions, declared)

    @classmethod
    def from_file(cls, path: str | Path) -> "SpaceOracle":
        path = Path(path)
        return cls.parse(path.read_text(encoding="utf-8"), str(path))

    def to_file(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")


def _parse_union(fields: Sequence[str]) -> tuple[LabelId, list[LabelId]]:
    # grammar: <whole> = <part> + <part> [+ <part> ...]
    if len(fields) < 4 or fields[1] != "=":
        raise ValueError("expected 'EQUALS_UNION whole = part + part [+ ...]'")
    whole = LabelId.parse(fields[0])
    parts: list[LabelId] = []
    expect_part = True
    for tok in fields[2:]:
        if expect_part:
            parts.append(LabelId.parse(tok))
        elif tok != "+":
            raise ValueError(f"expected '+', got {tok!r}")
        expect_part = not expect_part
    if expect_part or len(parts) < 2:
        raise ValueError("union needs at least two '+'-separated parts")
    return whole, parts
