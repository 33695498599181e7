"""
Label hierarchy as a DAG, BFS linearization of label sets and the inverse
parser used to score generated label sequences.

A label sequence looks like ``<root> A B / A1 B2``: level-1 nodes first,
one ``/`` per level change, no trailing separator.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Set, Tuple

logger = logging.getLogger(__name__)

# ── structural symbols ───────────────────────────────────────────────────── #
ROOT = "<root>"
SEP = "/"
EOS = "</s>"
MASK = "<mask>"
# vocabulary specials a node id may not shadow
RESERVED = (ROOT, SEP, EOS, MASK, "<pad>", "<s>", "<unk>")

RepairPolicy = Literal["drop-invalid", "strict"]


# ── errors ───────────────────────────────────────────────────────────────── #
class TaxonomyError(ValueError):
    """Base class for every hierarchy problem."""


class InvalidEdge(TaxonomyError):
    pass


class CycleDetected(TaxonomyError):
    pass


class UnreachableNode(TaxonomyError):
    pass


class LevelInconsistency(TaxonomyError):
    pass


class NotAncestorClosed(TaxonomyError):
    pass


class EmptyLabelSet(TaxonomyError):
    pass


class MultiPathUnsupported(TaxonomyError):
    pass


class ParseError(TaxonomyError):
    pass


# ── data model ───────────────────────────────────────────────────────────── #
@dataclass(frozen=True)
class LabelNode:
    id: str
    name: str
    level: int
    parents: Tuple[str, ...]


@dataclass(frozen=True)
class LabelSequence:
    """Flattened label string; the masked variant may hold ``<mask>``."""

    tokens: Tuple[str, ...]

    def levels(self) -> List[List[str]]:
        """Node tokens grouped by level (structural tokens removed)."""
        groups: List[List[str]] = [[]]
        for tok in self.tokens:
            if tok == ROOT:
                continue
            if tok == SEP:
                groups.append([])
            else:
                groups[-1].append(tok)
        return groups

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


@dataclass
class Diagnostics:
    stray: int = 0
    wrong_level: int = 0
    broken_edge: int = 0
    duplicate: int = 0
    missing_root: int = 0
    empty_level: int = 0

    @property
    def clean(self) -> bool:
        return not any(
            (self.stray, self.wrong_level, self.broken_edge,
             self.duplicate, self.missing_root, self.empty_level)
        )

    def as_dict(self) -> Dict[str, int]:
        return {
            "stray": self.stray,
            "wrong_level": self.wrong_level,
            "broken_edge": self.broken_edge,
            "duplicate": self.duplicate,
            "missing_root": self.missing_root,
            "empty_level": self.empty_level,
        }


@dataclass(frozen=True)
class Taxonomy:
    """Validated, immutable label DAG. Build it with :func:`build_taxonomy`."""

    nodes: Mapping[str, LabelNode]
    edges: Tuple[Tuple[str, str], ...]
    children: Mapping[str, Tuple[str, ...]]
    depth: int
    root: str = ROOT
    specials: Tuple[str, ...] = field(default=(SEP, ROOT))

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node_id: object) -> bool:
        return node_id in self.nodes

    def level(self, node_id: str) -> int:
        return self.nodes[node_id].level

    def name(self, node_id: str) -> str:
        return self.nodes[node_id].name

    def nodes_at_level(self, k: int) -> List[str]:
        return [n.id for n in self.nodes.values() if n.level == k]

    def ancestors(self, node_id: str) -> Set[str]:
        seen: Set[str] = set()
        stack = list(self.nodes[node_id].parents)
        while stack:
            cur = stack.pop()
            if cur == self.root or cur in seen:
                continue
            seen.add(cur)
            stack.extend(self.nodes[cur].parents)
        return seen

    def leaves(self) -> List[str]:
        return [nid for nid in self.nodes if not self.children.get(nid)]

    def is_ancestor_closed(self, labels: Iterable[str]) -> bool:
        y = set(labels)
        for nid in y:
            parents = self.nodes[nid].parents
            if self.root in parents:
                continue
            if not any(p in y for p in parents):
                return False
        return True

    def level_labels(self, labels: Iterable[str]) -> List[str]:
        """One node per level for a single-path label set, level 1 first."""
        per_level: Dict[int, List[str]] = {}
        for nid in labels:
            per_level.setdefault(self.level(nid), []).append(nid)
        path: List[str] = []
        for k in sorted(per_level):
            if len(per_level[k]) != 1:
                raise MultiPathUnsupported(
                    f"level {k} holds {len(per_level[k])} labels: {sorted(per_level[k])}"
                )
            path.append(per_level[k][0])
        return path


# ── construction ─────────────────────────────────────────────────────────── #
def build_taxonomy(
    nodes: Sequence[Tuple[str, str]],
    edges: Sequence[Tuple[str, str]],
) -> Taxonomy:
    """
    Validate ``(id, name)`` nodes and ``(parent, child)`` edges into a
    :class:`Taxonomy`. Root edges use :data:`ROOT` as the parent id.

    Levels are the longest path from the root; every parent of a node must
    sit on the same level. Sibling order is node declaration order.
    """
    names: Dict[str, str] = {}
    for nid, name in nodes:
        if nid in RESERVED:
            raise InvalidEdge(f"node id {nid!r} is reserved")
        if nid in names:
            raise InvalidEdge(f"duplicate node id {nid!r}")
        if not name or not name.strip():
            raise InvalidEdge(f"node {nid!r} has an empty name")
        names[nid] = name.strip()

    order = {nid: i for i, nid in enumerate(names)}
    parents: Dict[str, List[str]] = {nid: [] for nid in names}
    children: Dict[str, List[str]] = {ROOT: []}
    seen_edges: Set[Tuple[str, str]] = set()
    kept_edges: List[Tuple[str, str]] = []

    for parent, child in edges:
        if parent == child:
            raise InvalidEdge(f"self-edge on {child!r}")
        if child not in names:
            raise InvalidEdge(f"edge points to unknown node {child!r}")
        if parent != ROOT and parent not in names:
            raise InvalidEdge(f"edge starts at unknown node {parent!r}")
        if (parent, child) in seen_edges:
            continue
        seen_edges.add((parent, child))
        kept_edges.append((parent, child))
        parents[child].append(parent)
        children.setdefault(parent, []).append(child)

    # Kahn's algorithm: anything left with positive in-degree sits on a cycle.
    indegree = {nid: len(ps) for nid, ps in parents.items()}
    queue = deque([ROOT] + [nid for nid, d in indegree.items() if d == 0])
    topo: List[str] = []
    while queue:
        cur = queue.popleft()
        if cur != ROOT:
            topo.append(cur)
        for ch in children.get(cur, []):
            indegree[ch] -= 1
            if indegree[ch] == 0:
                queue.append(ch)
    stuck = sorted((nid for nid, d in indegree.items() if d > 0), key=order.get)
    if stuck:
        raise CycleDetected(f"cycle through {stuck}")

    reachable: Set[str] = set()
    frontier = deque(children.get(ROOT, []))
    while frontier:
        cur = frontier.popleft()
        if cur in reachable:
            continue
        reachable.add(cur)
        frontier.extend(children.get(cur, []))
    missing = [nid for nid in names if nid not in reachable]
    if missing:
        raise UnreachableNode(f"not reachable from {ROOT}: {missing}")

    level: Dict[str, int] = {}
    for nid in topo:
        level[nid] = 1 + max(
            (0 if p == ROOT else level[p]) for p in parents[nid]
        )
    for nid in topo:
        parent_levels = {0 if p == ROOT else level[p] for p in parents[nid]}
        if len(parent_levels) > 1:
            raise LevelInconsistency(
                f"{nid!r} has parents on levels {sorted(parent_levels)}"
            )

    node_map = {
        nid: LabelNode(
            id=nid,
            name=names[nid],
            level=level[nid],
            parents=tuple(parents[nid]),
        )
        for nid in names
    }
    child_map = {
        p: tuple(sorted(chs, key=order.get)) for p, chs in children.items()
    }
    depth = max(level.values(), default=0)
    logger.debug("taxonomy built: %d nodes, %d edges, depth %d", len(node_map), len(kept_edges), depth)
    return Taxonomy(
        nodes=node_map,
        edges=tuple(kept_edges),
        children=child_map,
        depth=depth,
    )


# ── linearization ────────────────────────────────────────────────────────── #
def linearize(t: Taxonomy, y: Iterable[str]) -> LabelSequence:
    """BFS-flatten an ancestor-closed label set into a :class:`LabelSequence`."""
    labels = set(y)
    if not labels:
        raise EmptyLabelSet("cannot linearize an empty label set")
    unknown = sorted(labels - set(t.nodes))
    if unknown:
        raise NotAncestorClosed(f"labels not in taxonomy: {unknown}")
    if not t.is_ancestor_closed(labels):
        raise NotAncestorClosed(f"label set {sorted(labels)} misses ancestors")

    queue = deque(ch for ch in t.children.get(t.root, ()) if ch in labels)
    enqueued = set(queue)
    tokens: List[str] = [ROOT]
    current_level = 1
    while queue:
        nid = queue.popleft()
        lvl = t.level(nid)
        if lvl != current_level:
            tokens.append(SEP)
            current_level = lvl
        tokens.append(nid)
        for ch in t.children.get(nid, ()):
            if ch in labels and ch not in enqueued:
                enqueued.add(ch)
                queue.append(ch)
    return LabelSequence(tuple(tokens))


def parse(
    t: Taxonomy,
    tokens: Sequence[str],
    repair: RepairPolicy = "drop-invalid",
) -> Tuple[Set[str], Diagnostics]:
    """
    Recover a label set from arbitrary generated tokens.

    ``drop-invalid`` keeps every node that sits on the right level and has an
    accepted parent, which is the largest ancestor-closed subset available.
    ``strict`` raises :class:`ParseError` on the first violation.
    """
    diag = Diagnostics()
    strict = repair == "strict"
    if repair not in ("drop-invalid", "strict"):
        raise ValueError(f"unknown repair policy {repair!r}")

    def _violation(kind: str, detail: str) -> None:
        setattr(diag, kind, getattr(diag, kind) + 1)
        if strict:
            raise ParseError(f"{kind}: {detail}")

    body: List[str] = []
    for tok in tokens:
        if tok == EOS:
            break
        if tok in ("<s>", "<pad>"):
            continue
        body.append(tok)

    if body and body[0] == ROOT:
        body = body[1:]
    else:
        _violation("missing_root", f"sequence starts with {body[:1]}")

    groups: List[List[str]] = [[]]
    for tok in body:
        if tok == SEP:
            groups.append([])
        elif tok == ROOT:
            _violation("stray", "repeated <root>")
        else:
            groups[-1].append(tok)

    accepted: Set[str] = set()
    for k, group in enumerate(groups, start=1):
        if not group:
            _violation("empty_level", f"level {k} is empty")
            continue
        for tok in group:
            if tok not in t.nodes:
                _violation("stray", f"{tok!r} is not a label node")
            elif t.level(tok) != k:
                _violation("wrong_level", f"{tok!r} belongs to level {t.level(tok)}, found at {k}")
            elif tok in accepted:
                _violation("duplicate", f"{tok!r} repeated")
            elif not any(p == t.root or p in accepted for p in t.nodes[tok].parents):
                _violation("broken_edge", f"{tok!r} has no accepted parent")
            else:
                accepted.add(tok)
    return accepted, diag


# ── derived vocabularies ─────────────────────────────────────────────────── #
def allowed_vocabulary(t: Taxonomy) -> frozenset:
    """V^H as token strings: every node token plus ``/``, ``<root>`` and end."""
    return frozenset(t.nodes) | {SEP, ROOT, EOS}


def edge_token_pairs(t: Taxonomy) -> List[Tuple[str, str]]:
    """Parent/child token pairs, one per edge, virtual-root edges excluded."""
    return [(p, c) for p, c in t.edges if p != t.root]


# ── file format ──────────────────────────────────────────────────────────── #
def read_taxonomy(path: str | Path) -> Taxonomy:
    """Read ``child<TAB>parent<TAB>name`` lines; ``#`` starts a comment line."""
    nodes: Dict[str, str] = {}
    edges: List[Tuple[str, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise TaxonomyError(f"{path}:{lineno}: expected 3 tab-separated fields")
            child, parent, name = (p.strip() for p in parts)
            if child in nodes and nodes[child] != name:
                raise TaxonomyError(f"{path}:{lineno}: conflicting names for {child!r}")
            nodes.setdefault(child, name)
            edges.append((parent, child))
    return build_taxonomy(list(nodes.items()), edges)


def write_taxonomy(t: Taxonomy, path: str | Path) -> None:
    # one line per (child, parent), children in declaration order so that a
    # re-read taxonomy keeps the same sibling order
    lines = ["# child\tparent\tname"]
    for node in t.nodes.values():
        for parent in node.parents:
            lines.append(f"{node.id}\t{parent}\t{node.name}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
