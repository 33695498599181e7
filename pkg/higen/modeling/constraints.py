"""Decoding constraints: plain V^H masking and a level-aware variant."""

from __future__ import annotations

from typing import Collection, Dict, List, Literal, Optional, Sequence, Set

from higen.hierarchy.taxonomy import ROOT, Taxonomy
from higen.hierarchy.tokenizer import Vocabulary
from higen.modeling.seq2seq import ConstraintFn

ConstraintMode = Literal["none", "vocabulary", "hierarchy"]


def vocabulary_constraint(v: Vocabulary, t: Taxonomy) -> ConstraintFn:
    allowed = frozenset(v.allowed_ids(t))

    def admissible(prefix: Sequence[int]) -> Collection[int]:
        return allowed

    return admissible


class HierarchyConstraint:
    """
    Admissible ids follow the linearization grammar: ``<root>`` first, then
    level-k nodes whose parent was emitted on level k-1, ``/`` only after a
    node that has children, ``</s>`` only after a node.
    """

    def __init__(self, v: Vocabulary, t: Taxonomy) -> None:
        self.v, self.t = v, t
        self._children: Dict[str, List[int]] = {
            parent: [v.node_id(c) for c in kids] for parent, kids in t.children.items()
        }
        self._node_of = {v.node_id(n): n for n in t.nodes}

    def __call__(self, prefix: Sequence[int]) -> Collection[int]:
        v = self.v
        if not prefix:
            return {v.root_id}
        if self.t.depth == 0:
            return {v.eos_id}

        previous: Set[str] = {ROOT}
        current: List[str] = []
        level = 1
        for idx in prefix[1:]:
            if idx == v.sep_id:
                previous, current = set(current), []
                level += 1
            elif idx in self._node_of:
                current.append(self._node_of[idx])

        emitted = {v.node_id(n) for n in current}
        allowed: Set[int] = set()
        for parent in previous:
            allowed.update(i for i in self._children.get(parent, ()) if i not in emitted)
        if current:
            allowed.add(v.eos_id)
            if level < self.t.depth and any(self._children.get(n) for n in current):
                allowed.add(v.sep_id)
        return allowed or {v.eos_id}


def make_constraint(mode: ConstraintMode, v: Vocabulary, t: Taxonomy) -> Optional[ConstraintFn]:
    if mode == "none":
        return None
    if mode == "vocabulary":
        return vocabulary_constraint(v, t)
    return HierarchyConstraint(v, t)
