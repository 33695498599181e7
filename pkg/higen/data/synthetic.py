"""
Seeded synthetic benchmark: an EC-style tree taxonomy, disjoint topical word
pools per node, Zipf-skewed leaf frequencies and bag-of-words documents.
With ``multi_path`` set, some documents also draw a leaf from a second
top-level branch and carry the union of both paths.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS

from higen.config import SyntheticSpec
from higen.data.corpus import Example
from higen.hierarchy.taxonomy import ROOT, Taxonomy, build_taxonomy

logger = logging.getLogger(__name__)

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u")


@dataclass(frozen=True)
class SyntheticWorld:
    taxonomy: Taxonomy
    pools: Dict[str, Tuple[str, ...]]
    background: Tuple[str, ...]
    leaf_counts: Dict[str, int]


class _WordFactory:
    """Unique pronounceable pseudo-words; never an English stop word."""

    def __init__(self, rng: np.random.Generator, taken: Optional[Set[str]] = None) -> None:
        self._rng = rng
        self._taken: Set[str] = set(taken or ())

    def take(self, n: int) -> List[str]:
        out: List[str] = []
        while len(out) < n:
            syllables = int(self._rng.integers(2, 4))
            word = "".join(
                _ONSETS[int(self._rng.integers(len(_ONSETS)))] + _VOWELS[int(self._rng.integers(len(_VOWELS)))]
                for _ in range(syllables)
            )
            if word in self._taken or word in ENGLISH_STOP_WORDS:
                continue
            self._taken.add(word)
            out.append(word)
        return out


def zipf_counts(n_items: int, total: int, s: float) -> List[int]:
    """
    Integer counts proportional to ``rank ** -s`` summing to ``total``
    (largest-remainder rounding), every count at least 1.
    """
    ranks = np.arange(1, n_items + 1, dtype=np.float64)
    weights = ranks ** (-s)
    exact = total * weights / weights.sum()
    counts = np.floor(exact).astype(int)
    remainder = total - int(counts.sum())
    order = np.argsort(-(exact - counts), kind="stable")
    counts[order[:remainder]] += 1
    return [max(1, int(c)) for c in counts]


def _build_world(spec: SyntheticSpec, rng: np.random.Generator) -> SyntheticWorld:
    words = _WordFactory(rng)
    nodes: List[Tuple[str, str]] = []
    edges: List[Tuple[str, str]] = []
    pools: Dict[str, Tuple[str, ...]] = {}

    frontier = [ROOT]
    for width in spec.branching:
        nxt: List[str] = []
        for parent in frontier:
            for j in range(1, width + 1):
                nid = str(j) if parent == ROOT else f"{parent}.{j}"
                pool = tuple(words.take(spec.words_per_topic))
                pools[nid] = pool
                # the node name is drawn from its own topic so names carry signal
                nodes.append((nid, " ".join(pool[:2])))
                edges.append((parent, nid))
                nxt.append(nid)
        frontier = nxt

    taxonomy = build_taxonomy(nodes, edges)
    background = tuple(words.take(spec.background_words))

    leaves = taxonomy.leaves()
    counts = zipf_counts(len(leaves), spec.docs_per_leaf * len(leaves), spec.zipf_s)
    ranked = [leaves[int(i)] for i in rng.permutation(len(leaves))]
    leaf_counts = dict(zip(ranked, counts))
    return SyntheticWorld(taxonomy=taxonomy, pools=pools, background=background, leaf_counts=leaf_counts)


def _branch(t: Taxonomy, leaf: str) -> str:
    return next(a for a in t.ancestors(leaf) | {leaf} if t.level(a) == 1)


def _draw_leaves(world: SyntheticWorld, spec: SyntheticSpec, leaf: str, rng: np.random.Generator) -> Tuple[str, ...]:
    """``leaf`` alone, or with a second leaf from another top-level branch."""
    if not spec.multi_path or rng.random() >= spec.multi_path:
        return (leaf,)
    t = world.taxonomy
    home = _branch(t, leaf)
    others = [other for other in t.leaves() if _branch(t, other) != home]
    if not others:
        return (leaf,)
    return (leaf, others[int(rng.integers(len(others)))])


def _labels(t: Taxonomy, leaves: Sequence[str]) -> frozenset:
    return frozenset(n for leaf in leaves for n in t.ancestors(leaf) | {leaf})


def _draw_doc(
    world: SyntheticWorld,
    spec: SyntheticSpec,
    leaves: Sequence[str],
    rng: np.random.Generator,
    pools: Optional[Dict[str, Tuple[str, ...]]] = None,
) -> Tuple[str, ...]:
    pools = pools or world.pools
    lineage = [sorted(world.taxonomy.ancestors(leaf)) for leaf in leaves]
    length = int(rng.integers(spec.doc_len_min, spec.doc_len_max + 1))
    doc: List[str] = []
    for _ in range(length):
        k = 0 if len(leaves) == 1 else int(rng.integers(len(leaves)))
        ancestors = lineage[k]
        u = rng.random()
        if u < spec.noise_rate:
            source = world.background
        elif ancestors and u < spec.noise_rate + (1 - spec.noise_rate) * spec.ancestor_mix:
            source = pools[ancestors[int(rng.integers(len(ancestors)))]]
        else:
            source = pools[leaves[k]]
        doc.append(source[int(rng.integers(len(source)))])
    return tuple(doc)


def _resolve_seed(spec: SyntheticSpec, seed: Optional[int]) -> int:
    if spec.seed is not None:
        return spec.seed
    return 0 if seed is None else seed


def synthetic_world(spec: SyntheticSpec, seed: Optional[int] = None) -> SyntheticWorld:
    return _build_world(spec, np.random.default_rng(_resolve_seed(spec, seed)))


def generate_synthetic(spec: SyntheticSpec, seed: Optional[int] = None) -> Tuple[Taxonomy, List[Example]]:
    """Taxonomy and labelled examples, fully determined by the seed."""
    rng = np.random.default_rng(_resolve_seed(spec, seed))
    world = _build_world(spec, rng)
    t = world.taxonomy

    examples: List[Example] = []
    for leaf in t.leaves():
        for _ in range(world.leaf_counts[leaf]):
            drawn = _draw_leaves(world, spec, leaf, rng)
            examples.append(Example(id="", doc=_draw_doc(world, spec, drawn, rng), labels=_labels(t, drawn)))
    order = rng.permutation(len(examples))
    examples = [
        Example(id=f"doc{i:05d}", doc=examples[j].doc, labels=examples[j].labels)
        for i, j in enumerate(int(k) for k in order)
    ]
    logger.info(
        "synthetic corpus: %d nodes, %d leaves, %d documents (zipf_s=%.2f)",
        len(t), len(t.leaves()), len(examples), spec.zipf_s,
    )
    return t, examples


def generate_pretraining_corpus(
    spec: SyntheticSpec,
    n_docs: int,
    perturb: float = 0.3,
    seed: Optional[int] = None,
) -> List[Example]:
    """
    Weakly labelled corpus over the same taxonomy. A ``perturb`` share of
    every topic pool is swapped for unseen words and leaves are drawn
    uniformly, so the corpus is related to but distinct from the benchmark.
    """
    base_seed = _resolve_seed(spec, seed)
    world = _build_world(spec, np.random.default_rng(base_seed))
    rng = np.random.default_rng([base_seed, 1])

    taken = {w for pool in world.pools.values() for w in pool} | set(world.background)
    fresh = _WordFactory(rng, taken)
    pools: Dict[str, Tuple[str, ...]] = {}
    for nid, pool in world.pools.items():
        k = int(round(perturb * len(pool)))
        swap = set(int(i) for i in rng.choice(len(pool), size=k, replace=False)) if k else set()
        replacements = iter(fresh.take(k))
        pools[nid] = tuple(next(replacements) if i in swap else w for i, w in enumerate(pool))

    t = world.taxonomy
    leaves = t.leaves()
    out: List[Example] = []
    for i in range(n_docs):
        leaf = leaves[int(rng.integers(len(leaves)))]
        drawn = _draw_leaves(world, spec, leaf, rng)
        out.append(Example(id=f"pre{i:05d}", doc=_draw_doc(world, spec, drawn, rng, pools), labels=_labels(t, drawn)))
    logger.info("pretraining corpus: %d documents, %.0f%% of each pool perturbed", n_docs, 100 * perturb)
    return out
