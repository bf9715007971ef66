"""
Is-a taxonomies and (thresholded) Wu-Palmer similarity.
"""

__all__ = ['Taxonomy', 'load_taxonomy', 'wup_similarity', 'mu_thresholded', 'DOWN_WEIGHT']

import functools
import logging
from typing import Mapping, Optional, Sequence

from .errors import FormatError, TaxonomyError

logger = logging.getLogger(__name__)

DOWN_WEIGHT = 0.1


class Taxonomy:
    """
    Rooted DAG of child -> parent edges plus a word -> senses mapping.

    Depth counts nodes on the longest path from the root (root depth = 1),
    so every proper subsumer is strictly shallower than its descendants.
    Immutable after construction; similarity lookups are memoized.
    """
    def __init__(
            self,
            parents: Mapping[str, Sequence[str]],
            word_senses: Optional[Mapping[str, Sequence[str]]] = None,
            duplicate_edges: int = 0):
        nodes = set(parents)
        for ps in parents.values():
            nodes.update(ps)
        self.parents = {node: tuple(parents.get(node, ())) for node in sorted(nodes)}
        self.duplicate_edges = duplicate_edges

        roots = [node for node, ps in self.parents.items() if not ps]
        if not roots:
            raise TaxonomyError('Taxonomy has no root: every node has a parent (cycle)')
        if len(roots) != 1:
            raise TaxonomyError(
                f'Taxonomy must have exactly one root, found {len(roots)}: '
                f'{roots[:5]}', roots=roots[:5])
        self.root = roots[0]
        self.depths = self._compute_depths()
        self.ancestors = {node: self._ancestors(node) for node in self.parents}

        self.word_senses = {}
        for word, senses in (word_senses or {}).items():
            senses = tuple(senses)
            if not senses:
                raise TaxonomyError(f'Word {word!r} maps to no node', word=word)
            unknown = [s for s in senses if s not in self.parents]
            if unknown:
                raise TaxonomyError(
                    f'Word {word!r} maps to orphan node(s) {unknown}',
                    word=word, nodes=unknown)
            self.word_senses[word] = senses
        self._wup = functools.lru_cache(maxsize=65536)(self._wup_uncached)

    def _compute_depths(self) -> dict:
        # Longest path to the root, iteratively with cycle detection.
        depths = {self.root: 1}
        state = {}
        for start in self.parents:
            if start in depths:
                continue
            stack = [start]
            while stack:
                node = stack[-1]
                if node in depths:
                    stack.pop()
                    continue
                if state.get(node) == 'open':
                    pending = [p for p in self.parents[node] if p not in depths]
                    if pending:
                        raise TaxonomyError(
                            f'Cycle through node {node!r}', node=node)
                    depths[node] = 1 + max(depths[p] for p in self.parents[node])
                    stack.pop()
                    continue
                state[node] = 'open'
                for parent in self.parents[node]:
                    if parent not in depths:
                        if state.get(parent) == 'open':
                            raise TaxonomyError(
                                f'Cycle through node {parent!r}', node=parent)
                        stack.append(parent)
        return depths

    def _ancestors(self, node: str) -> frozenset:
        seen = {node}
        stack = [node]
        while stack:
            for parent in self.parents[stack.pop()]:
                if parent not in seen:
                    seen.add(parent)
                    stack.append(parent)
        return frozenset(seen)

    def __len__(self) -> int:
        return len(self.parents)

    def depth(self, node: str) -> int:
        return self.depths[node]

    def senses(self, word: str) -> tuple:
        return self.word_senses.get(word, ())

    def lcs(self, a: str, b: str) -> str:
        """Deepest common subsumer of two nodes (ties: lexicographic)."""
        common = self.ancestors[a] & self.ancestors[b]
        deepest = max(self.depths[n] for n in common)
        return min(n for n in common if self.depths[n] == deepest)

    def node_similarity(self, a: str, b: str) -> float:
        lcs_depth = self.depths[self.lcs(a, b)]
        return 2.0 * lcs_depth / (self.depths[a] + self.depths[b])

    def _wup_uncached(self, a: str, b: str) -> float:
        if a == b:
            return 1.0
        senses_a, senses_b = self.senses(a), self.senses(b)
        if not senses_a or not senses_b:
            return 0.0
        return max(
            self.node_similarity(sa, sb)
            for sa in senses_a
            for sb in senses_b)

    def wup(self, a: str, b: str) -> float:
        if b < a:
            a, b = b, a
        return self._wup(a, b)


def _read_lines(path):
    with open(path, encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip('\n').rstrip('\r')
            stripped = line.strip()
            if not stripped or stripped.startswith('#'):
                continue
            yield lineno, line


def load_taxonomy(edge_path, word_map_path=None) -> Taxonomy:
    """
    Edge file: `child<TAB>parent` per line. Word map:
    `word<TAB>node_id[,node_id...]` per line. '#' starts a comment line.
    """
    parents = {}
    seen = set()
    duplicates = 0
    for lineno, line in _read_lines(edge_path):
        parts = line.split('\t')
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise FormatError(
                'expected child<TAB>parent', path=str(edge_path), line=lineno)
        child, parent = parts[0].strip(), parts[1].strip()
        if (child, parent) in seen:
            duplicates += 1
            continue
        seen.add((child, parent))
        parents.setdefault(child, []).append(parent)
    if duplicates:
        logger.warning('Ignored %d duplicate edge(s) in %s', duplicates, edge_path)

    word_senses = {}
    if word_map_path is not None:
        for lineno, line in _read_lines(word_map_path):
            parts = line.split('\t')
            if len(parts) != 2:
                raise FormatError(
                    'expected word<TAB>node_id[,node_id...]',
                    path=str(word_map_path), line=lineno)
            word = parts[0].strip()
            known = word_senses.setdefault(word, [])
            for sense in parts[1].split(','):
                sense = sense.strip()
                if sense and sense not in known:
                    known.append(sense)
    return Taxonomy(parents, word_senses, duplicate_edges=duplicates)


def wup_similarity(a: str, b: str, taxonomy: Optional[Taxonomy]) -> float:
    """
    Best 2 depth(LCS) / (depth(a) + depth(b)) over sense pairs.

    Identical words score 1; unmapped words fall back to exact match.
    """
    if taxonomy is None:
        return 1.0 if a == b else 0.0
    return taxonomy.wup(a, b)


def mu_thresholded(
        a: str,
        b: str,
        taxonomy: Optional[Taxonomy],
        threshold: float,
        down_weight: float = DOWN_WEIGHT) -> float:
    """WUP if it reaches `threshold`, else `down_weight` times WUP."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f'threshold must lie in [0, 1], got {threshold}')
    similarity = wup_similarity(a, b, taxonomy)
    if similarity >= threshold:
        return similarity
    return down_weight * similarity
