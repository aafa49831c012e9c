"""
The mcfp bipartite graph between two taxonomies and the classification of its
patterns into overlaps, subset hypotheses and conflicting hypothesis pairs.

Every observed class has exactly one outgoing edge, pointing to its most common
foreign prediction (mcfp). Reading the graph:

    c_i -> c_j -> c_i                  overlap (2-cycle)
    c_i -> c_j, c_j's edge elsewhere   subset hypothesis c_i < c_j
    c_i -> c_j -> c_k, c_k -/-> c_j    conflict: c_i < c_j versus c_j < c_k
"""
import enum
import logging
from dataclasses import dataclass

import networkx as nx
import numpy as np
from django.template.loader import render_to_string

from .exceptions import TaxonomyMismatch, UnknownClassError
from .models import ClassRef, ConflictPair, RelationHypothesis, Taxonomy
from .serializers import ref_from_dict, taxonomy_from_dict, taxonomy_to_dict

logger = logging.getLogger(__name__)


class VertexStatus(str, enum.Enum):
    OBSERVED = 'observed'
    UNOBSERVED = 'unobserved'
    FILTERED = 'filtered'
    DROPPED = 'dropped'


class EdgeTag(str, enum.Enum):
    OVERLAP = 'overlap'
    SUBSET = 'subset'
    CONFLICT = 'conflict'


@dataclass(frozen=True, order=True)
class Edge:
    source: ClassRef
    target: ClassRef
    count: int

    def as_dict(self):
        return {'source': self.source.as_dict(), 'target': self.target.as_dict(), 'count': self.count}


def mcfp(matrix, row):
    """
    Most common foreign prediction of a row class: the argmax column, lowest
    index on ties, or None when the row was never observed.
    """
    if not 0 <= row < matrix.shape[0]:
        raise UnknownClassError(f"row {row} out of range for '{matrix.row_taxonomy_id}' "
                                f"with {matrix.shape[0]} classes")
    counts = matrix.counts[row]
    if not counts.any():
        return None
    return int(np.argmax(counts))


class BipartiteGraph:
    """
    Directed bipartite graph over the classes of two taxonomies. Instances are
    never mutated; removing edges returns a new graph.
    """

    def __init__(self, taxonomy_a, taxonomy_b, digraph, statuses, dropped_edges=()):
        self.taxonomy_a = taxonomy_a
        self.taxonomy_b = taxonomy_b
        self._graph = digraph
        self._statuses = dict(statuses)
        self._dropped_edges = tuple(sorted(dropped_edges))

    @property
    def taxonomies(self):
        return (self.taxonomy_a, self.taxonomy_b)

    def taxonomy(self, dataset_id):
        for taxonomy in self.taxonomies:
            if taxonomy.dataset_id == dataset_id:
                return taxonomy
        raise KeyError(f"'{dataset_id}' is not part of this graph")

    def vertices(self):
        return self.taxonomy_a.refs() + self.taxonomy_b.refs()

    def status(self, ref):
        return self._statuses[ref]

    def successor(self, ref):
        successors = list(self._graph.successors(ref))
        return successors[0] if successors else None

    def predecessors(self, ref):
        return sorted(self._graph.predecessors(ref))

    def count(self, source):
        target = self.successor(source)
        return self._graph.edges[source, target]['count'] if target is not None else 0

    def edges(self):
        return sorted(Edge(u, v, data['count']) for u, v, data in self._graph.edges(data=True))

    def __len__(self):
        return self._graph.number_of_edges()

    def name(self, ref):
        return self.taxonomy(ref.dataset_id).qualified_name(ref.class_index)

    def without_edges(self, sources):
        """A copy without the outgoing edges of the given vertices."""
        digraph = self._graph.copy()
        statuses = dict(self._statuses)
        dropped = list(self._dropped_edges)
        for source in sources:
            target = self.successor(source)
            if target is None:
                continue
            dropped.append(Edge(source, target, self.count(source)))
            digraph.remove_edge(source, target)
            statuses[source] = VertexStatus.DROPPED
        return BipartiteGraph(self.taxonomy_a, self.taxonomy_b, digraph, statuses, dropped)

    @property
    def dropped_edges(self):
        return self._dropped_edges


def _taxonomy_from_matrix(dataset_id, classes):
    return Taxonomy(dataset_id, classes)


def build_graph(m_ab, m_ba, taxonomy_a=None, taxonomy_b=None, min_support=0.0):
    """
    One outgoing edge per vertex, to its mcfp target. Rows that are all zero
    are unobserved and get no edge. With ``min_support`` > 0, edges carrying
    less than that fraction of their row total are filtered out.
    """
    if (m_ab.row_taxonomy_id, m_ab.col_taxonomy_id) != (m_ba.col_taxonomy_id, m_ba.row_taxonomy_id):
        raise TaxonomyMismatch(
            f"matrices do not cover the same pair: {m_ab.row_taxonomy_id}x{m_ab.col_taxonomy_id} "
            f"and {m_ba.row_taxonomy_id}x{m_ba.col_taxonomy_id}")
    if m_ab.row_classes != m_ba.col_classes or m_ab.col_classes != m_ba.row_classes:
        raise TaxonomyMismatch("class lists of the two matrices disagree")
    taxonomy_a = taxonomy_a or _taxonomy_from_matrix(m_ab.row_taxonomy_id, m_ab.row_classes)
    taxonomy_b = taxonomy_b or _taxonomy_from_matrix(m_ab.col_taxonomy_id, m_ab.col_classes)
    if taxonomy_a.dataset_id != m_ab.row_taxonomy_id or taxonomy_a.classes != m_ab.row_classes:
        raise TaxonomyMismatch(f"taxonomy '{taxonomy_a.dataset_id}' does not match the matrix rows")
    if taxonomy_b.dataset_id != m_ab.col_taxonomy_id or taxonomy_b.classes != m_ab.col_classes:
        raise TaxonomyMismatch(f"taxonomy '{taxonomy_b.dataset_id}' does not match the matrix columns")

    digraph = nx.DiGraph()
    statuses = {}
    for matrix, source_taxonomy, target_taxonomy in ((m_ab, taxonomy_a, taxonomy_b),
                                                     (m_ba, taxonomy_b, taxonomy_a)):
        for row in range(len(source_taxonomy)):
            source = source_taxonomy.ref(row)
            digraph.add_node(source)
            column = mcfp(matrix, row)
            if column is None:
                statuses[source] = VertexStatus.UNOBSERVED
                logger.warning(f"Class {source_taxonomy.qualified_name(row)} was never observed; "
                               f"it gets no outgoing edge")
                continue
            count = int(matrix.counts[row, column])
            row_total = int(matrix.counts[row].sum())
            if min_support > 0 and count < min_support * row_total:
                statuses[source] = VertexStatus.FILTERED
                logger.warning(f"Edge {source} -> {target_taxonomy.ref(column)} carries {count}/{row_total} "
                               f"pixels, below min_support {min_support}")
                continue
            statuses[source] = VertexStatus.OBSERVED
            digraph.add_edge(source, target_taxonomy.ref(column), count=count)
            logger.debug(f"mcfp({source_taxonomy.qualified_name(row)}) = "
                         f"{target_taxonomy.qualified_name(column)} ({count}/{row_total})")

    graph = BipartiteGraph(taxonomy_a, taxonomy_b, digraph, statuses)
    logger.info(f"Built bipartite graph {taxonomy_a.dataset_id}/{taxonomy_b.dataset_id}: "
                f"{len(taxonomy_a) + len(taxonomy_b)} vertices, {len(graph)} edges")
    return graph


@dataclass(frozen=True)
class Classification:
    overlaps: tuple
    subsets: tuple
    conflicts: tuple

    @property
    def conflict_count(self):
        return len(self.conflicts)

    def conflicting_sources(self):
        sources = set()
        for pair in self.conflicts:
            sources.add(pair.hypothesis_a.subject)
            sources.add(pair.hypothesis_b.subject)
        return sources

    def tags(self):
        """EdgeTag of every edge, keyed by its source vertex."""
        tags = {}
        for hypothesis in self.overlaps:
            tags[hypothesis.subject] = tags[hypothesis.object] = EdgeTag.OVERLAP
        for hypothesis in self.subsets:
            tags[hypothesis.subject] = EdgeTag.SUBSET
        for source in self.conflicting_sources():
            tags[source] = EdgeTag.CONFLICT
        return tags

    def summary(self):
        return {
            'overlaps': len(self.overlaps),
            'subsets': len(self.subsets),
            'conflicts': len(self.conflicts),
            'relations': len(self.overlaps) + len(self.subsets) + len(self.conflicting_sources()),
        }

    def as_dict(self):
        return {
            'overlaps': [h.as_dict() for h in self.overlaps],
            'subsets': [h.as_dict() for h in self.subsets],
            'conflicts': [pair.as_dict() for pair in self.conflicts],
        }


def classify(graph):
    """
    Accounts for every edge exactly once: as part of an overlap, as a subset
    hypothesis, or as a member of one or more conflict pairs.
    """
    overlaps = {}
    conflicts = []
    one_way = []
    for source in graph.vertices():
        target = graph.successor(source)
        if target is None:
            continue
        onward = graph.successor(target)
        if onward == source:
            hypothesis = RelationHypothesis.overlap(source, target, graph.count(source) + graph.count(target))
            overlaps[(hypothesis.subject, hypothesis.object)] = hypothesis
            continue
        one_way.append(source)
        if onward is not None and graph.successor(onward) != target:
            conflicts.append(ConflictPair(
                RelationHypothesis.subset(source, target, graph.count(source)),
                RelationHypothesis.subset(target, onward, graph.count(target)),
            ))

    in_conflict = set()
    for pair in conflicts:
        in_conflict.add(pair.hypothesis_a.subject)
        in_conflict.add(pair.hypothesis_b.subject)
    subsets = [
        RelationHypothesis.subset(source, graph.successor(source), graph.count(source))
        for source in one_way if source not in in_conflict
    ]
    result = Classification(
        overlaps=tuple(sorted(overlaps.values(), key=lambda h: h.sort_key)),
        subsets=tuple(sorted(subsets, key=lambda h: h.sort_key)),
        conflicts=tuple(sorted(conflicts, key=lambda pair: pair.triplet)),
    )
    logger.info(f"Classified {len(graph)} edges: {len(result.overlaps)} overlaps, "
                f"{len(result.subsets)} subset hypotheses, {len(result.conflicts)} conflict pairs")
    return result


# --- export -----------------------------------------------------------------

def graph_to_dict(graph, classification=None):
    classification = classification or classify(graph)
    tags = classification.tags()
    return {
        'taxonomy_a': taxonomy_to_dict(graph.taxonomy_a),
        'taxonomy_b': taxonomy_to_dict(graph.taxonomy_b),
        'vertices': [
            {**ref.as_dict(), 'name': graph.name(ref), 'status': graph.status(ref).value}
            for ref in graph.vertices()
        ],
        'edges': [
            {**edge.as_dict(), 'tag': tags[edge.source].value}
            for edge in graph.edges()
        ],
        'dropped_edges': [edge.as_dict() for edge in graph.dropped_edges],
        'classification': classification.as_dict(),
    }


def graph_from_dict(payload):
    taxonomy_a = taxonomy_from_dict(payload['taxonomy_a'])
    taxonomy_b = taxonomy_from_dict(payload['taxonomy_b'])
    digraph = nx.DiGraph()
    statuses = {}
    for vertex in payload['vertices']:
        ref = ref_from_dict(vertex)
        digraph.add_node(ref)
        statuses[ref] = VertexStatus(vertex['status'])
    for edge in payload['edges']:
        digraph.add_edge(ref_from_dict(edge['source']), ref_from_dict(edge['target']), count=int(edge['count']))
    dropped = [
        Edge(ref_from_dict(edge['source']), ref_from_dict(edge['target']), int(edge['count']))
        for edge in payload.get('dropped_edges', [])
    ]
    return BipartiteGraph(taxonomy_a, taxonomy_b, digraph, statuses, dropped)


def render_dot(graph, classification=None):
    """DOT source of the graph with edges colored by classification."""
    classification = classification or classify(graph)
    tags = classification.tags()
    colors = {EdgeTag.OVERLAP: 'green', EdgeTag.SUBSET: 'orange', EdgeTag.CONFLICT: 'red'}
    sides = []
    for taxonomy in graph.taxonomies:
        sides.append({
            'dataset_id': taxonomy.dataset_id,
            'vertices': [
                {'id': str(ref), 'label': graph.name(ref),
                 'dashed': graph.status(ref) != VertexStatus.OBSERVED}
                for ref in taxonomy.refs()
            ],
        })
    edges = [
        {'source': str(edge.source), 'target': str(edge.target), 'count': edge.count,
         'color': colors[tags[edge.source]]}
        for edge in graph.edges()
    ]
    name = f"{graph.taxonomy_a.dataset_id}/{graph.taxonomy_b.dataset_id}"
    return render_to_string('taxonomy/graph.dot', {'name': name, 'sides': sides, 'edges': edges})
