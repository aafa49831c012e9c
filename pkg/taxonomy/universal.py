"""
Assembly of the universal taxonomy from a disambiguated bipartite graph, and
the 1:N mapping artifacts derived from it.

Every edge identifies one visual concept. A two-way edge collapses into one
universal class named after both vertices; a one-way edge inherits the name of
its source. Vertices without any edge become singleton universal classes.
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import InvalidUniversalTaxonomy, UnresolvedConflicts
from .graph import classify
from .ingestion import LabelRaster, void_for
from .models import UniversalClass, UniversalTaxonomy, validate_universal

logger = logging.getLogger(__name__)


def derive_name(graph, source, target=None):
    """
    One-way edge: the dataset-qualified name of its source. Two-way edge: both
    names joined by "/" in dataset order. No edge: the vertex's own name.
    """
    if target is None:
        return graph.name(source)
    if graph.successor(target) == source:
        first, second = sorted((source, target))
        return f"{graph.name(first)}/{graph.name(second)}"
    return graph.name(source)


def _deduplicate(names):
    seen = set(names)
    counts = {}
    result = []
    for name in names:
        counts[name] = counts.get(name, 0) + 1
        if counts[name] == 1:
            result.append(name)
            continue
        ordinal = counts[name]
        candidate = f"{name}-{ordinal}"
        while candidate in seen:
            ordinal += 1
            candidate = f"{name}-{ordinal}"
        seen.add(candidate)
        result.append(candidate)
    return result


def expected_size(graph):
    """
    |T_a| + |T_b| minus the mutual pairs, minus vertices that lost (or never
    had) their outgoing edge but still receive one.
    """
    vertices = graph.vertices()
    absorbed = sum(1 for ref in vertices if graph.successor(ref) is None and graph.predecessors(ref))
    return len(vertices) - mutual_pairs(graph) - absorbed


def mutual_pairs(graph):
    return sum(1 for ref in graph.vertices()
               if graph.successor(ref) is not None and graph.successor(graph.successor(ref)) == ref) // 2


def build_universal(graph):
    """
    Raises UnresolvedConflicts while the graph still contains inconsistent
    triplets.
    """
    classification = classify(graph)
    if classification.conflict_count:
        logger.error(f"Cannot build a universal taxonomy: {classification.conflict_count} unresolved conflicts")
        raise UnresolvedConflicts(classification.conflict_count)

    concepts = {}
    for source in graph.vertices():
        target = graph.successor(source)
        if target is not None:
            members = frozenset((source, target))
            if members not in concepts:
                concepts[members] = derive_name(graph, source, target)
        elif not graph.predecessors(source):
            concepts[frozenset((source,))] = derive_name(graph, source)

    ordered = sorted(concepts, key=lambda members: tuple(sorted(members)))
    names = _deduplicate([concepts[members] for members in ordered])
    universal_classes = [UniversalClass(name, members) for name, members in zip(names, ordered)]

    mappings = {}
    for taxonomy in graph.taxonomies:
        rows = [set() for _ in range(len(taxonomy))]
        for index, universal_class in enumerate(universal_classes):
            for ref in universal_class.members:
                if ref.dataset_id == taxonomy.dataset_id:
                    rows[ref.class_index].add(index)
        mappings[taxonomy.dataset_id] = [frozenset(row) for row in rows]

    universal = UniversalTaxonomy(universal_classes, mappings,
                                  {taxonomy.dataset_id: taxonomy for taxonomy in graph.taxonomies})
    errors = validate_universal(universal)
    if errors:
        raise InvalidUniversalTaxonomy(f"built universal taxonomy is invalid: {errors[0].messages[0]}")
    size = len(graph.taxonomy_a) + len(graph.taxonomy_b)
    logger.info(f"Built universal taxonomy for {graph.taxonomy_a.dataset_id}/{graph.taxonomy_b.dataset_id}: "
                f"{size} concatenated classes -> {len(universal)} universal classes "
                f"({mutual_pairs(graph)} mutual pairs)")
    return universal


def logit_report(graph, universal):
    return {
        'naive_concat': len(graph.taxonomy_a) + len(graph.taxonomy_b),
        'universal': len(universal),
        'mutual_pairs': mutual_pairs(graph),
    }


# --- partial labels ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PartialLabelMatrix:
    """
    Binary |T_d| x |U| matrix: entry (c, u) is 1 iff universal class u belongs
    to the mapping of dataset class c.
    """
    dataset_id: str
    classes: tuple
    universal_names: tuple
    matrix: np.ndarray

    def violations(self):
        problems = []
        for column in np.flatnonzero(self.matrix.sum(axis=0) > 1):
            problems.append(f"universal class '{self.universal_names[column]}' has more than one dataset class")
        for row in np.flatnonzero(self.matrix.sum(axis=1) < 1):
            problems.append(f"class '{self.classes[row]}' maps to no universal class")
        return problems

    def dataset_posteriors(self, universal_posteriors):
        """M_d . p: dataset class posteriors as sums of universal posteriors."""
        return dataset_posteriors(self, universal_posteriors)

    def to_frame(self):
        return pd.DataFrame(self.matrix, index=list(self.classes), columns=list(self.universal_names))


def partial_label_matrices(universal):
    errors = validate_universal(universal)
    if errors:
        messages = '; '.join(message for error in errors for message in error.messages)
        logger.error(f"Refusing to emit partial-label matrices: {messages}")
        raise InvalidUniversalTaxonomy(f"invalid universal taxonomy: {messages}")
    result = {}
    for dataset_id in universal.dataset_ids:
        rows = universal.mapping(dataset_id)
        matrix = np.zeros((len(rows), len(universal)), dtype=np.uint8)
        for class_index, targets in enumerate(rows):
            matrix[class_index, sorted(targets)] = 1
        taxonomy = universal.taxonomies.get(dataset_id)
        classes = taxonomy.classes if taxonomy is not None else tuple(str(i) for i in range(len(rows)))
        result[dataset_id] = PartialLabelMatrix(dataset_id, tuple(classes), tuple(universal.names), matrix)
    return result


def dataset_posteriors(partial_label_matrix, universal_posteriors):
    p = np.asarray(universal_posteriors, dtype=np.float64)
    return p @ partial_label_matrix.matrix.T.astype(np.float64)


def save_partial_label_matrix(partial_label_matrix, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = partial_label_matrix.to_frame()
    frame.index.name = partial_label_matrix.dataset_id
    frame.to_csv(path, lineterminator='\n')


def save_mapping_csv(universal, dataset_id, path):
    """One row per dataset class: its name and the names of its universal classes."""
    taxonomy = universal.taxonomies.get(dataset_id)
    rows = universal.mapping(dataset_id)
    frame = pd.DataFrame({
        'class': [taxonomy.classes[i] if taxonomy is not None else str(i) for i in range(len(rows))],
        'universal': ['|'.join(universal.names[u] for u in sorted(targets)) for targets in rows],
    })
    frame.index.name = 'class_index'
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, lineterminator='\n')


# --- inference --------------------------------------------------------------

def prediction_table(universal, dataset_id):
    """Lookup from universal class to the dataset class containing it, or void."""
    rows = universal.mapping(dataset_id)
    void = _void_of(universal, dataset_id)
    table = np.full(len(universal), void, dtype=np.int64)
    for class_index, targets in enumerate(rows):
        for target in targets:
            table[target] = class_index
    return table


def _void_of(universal, dataset_id):
    taxonomy = universal.taxonomies.get(dataset_id)
    if taxonomy is not None:
        return taxonomy.void_label
    return void_for(len(universal.mapping(dataset_id)))


def map_prediction(universal_pred, universal, dataset_id):
    """
    Maps a raster of universal labels into dataset ``dataset_id``. Universal
    classes outside the dataset's image are foreign predictions and become void.
    """
    universal_pred.check_range(len(universal))
    table = prediction_table(universal, dataset_id)
    void = _void_of(universal, dataset_id)
    labels = np.full(universal_pred.labels.shape, void, dtype=np.int64)
    valid = universal_pred.valid
    labels[valid] = table[universal_pred.labels[valid].astype(np.int64)]
    dtype = np.uint8 if void <= np.iinfo(np.uint8).max else np.uint16
    return LabelRaster(universal_pred.width, universal_pred.height, labels.astype(dtype), dataset_id, void)
