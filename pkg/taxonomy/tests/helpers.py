"""Builders shared by the test modules."""
import numpy as np

from taxonomy.graph import build_graph
from taxonomy.ingestion import CooccurrenceMatrix, LabelRaster, PosteriorDump
from taxonomy.models import ConcatSpace, Taxonomy


def make_taxonomy(dataset_id, classes):
    if isinstance(classes, int):
        classes = [f"c{i}" for i in range(classes)]
    return Taxonomy(dataset_id, classes)


def make_matrix(rows, cols, counts):
    return CooccurrenceMatrix(rows.dataset_id, cols.dataset_id, rows.classes, cols.classes,
                              np.asarray(counts, dtype=np.int64))


def successor_matrix(rows, cols, successors, count=10):
    """Row i puts ``count`` pixels on column successors[i]; None leaves the row empty."""
    counts = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for row, column in enumerate(successors):
        if column is not None:
            counts[row, column] = count
    return make_matrix(rows, cols, counts)


def graph_from_successors(taxonomy_a, taxonomy_b, successors_a, successors_b, count=10):
    return build_graph(successor_matrix(taxonomy_a, taxonomy_b, successors_a, count),
                       successor_matrix(taxonomy_b, taxonomy_a, successors_b, count),
                       taxonomy_a, taxonomy_b)


def figure_graph():
    """
    7 + 7 classes: three 2-cycles, two one-way edges into them and two
    inconsistent triplets ending in an unobserved class.
    """
    a, b = make_taxonomy('a', 7), make_taxonomy('b', 7)
    return graph_from_successors(a, b, [0, 1, 2, 0, 4, None, 6], [0, 1, 2, 1, 5, 6, None])


def chain_graph(chains):
    """``chains`` inconsistent triplets a[2i] -> b[i] -> a[2i+1], each a[2i+1] unobserved."""
    a, b = make_taxonomy('a', 2 * chains), make_taxonomy('b', chains)
    successors_a = [i // 2 if i % 2 == 0 else None for i in range(2 * chains)]
    successors_b = [2 * i + 1 for i in range(chains)]
    return graph_from_successors(a, b, successors_a, successors_b)


def road_zebra():
    ade = Taxonomy('ade', ['road', 'sky'])
    vistas = Taxonomy('vistas', ['road', 'zebra'])
    return ade, vistas, ConcatSpace(ade, vistas)


def raster(labels, taxonomy_id, width=None, void_label=255):
    labels = np.asarray(labels)
    width = width or labels.size
    return LabelRaster(width, labels.size // width, labels.astype(np.uint8 if void_label == 255 else np.uint16),
                       taxonomy_id, void_label)


def one_hot_posteriors(predicted, space, k=2):
    """Dump putting probability 1 on ``predicted[i]`` and 0 on the next classes."""
    predicted = np.asarray(predicted, dtype=np.int64)
    classes = np.stack([(predicted + offset) % len(space) for offset in range(k)], axis=1)
    probabilities = np.zeros(classes.shape, dtype=np.float32)
    probabilities[:, 0] = 1.0
    return PosteriorDump(predicted.size, 1, classes, probabilities, space.dataset_id)


def random_posteriors(rng, pixels, size, k, taxonomy_id):
    classes = np.stack([rng.permutation(size)[:k] for _ in range(pixels)])
    probabilities = -np.sort(-rng.dirichlet(np.ones(k), size=pixels), axis=1)
    return PosteriorDump(pixels, 1, classes, probabilities.astype(np.float32), taxonomy_id)
