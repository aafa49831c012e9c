"""
Post-inference mapping of naive-concatenation posteriors, mIoU evaluation and
the tournament that settles conflicting subset hypotheses.

The score of a class c of the evaluated dataset is its own posterior plus the
posteriors of every foreign class it is related to:

    S(c) = P(c) + sum of P(f) over foreign f with c ∩ f != ∅

A pixel whose best score is 0 carries all of its mass on unrelated foreign
classes; it is a foreign prediction and maps to void.
"""
import logging
import multiprocessing
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import partial

import numpy as np

from . import conf
from .exceptions import DimensionMismatch, EmptyInputError, TaxonomyMismatch, UnknownClassError
from .graph import classify
from .models import ConcatSpace, RelationHypothesis, RelationKind
from .serializers import ref_from_dict, write_json_lines

logger = logging.getLogger(__name__)

ACCEPTED = 'accepted'
DROPPED = 'dropped'


class RelationSet:
    """Immutable set of accepted OVERLAP and SUBSET hypotheses."""

    def __init__(self, relations=()):
        self._relations = frozenset(relations)
        self._partners = defaultdict(set)
        self._between = defaultdict(list)
        for hypothesis in self._relations:
            self._partners[hypothesis.subject].add(hypothesis.object)
            self._partners[hypothesis.object].add(hypothesis.subject)
            self._between[frozenset((hypothesis.subject, hypothesis.object))].append(hypothesis)

    def __iter__(self):
        return iter(self.sorted())

    def __len__(self):
        return len(self._relations)

    def __contains__(self, hypothesis):
        return hypothesis in self._relations

    def __eq__(self, other):
        if not isinstance(other, RelationSet):
            return NotImplemented
        return self._relations == other._relations

    def __hash__(self):
        return hash(self._relations)

    def __repr__(self):
        return f"RelationSet({[str(h) for h in self.sorted()]})"

    def sorted(self):
        return sorted(self._relations, key=lambda h: h.sort_key)

    def with_relation(self, hypothesis):
        return RelationSet(self._relations | {hypothesis})

    def union(self, relations):
        return RelationSet(self._relations | frozenset(relations))

    def related(self, first, second):
        return second in self._partners.get(first, ())

    def related_to(self, ref):
        return sorted(self._partners.get(ref, ()))

    def refs(self):
        return sorted(self._partners)

    def contradictions(self):
        """
        Pairs of relations that together make two classes of one dataset
        intersect: a subset x < y next to any relation between x and another
        class of y's dataset.
        """
        found = []
        for hypothesis in self.sorted():
            if hypothesis.kind != RelationKind.SUBSET:
                continue
            for partner in self.related_to(hypothesis.subject):
                if partner.dataset_id != hypothesis.object.dataset_id or partner == hypothesis.object:
                    continue
                for other in sorted(self._between[frozenset((hypothesis.subject, partner))],
                                    key=lambda h: h.sort_key):
                    found.append((hypothesis, other))
        return found

    def is_consistent(self):
        return not self.contradictions()

    def as_list(self):
        return [h.as_dict() for h in self.sorted()]

    @classmethod
    def from_list(cls, payload):
        return cls(
            RelationHypothesis(RelationKind(item['kind']), ref_from_dict(item['subject']),
                               ref_from_dict(item['object']), int(item.get('support', 0)))
            for item in payload
        )


def base_relations(classification):
    """Overlaps and subset hypotheses that take part in no conflict."""
    return RelationSet(classification.overlaps + classification.subsets)


# --- relation-aware scores --------------------------------------------------

def score_columns(relations, eval_taxonomy, space):
    """
    For every class of ``eval_taxonomy`` the concatenated-space columns summed
    into its score: its own column first, then related foreign columns in
    ascending order.
    """
    if eval_taxonomy.dataset_id not in (t.dataset_id for t in space.taxonomies):
        raise TaxonomyMismatch(f"'{eval_taxonomy.dataset_id}' is not part of {space.dataset_id}")
    for ref in relations.refs():
        try:
            space.index(ref)
        except (KeyError, IndexError):
            raise UnknownClassError(f"relation references {ref}, unknown in {space.dataset_id}")
    columns = []
    for ref in eval_taxonomy.refs():
        foreign = sorted(space.index(partner) for partner in relations.related_to(ref)
                         if partner.dataset_id != eval_taxonomy.dataset_id)
        columns.append([space.index(ref)] + foreign)
    return columns


def _dense(posteriors, size, start, stop):
    classes = posteriors.class_indices[start:stop]
    dense = np.zeros((classes.shape[0], size), dtype=np.float64)
    rows = np.arange(classes.shape[0])[:, None]
    dense[rows, classes] = posteriors.probabilities[start:stop].astype(np.float64)
    return dense


def _score_rows(posteriors, columns, size, start, stop):
    dense = _dense(posteriors, size, start, stop)
    scores = np.empty((dense.shape[0], len(columns)), dtype=np.float64)
    for i, cols in enumerate(columns):
        scores[:, i] = dense[:, cols[0]]
        for col in cols[1:]:
            scores[:, i] += dense[:, col]
    return scores


def _check_posteriors(posteriors, space):
    if posteriors.taxonomy_id != space.dataset_id:
        raise TaxonomyMismatch(
            f"posteriors are over '{posteriors.taxonomy_id}', expected '{space.dataset_id}'")


def score(posteriors, relations, eval_taxonomy, space):
    """Per-pixel scores over the classes of ``eval_taxonomy``, shape (pixels, |T|)."""
    _check_posteriors(posteriors, space)
    columns = score_columns(relations, eval_taxonomy, space)
    return _score_rows(posteriors, columns, len(space), 0, posteriors.class_indices.shape[0])


def predict(scores, void):
    """Argmax of the scores, lowest index on ties; ``void`` where every score is 0."""
    labels = np.argmax(scores, axis=1).astype(np.int64)
    labels[scores.max(axis=1) <= 0] = void
    return labels


# --- mIoU -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MiouResult:
    """
    Integer intersections and unions per class; classes absent from both
    ground truth and prediction have union 0 and are left out of the mean.
    """
    taxonomy_id: str
    classes: tuple
    intersections: np.ndarray
    unions: np.ndarray

    @classmethod
    def from_confusion(cls, taxonomy, confusion):
        size = len(taxonomy)
        intersections = np.diag(confusion[:, :size]).astype(np.int64)
        unions = confusion.sum(axis=1) + confusion[:, :size].sum(axis=0) - intersections
        return cls(taxonomy.dataset_id, taxonomy.classes, intersections, unions.astype(np.int64))

    def present(self):
        return [i for i in range(len(self.classes)) if self.unions[i] > 0]

    def iou(self):
        return {
            self.classes[i]: (float(Fraction(int(self.intersections[i]), int(self.unions[i])))
                              if self.unions[i] > 0 else None)
            for i in range(len(self.classes))
        }

    @property
    def miou(self):
        present = self.present()
        if not present:
            return 0.0
        total = sum(Fraction(int(self.intersections[i]), int(self.unions[i])) for i in present)
        return float(total / len(present))

    def as_dict(self):
        return {
            'dataset_id': self.taxonomy_id,
            'miou': self.miou,
            'iou': self.iou(),
            'intersections': [int(value) for value in self.intersections],
            'unions': [int(value) for value in self.unions],
        }


def confusion_from_labels(gt, predicted, size):
    """
    Confusion counts of shape (size, size + 1); the last column collects
    pixels predicted as void. Void ground-truth pixels are ignored.
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    valid = gt.valid
    flat = gt.labels[valid].astype(np.int64) * (size + 1) + predicted[valid]
    return np.bincount(flat, minlength=size * (size + 1)).reshape(size, size + 1)


def _record_confusion(record, columns, taxonomy_size, space_size, chunk):
    posteriors = record.posteriors
    gt = record.ground_truth
    pixels = posteriors.class_indices.shape[0]
    counts = np.zeros((taxonomy_size, taxonomy_size + 1), dtype=np.int64)
    for start in range(0, pixels, chunk):
        stop = min(start + chunk, pixels)
        predicted = predict(_score_rows(posteriors, columns, space_size, start, stop), taxonomy_size)
        labels = gt.labels[start:stop]
        valid = labels != gt.void_label
        flat = labels[valid].astype(np.int64) * (taxonomy_size + 1) + predicted[valid]
        counts += np.bincount(flat, minlength=taxonomy_size * (taxonomy_size + 1)).reshape(counts.shape)
    return counts


def _chunk_confusion(records, columns, taxonomy_size, space_size, chunk):
    counts = np.zeros((taxonomy_size, taxonomy_size + 1), dtype=np.int64)
    for record in records:
        counts += _record_confusion(record, columns, taxonomy_size, space_size, chunk)
    return counts


def evaluate_miou(records, relations, taxonomy, space, workers=1):
    """
    mIoU of the naive-concatenation model on ``records`` of one dataset, with
    predictions mapped into that dataset through ``relations``.
    """
    records = list(records)
    if not records:
        raise EmptyInputError(f"no evaluation records for '{taxonomy.dataset_id}'")
    for record in records:
        if record.ground_truth.taxonomy_id != taxonomy.dataset_id:
            raise TaxonomyMismatch(
                f"ground truth is over '{record.ground_truth.taxonomy_id}', expected '{taxonomy.dataset_id}'")
        _check_posteriors(record.posteriors, space)
        record.ground_truth.check_range(len(taxonomy))
    columns = score_columns(relations, taxonomy, space)
    chunk = conf.chunk_pixels()
    func = partial(_chunk_confusion, columns=columns, taxonomy_size=len(taxonomy),
                   space_size=len(space), chunk=chunk)
    if workers <= 1 or len(records) <= 1:
        confusion = func(records)
    else:
        confusion = np.zeros((len(taxonomy), len(taxonomy) + 1), dtype=np.int64)
        size = max(1, -(-len(records) // (workers * 4)))
        with multiprocessing.Pool(workers) as pool:
            for partial_counts in pool.imap(func, [records[i:i + size] for i in range(0, len(records), size)]):
                confusion += partial_counts
    result = MiouResult.from_confusion(taxonomy, confusion)
    logger.debug(f"mIoU on '{taxonomy.dataset_id}' with {len(relations)} relation(s): {result.miou:.6f}")
    return result


def evaluate_predictions(pairs, taxonomy):
    """mIoU of (ground truth, prediction) raster pairs over one taxonomy; void predictions count as misses."""
    pairs = list(pairs)
    if not pairs:
        raise EmptyInputError(f"no prediction rasters for '{taxonomy.dataset_id}'")
    size = len(taxonomy)
    confusion = np.zeros((size, size + 1), dtype=np.int64)
    for gt, prediction in pairs:
        for raster in (gt, prediction):
            if raster.taxonomy_id != taxonomy.dataset_id:
                raise TaxonomyMismatch(f"raster is over '{raster.taxonomy_id}', expected '{taxonomy.dataset_id}'")
            raster.check_range(size)
        if (gt.width, gt.height) != (prediction.width, prediction.height):
            raise DimensionMismatch("ground truth and prediction rasters differ in size")
        predicted = np.where(prediction.valid, prediction.labels.astype(np.int64), size)
        confusion += confusion_from_labels(gt, predicted, size)
    return MiouResult.from_confusion(taxonomy, confusion)


# --- tournament -------------------------------------------------------------

@dataclass(frozen=True)
class ResolutionResult:
    relations: RelationSet
    dropped: tuple
    log: tuple
    evaluations: int


def _default_evaluate(workers):
    def evaluate(records, relations, taxonomy, space):
        return evaluate_miou(records, relations, taxonomy, space, workers=workers).miou
    return evaluate


def resolve(conflicts, base, eval_data, space, evaluate=None, workers=1):
    """
    Settles every ConflictPair, one at a time, in descending combined support.

    Both candidate hypotheses of every pair are evaluated on every dataset of
    ``eval_data`` (a mapping dataset_id -> records), so the tournament costs
    exactly 2 * N_C * N_D evaluations. The candidate with the higher average
    mIoU wins, then the one with higher support, then the canonically smaller.
    Accepting an edge drops every undecided edge it conflicts with; a later
    pair whose outcome is already fixed reuses it.
    """
    evaluate = evaluate or _default_evaluate(workers)
    conflicts = sorted(conflicts, key=lambda pair: pair.sort_key)
    datasets = sorted(eval_data)
    if conflicts and not datasets:
        raise EmptyInputError("conflict resolution needs evaluation data for at least one dataset")
    for dataset_id in datasets:
        space.taxonomy(dataset_id)

    opponents = defaultdict(set)
    for pair in conflicts:
        opponents[pair.hypothesis_a.subject].add(pair.hypothesis_b.subject)
        opponents[pair.hypothesis_b.subject].add(pair.hypothesis_a.subject)

    state = {}
    accepted = base
    evaluations = 0
    log = []
    for round_number, pair in enumerate(conflicts, 1):
        candidates = {'a': pair.hypothesis_a, 'b': pair.hypothesis_b}
        per_dataset = {}
        for label, hypothesis in candidates.items():
            relations = accepted.with_relation(hypothesis)
            per_dataset[label] = {}
            for dataset_id in datasets:
                per_dataset[label][dataset_id] = float(
                    evaluate(eval_data[dataset_id], relations, space.taxonomy(dataset_id), space))
                evaluations += 1
        means = {label: sum(values[d] for d in datasets) / len(datasets) for label, values in per_dataset.items()}

        state_a = state.get(pair.hypothesis_a.subject)
        state_b = state.get(pair.hypothesis_b.subject)
        dropped_now = []
        if state_a is None and state_b is None:
            forced = False
            winner = sorted(candidates, key=lambda label: (-means[label], -candidates[label].support,
                                                           candidates[label].sort_key))[0]
            source = candidates[winner].subject
            state[source] = ACCEPTED
            accepted = accepted.with_relation(candidates[winner])
            for opponent in sorted(opponents[source]):
                if state.get(opponent) is None:
                    state[opponent] = DROPPED
                    dropped_now.append(opponent)
        else:
            forced = True
            survivors = [label for label in candidates if state.get(candidates[label].subject) != DROPPED]
            winner = survivors[0] if survivors else None

        log.append({
            'round': round_number,
            'triplet': [ref.as_dict() for ref in pair.triplet],
            'hypothesis_a': pair.hypothesis_a.as_dict(),
            'hypothesis_b': pair.hypothesis_b.as_dict(),
            'miou_a': per_dataset['a'],
            'miou_b': per_dataset['b'],
            'mean_a': means['a'],
            'mean_b': means['b'],
            'winner': winner,
            'forced': forced,
            'dropped': [ref.as_dict() for ref in dropped_now],
            'evaluations': evaluations,
        })
        logger.debug(f"Round {round_number}: {pair.hypothesis_a} ({means['a']:.6f}) vs "
                     f"{pair.hypothesis_b} ({means['b']:.6f}) -> {winner}{' (forced)' if forced else ''}")

    surviving = {
        hypothesis
        for pair in conflicts
        for hypothesis in (pair.hypothesis_a, pair.hypothesis_b)
        if state.get(hypothesis.subject) != DROPPED
    }
    dropped = tuple(sorted(source for source, value in state.items() if value == DROPPED))
    relations = base.union(surviving)
    logger.info(f"Resolved {len(conflicts)} conflict pair(s) over {len(datasets)} dataset(s) "
                f"with {evaluations} evaluations; dropped {len(dropped)} edge(s)")
    return ResolutionResult(relations, dropped, tuple(log), evaluations)


def resolve_graph(graph, eval_data, space=None, evaluate=None, workers=1):
    """Classifies ``graph``, runs the tournament and returns the disambiguated graph with the result."""
    space = space or ConcatSpace(graph.taxonomy_a, graph.taxonomy_b)
    classification = classify(graph)
    result = resolve(classification.conflicts, base_relations(classification), eval_data, space,
                     evaluate=evaluate, workers=workers)
    resolved = graph.without_edges(result.dropped)
    remaining = classify(resolved).conflict_count
    if remaining:
        logger.error(f"{remaining} conflict pair(s) survived resolution")
    return resolved, result


def write_log(result, path):
    """One JSON line per settled conflict pair."""
    write_json_lines(path, list(result.log))
