"""
Unification of more than two datasets by a binary tree of pairwise merges.

Each merge node runs the pairwise pipeline (graph, classification,
tournament, universal taxonomy) over its two sides. A merged pair becomes a
meta-dataset whose flat taxonomy is the list of its universal classes. The
mapping of an original dataset into the final universal taxonomy is the
composition of the mappings along its path to the root.

Evidence for a node comes from an EvidenceProvider: count matrices for the
pair, and evaluation records for each side when the tournament needs them.
Meta-datasets have no ground truth, so their rows are pseudo-labels
(coincidence counting) and their evaluation targets are pseudo-labels too.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from .exceptions import BrokenMappingChain, EmptyInputError, InvalidUniversalTaxonomy, ScheduleError, TaxonomyMismatch
from .graph import build_graph, classify
from .ingestion import RASTER_SUFFIXES, accumulate_files, load_eval_records, load_matrix, pair_files
from .models import ClassRef, ConcatSpace, UniversalClass, UniversalTaxonomy, concat_id, validate_universal
from .resolution import base_relations, resolve
from .serializers import read_json, save_taxonomy
from .universal import build_universal, logit_report

logger = logging.getLogger(__name__)


# --- schedule ---------------------------------------------------------------

@dataclass(frozen=True)
class MergeNode:
    left: object
    right: object

    @property
    def dataset_id(self):
        return concat_id(node_id(self.left), node_id(self.right))

    def leaves(self):
        result = []
        for child in (self.left, self.right):
            result.extend(child.leaves() if isinstance(child, MergeNode) else [child])
        return result

    def as_list(self):
        return [child.as_list() if isinstance(child, MergeNode) else child for child in (self.left, self.right)]


def node_id(node):
    """Dataset id of a schedule node, whether a leaf id or a MergeNode."""
    return node.dataset_id if isinstance(node, MergeNode) else node


def _parse_node(item, path):
    if isinstance(item, str):
        return item
    if not isinstance(item, list) or not item:
        raise ScheduleError(f"schedule entries must be dataset ids or non-empty lists, got {item!r}", path=path)
    children = [_parse_node(child, path) for child in item]
    node = children[0]
    for child in children[1:]:
        node = MergeNode(node, child)
    return node


class MergeSchedule:
    """
    Binary merge tree. Lists in the schedule file nest; a list of more than two
    entries is merged left to right.
    """

    def __init__(self, root):
        if not isinstance(root, MergeNode):
            raise ScheduleError("a merge schedule needs at least two datasets")
        leaves = root.leaves()
        repeated = sorted({leaf for leaf in leaves if leaves.count(leaf) > 1})
        if repeated:
            raise ScheduleError(f"datasets appear in more than one leaf: {', '.join(repeated)}")
        self.root = root

    @classmethod
    def parse(cls, payload, path='<memory>'):
        return cls(_parse_node(payload, str(path)))

    @classmethod
    def load(cls, path):
        return cls.parse(read_json(path), path)

    @classmethod
    def default(cls, dataset_ids):
        """Pairs neighbours left to right, then pairs of pairs, up to the root."""
        level = list(dataset_ids)
        if len(level) < 2:
            raise ScheduleError("a merge schedule needs at least two datasets")
        while len(level) > 1:
            paired = [MergeNode(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
            if len(level) % 2:
                paired.append(level[-1])
            level = paired
        return cls(level[0])

    def leaves(self):
        return self.root.leaves()

    def nodes(self):
        """Internal nodes in post-order: children before parents."""
        ordered = []

        def visit(node):
            if isinstance(node, MergeNode):
                visit(node.left)
                visit(node.right)
                ordered.append(node)

        visit(self.root)
        return ordered

    def check_covers(self, dataset_ids):
        expected, actual = set(dataset_ids), set(self.leaves())
        if expected != actual:
            raise ScheduleError(
                f"schedule leaves {sorted(actual)} do not match the datasets {sorted(expected)}",
                missing=sorted(expected - actual), unknown=sorted(actual - expected))

    def as_list(self):
        return self.root.as_list()


# --- meta-datasets ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MetaDataset:
    dataset_id: str
    member_datasets: tuple
    universal: UniversalTaxonomy
    provenance: MergeNode
    sides: tuple
    graph: object = None
    resolution: object = None
    stats: dict = field(default_factory=dict)

    @property
    def taxonomy(self):
        return self.universal.as_taxonomy(self.dataset_id)


def flat_taxonomy(side):
    """The flat Taxonomy view of a merge side."""
    return side.taxonomy if isinstance(side, MetaDataset) else side


def members_of(side):
    """Original datasets a merge side stands for."""
    return tuple(side.member_datasets) if isinstance(side, MetaDataset) else (side.dataset_id,)


class EvidenceProvider(Protocol):
    def matrices(self, taxonomy_a, taxonomy_b):
        """(rows a x cols b, rows b x cols a) count matrices for the pair."""

    def eval_records(self, taxonomy, space):
        """Records with labels over ``taxonomy`` and posteriors over ``space``."""

    def register(self, meta):
        """Called once a meta-dataset exists, before it takes part in a merge."""


def merge_pair(a, b, evidence, min_support=0.0, workers=1, evaluate=None, provenance=None):
    """
    Runs build_graph -> classify -> resolve -> build_universal for two
    (meta-)datasets and wraps the result as a MetaDataset.
    """
    taxonomy_a, taxonomy_b = flat_taxonomy(a), flat_taxonomy(b)
    shared = set(members_of(a)) & set(members_of(b))
    if shared:
        raise ScheduleError(f"sides of a merge share datasets: {', '.join(sorted(shared))}")
    m_ab, m_ba = evidence.matrices(taxonomy_a, taxonomy_b)
    graph = build_graph(m_ab, m_ba, taxonomy_a, taxonomy_b, min_support=min_support)
    classification = classify(graph)
    space = ConcatSpace(taxonomy_a, taxonomy_b)
    eval_data = {}
    if classification.conflict_count:
        eval_data = {taxonomy.dataset_id: evidence.eval_records(taxonomy, space) for taxonomy in space.taxonomies}
    result = resolve(classification.conflicts, base_relations(classification), eval_data, space,
                     evaluate=evaluate, workers=workers)
    resolved = graph.without_edges(result.dropped)
    universal = build_universal(resolved)
    provenance = provenance or MergeNode(taxonomy_a.dataset_id, taxonomy_b.dataset_id)
    stats = {
        **classification.summary(),
        'evaluations': result.evaluations,
        **logit_report(resolved, universal),
    }
    meta = MetaDataset(
        dataset_id=concat_id(taxonomy_a.dataset_id, taxonomy_b.dataset_id),
        member_datasets=members_of(a) + members_of(b),
        universal=universal,
        provenance=provenance,
        sides=(a, b),
        graph=resolved,
        resolution=result,
        stats=stats,
    )
    logger.info(f"Merged {taxonomy_a.dataset_id} and {taxonomy_b.dataset_id} into {meta.dataset_id}: "
                f"{stats['conflicts']} conflicts, {stats['evaluations']} evaluations, {len(universal)} classes")
    evidence.register(meta)
    return meta


@dataclass(frozen=True, eq=False)
class MergeResult:
    root: MetaDataset
    metas: tuple
    universal: UniversalTaxonomy

    def tree(self):
        def describe(side):
            if not isinstance(side, MetaDataset):
                return {'dataset_id': side.dataset_id, 'classes': len(side)}
            return {
                'dataset_id': side.dataset_id,
                'stats': side.stats,
                'children': [describe(child) for child in side.sides],
            }
        return describe(self.root)


def run_schedule(schedule, taxonomies, evidence, min_support=0.0, workers=1, evaluate=None):
    """Executes every merge node bottom-up and composes the final mappings."""
    schedule.check_covers(taxonomies)
    built = {}
    metas = []
    for node in schedule.nodes():
        sides = [built[node_id(child)] if isinstance(child, MergeNode) else taxonomies[child]
                 for child in (node.left, node.right)]
        meta = merge_pair(sides[0], sides[1], evidence, min_support=min_support, workers=workers,
                          evaluate=evaluate, provenance=node)
        built[node.dataset_id] = meta
        metas.append(meta)
    root = metas[-1]
    return MergeResult(root, tuple(metas), flatten(root))


# --- composition ------------------------------------------------------------

def _compose_row(row, step, dataset_id, class_index):
    if not row:
        raise BrokenMappingChain(f"class {dataset_id}[{class_index}] maps to no intermediate class")
    targets = set()
    for intermediate in sorted(row):
        if intermediate >= len(step) or not step[intermediate]:
            raise BrokenMappingChain(
                f"intermediate class {intermediate} reached from {dataset_id}[{class_index}] is unmapped",
                dataset=dataset_id, class_index=class_index)
        targets |= step[intermediate]
    return frozenset(targets)


def compose_mappings(meta):
    """
    Per original dataset, the mapping of its classes into ``meta``'s universal
    classes: c -> union of f_k(...f_2(f_1(c))).
    """
    composed = {}
    for side in meta.sides:
        side_id = flat_taxonomy(side).dataset_id
        step = meta.universal.mapping(side_id)
        if isinstance(side, MetaDataset):
            for dataset_id, rows in compose_mappings(side).items():
                composed[dataset_id] = tuple(_compose_row(row, step, dataset_id, c) for c, row in enumerate(rows))
        else:
            composed[side_id] = tuple(step)
    return composed


def leaf_taxonomies(meta):
    """Original taxonomies under ``meta`` by dataset id."""
    found = {}
    for side in meta.sides:
        if isinstance(side, MetaDataset):
            found.update(leaf_taxonomies(side))
        else:
            found[side.dataset_id] = side
    return found


def flatten(meta):
    """The final universal taxonomy expressed over the original datasets."""
    mappings = compose_mappings(meta)
    members = [set() for _ in meta.universal.universal_classes]
    for dataset_id, rows in mappings.items():
        for class_index, targets in enumerate(rows):
            for target in targets:
                members[target].add(ClassRef(dataset_id, class_index))
    classes = [UniversalClass(universal_class.name, members[i])
               for i, universal_class in enumerate(meta.universal.universal_classes)]
    universal = UniversalTaxonomy(classes, mappings, leaf_taxonomies(meta))
    errors = validate_universal(universal)
    if errors:
        messages = '; '.join(message for error in errors for message in error.messages)
        logger.error(f"Composed universal taxonomy of {meta.dataset_id} is invalid: {messages}")
        raise InvalidUniversalTaxonomy(f"composed universal taxonomy is invalid: {messages}")
    return universal


def membership_family(universal):
    """Universal classes as member sets, ignoring names and order."""
    return frozenset(universal_class.members for universal_class in universal.universal_classes)


# --- file evidence ----------------------------------------------------------

class DirectoryEvidence:
    """
    Evidence laid out per (meta-)dataset under ``root``:

        <id>/labels/                   ground truth, or pseudo-labels of a meta-dataset
        <id>/foreign/<other id>/       predictions of the other side's model
        <id>/cooccurrence/<other id>.csv   precomputed counts, used when present
        <id>/posteriors/<a+b>/         naive-concatenation posterior dumps
    """

    def __init__(self, root, max_images=None, workers=1):
        self.root = Path(root)
        self.max_images = max_images
        self.workers = workers

    def _matrix(self, rows, cols):
        precomputed = self.root / rows.dataset_id / 'cooccurrence' / f"{cols.dataset_id}.csv"
        if precomputed.exists():
            matrix = load_matrix(precomputed)
            if (matrix.row_taxonomy_id, matrix.col_taxonomy_id) != (rows.dataset_id, cols.dataset_id):
                raise TaxonomyMismatch(f"{precomputed} holds {matrix.row_taxonomy_id}x{matrix.col_taxonomy_id}")
            return matrix
        labels = self.root / rows.dataset_id / 'labels'
        foreign = self.root / rows.dataset_id / 'foreign' / cols.dataset_id
        if not labels.is_dir() or not foreign.is_dir():
            raise EmptyInputError(f"no evidence for {rows.dataset_id}x{cols.dataset_id} under {self.root}",
                                  expected=[str(labels), str(foreign)])
        pairs = pair_files(labels, foreign, RASTER_SUFFIXES, RASTER_SUFFIXES, max_images=self.max_images)
        return accumulate_files(pairs, rows, cols, workers=self.workers)

    def matrices(self, taxonomy_a, taxonomy_b):
        return self._matrix(taxonomy_a, taxonomy_b), self._matrix(taxonomy_b, taxonomy_a)

    def eval_records(self, taxonomy, space):
        labels = self.root / taxonomy.dataset_id / 'labels'
        posteriors = self.root / taxonomy.dataset_id / 'posteriors' / space.dataset_id
        if not posteriors.is_dir():
            raise EmptyInputError(f"no posterior dumps for {taxonomy.dataset_id} under {posteriors}")
        return load_eval_records(labels, posteriors, taxonomy, space, max_images=self.max_images)

    def register(self, meta):
        logger.info(f"Evidence for meta-dataset {meta.dataset_id} is read from {self.root / meta.dataset_id}")


def save_meta_taxonomy(meta, path):
    save_taxonomy(meta.taxonomy, path)
