"""
Domain types shared by every stage of the pipeline.

Nothing here is persisted in the database: taxonomies, relation hypotheses and
universal taxonomies are immutable value objects that travel between stages as
JSON files (see ``taxonomy.serializers``).
"""
import enum
from collections import Counter
from dataclasses import dataclass, field
from types import MappingProxyType

from django.core.exceptions import ValidationError
from django.utils.translation import gettext_lazy as _

VOID_8BIT = 255
VOID_16BIT = 65535


@dataclass(frozen=True, order=True)
class ClassRef:
    """A dataset-specific class, identified by (dataset_id, class_index)."""
    dataset_id: str
    class_index: int

    def __post_init__(self):
        if self.class_index < 0:
            raise ValueError(f"class_index must be non-negative, got {self.class_index}")

    def as_dict(self):
        return {'dataset': self.dataset_id, 'class': self.class_index}

    def __str__(self):
        return f"{self.dataset_id}[{self.class_index}]"


@dataclass(frozen=True)
class Taxonomy:
    """
    An ordered set of named, mutually disjoint classes of one dataset.

    Meta-dataset taxonomies (the universal classes of an earlier merge) carry
    names that are already dataset-qualified, so ``qualified_name`` leaves them
    untouched.
    """
    dataset_id: str
    classes: tuple
    void_label: int = VOID_8BIT
    is_meta: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'classes', tuple(self.classes))

    def __len__(self):
        return len(self.classes)

    def ref(self, index):
        if not 0 <= index < len(self.classes):
            raise IndexError(f"class index {index} out of range for '{self.dataset_id}'")
        return ClassRef(self.dataset_id, index)

    def refs(self):
        return [ClassRef(self.dataset_id, i) for i in range(len(self.classes))]

    def index(self, name):
        return self.classes.index(name)

    def qualified_name(self, index):
        if self.is_meta:
            return self.classes[index]
        return f"{self.dataset_id}-{self.classes[index]}"


def validate_taxonomy(taxonomy):
    """
    Returns the list of invariant violations of a taxonomy as ValidationErrors.
    An empty list means the taxonomy is valid.
    """
    errors = []
    if not taxonomy.classes:
        errors.append(ValidationError(
            _("Taxonomy '%(dataset)s' is empty."),
            code='empty',
            params={'dataset': taxonomy.dataset_id},
        ))
    for name, count in Counter(taxonomy.classes).items():
        if count > 1:
            errors.append(ValidationError(
                _("Duplicate class name '%(name)s' in taxonomy '%(dataset)s'."),
                code='duplicate_name',
                params={'name': name, 'dataset': taxonomy.dataset_id},
            ))
    if 0 <= taxonomy.void_label < len(taxonomy.classes):
        errors.append(ValidationError(
            _("void_label %(void)s collides with a class index of '%(dataset)s'."),
            code='void_collision',
            params={'void': taxonomy.void_label, 'dataset': taxonomy.dataset_id},
        ))
    return errors


class RelationKind(str, enum.Enum):
    OVERLAP = 'overlap'
    SUBSET = 'subset'


@dataclass(frozen=True)
class RelationHypothesis:
    """
    OVERLAP: subject and object denote the same concept (stored in canonical order).
    SUBSET: subject is a subset of object.
    Support is the co-occurrence mass behind the hypothesis and is not part of
    its identity.
    """
    kind: RelationKind
    subject: ClassRef
    object: ClassRef
    support: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.subject.dataset_id == self.object.dataset_id:
            raise ValueError(f"relation must link different datasets: {self.subject} / {self.object}")
        if self.support < 0:
            raise ValueError("support must be non-negative")
        if self.kind == RelationKind.OVERLAP and self.object < self.subject:
            subject, obj = self.object, self.subject
            object.__setattr__(self, 'subject', subject)
            object.__setattr__(self, 'object', obj)

    @classmethod
    def overlap(cls, first, second, support=0):
        return cls(RelationKind.OVERLAP, first, second, support)

    @classmethod
    def subset(cls, subset, superset, support=0):
        return cls(RelationKind.SUBSET, subset, superset, support)

    @property
    def sort_key(self):
        return (self.subject, self.object, self.kind.value)

    def as_dict(self):
        return {
            'kind': self.kind.value,
            'subject': self.subject.as_dict(),
            'object': self.object.as_dict(),
            'support': self.support,
        }

    def __str__(self):
        symbol = '~' if self.kind == RelationKind.OVERLAP else '<'
        return f"{self.subject} {symbol} {self.object}"


@dataclass(frozen=True)
class ConflictPair:
    """
    Two mutually exclusive subset hypotheses induced by an inconsistent triplet
    c_i -> c_j -> c_k: "c_i < c_j" (hypothesis_a) and "c_j < c_k" (hypothesis_b).
    """
    hypothesis_a: RelationHypothesis
    hypothesis_b: RelationHypothesis

    def __post_init__(self):
        a, b = self.hypothesis_a, self.hypothesis_b
        if a.kind != RelationKind.SUBSET or b.kind != RelationKind.SUBSET:
            raise ValueError("conflict pairs consist of subset hypotheses")
        if a.object != b.subject:
            raise ValueError(f"hypotheses do not chain: {a} / {b}")
        if a.subject.dataset_id != b.object.dataset_id or a.subject == b.object:
            raise ValueError(f"not an inconsistent triplet: {a} / {b}")

    @property
    def triplet(self):
        return (self.hypothesis_a.subject, self.hypothesis_a.object, self.hypothesis_b.object)

    @property
    def support(self):
        return self.hypothesis_a.support + self.hypothesis_b.support

    @property
    def sort_key(self):
        return (-self.support, self.triplet)

    def as_dict(self):
        return {
            'hypothesis_a': self.hypothesis_a.as_dict(),
            'hypothesis_b': self.hypothesis_b.as_dict(),
            'triplet': [ref.as_dict() for ref in self.triplet],
        }


@dataclass(frozen=True)
class UniversalClass:
    name: str
    members: frozenset

    def __post_init__(self):
        object.__setattr__(self, 'members', frozenset(self.members))

    @property
    def sort_key(self):
        return tuple(sorted(self.members))


@dataclass(frozen=True)
class UniversalTaxonomy:
    """
    Disjoint universal classes plus, per dataset, a total 1:N mapping from
    dataset class index to a set of universal class indices.
    """
    universal_classes: tuple
    mappings: MappingProxyType
    taxonomies: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    def __post_init__(self):
        object.__setattr__(self, 'universal_classes', tuple(self.universal_classes))
        object.__setattr__(self, 'mappings', MappingProxyType({
            dataset_id: tuple(frozenset(targets) for targets in rows)
            for dataset_id, rows in self.mappings.items()
        }))
        object.__setattr__(self, 'taxonomies', MappingProxyType(dict(self.taxonomies)))

    def __len__(self):
        return len(self.universal_classes)

    def __eq__(self, other):
        if not isinstance(other, UniversalTaxonomy):
            return NotImplemented
        return (self.universal_classes == other.universal_classes
                and dict(self.mappings) == dict(other.mappings)
                and dict(self.taxonomies) == dict(other.taxonomies))

    __hash__ = None

    @property
    def names(self):
        return [u.name for u in self.universal_classes]

    @property
    def dataset_ids(self):
        return sorted(self.mappings)

    def mapping(self, dataset_id):
        try:
            return self.mappings[dataset_id]
        except KeyError:
            raise KeyError(f"dataset '{dataset_id}' is not mapped by this universal taxonomy")

    def image(self, dataset_id):
        """Universal classes reachable from the given dataset."""
        return frozenset().union(*self.mapping(dataset_id))

    def as_taxonomy(self, dataset_id):
        """The flat taxonomy a meta-dataset presents to the next merge."""
        return Taxonomy(dataset_id, self.names, void_label=VOID_8BIT if len(self) < VOID_8BIT else VOID_16BIT,
                        is_meta=True)


def validate_universal(universal):
    """
    Checks every UniversalTaxonomy invariant and reports each violation with the
    offending class references.
    """
    errors = []
    size = len(universal)
    for name, count in Counter(universal.names).items():
        if count > 1:
            errors.append(ValidationError(
                _("Duplicate universal class name '%(name)s'."),
                code='duplicate_name',
                params={'name': name},
            ))

    for index, universal_class in enumerate(universal.universal_classes):
        per_dataset = Counter(ref.dataset_id for ref in universal_class.members)
        for dataset_id, count in per_dataset.items():
            if count > 1:
                refs = sorted(ref for ref in universal_class.members if ref.dataset_id == dataset_id)
                errors.append(ValidationError(
                    _("Universal class '%(name)s' has %(count)s members from dataset '%(dataset)s'."),
                    code='intra_dataset_member_pair',
                    params={'name': universal_class.name, 'count': count, 'dataset': dataset_id,
                            'refs': [str(ref) for ref in refs]},
                ))
        for ref in sorted(universal_class.members):
            rows = universal.mappings.get(ref.dataset_id)
            if rows is None or ref.class_index >= len(rows) or index not in rows[ref.class_index]:
                errors.append(ValidationError(
                    _("Member %(ref)s of universal class '%(name)s' does not map to it."),
                    code='member_not_mapped',
                    params={'ref': str(ref), 'name': universal_class.name},
                ))

    for dataset_id, rows in sorted(universal.mappings.items()):
        owner = {}
        for class_index, targets in enumerate(rows):
            ref = ClassRef(dataset_id, class_index)
            if not targets:
                errors.append(ValidationError(
                    _("Class %(ref)s maps to no universal class."),
                    code='unmapped_class',
                    params={'ref': str(ref)},
                ))
            for target in sorted(targets):
                if not 0 <= target < size:
                    errors.append(ValidationError(
                        _("Class %(ref)s maps to unknown universal class %(target)s."),
                        code='mapping_out_of_range',
                        params={'ref': str(ref), 'target': target},
                    ))
                    continue
                if target in owner:
                    errors.append(ValidationError(
                        _("Classes %(first)s and %(second)s share universal class '%(name)s'."),
                        code='non_disjoint_mapping',
                        params={'first': str(owner[target]), 'second': str(ref),
                                'name': universal.universal_classes[target].name},
                    ))
                else:
                    owner[target] = ref
    return errors


@dataclass(frozen=True)
class ConcatSpace:
    """
    The naive-concatenation label space T_a ⊎ T_b: classes of ``taxonomy_a``
    first, then those of ``taxonomy_b``.
    """
    taxonomy_a: Taxonomy
    taxonomy_b: Taxonomy

    def __post_init__(self):
        if self.taxonomy_a.dataset_id == self.taxonomy_b.dataset_id:
            raise ValueError("a concatenated space needs two distinct taxonomies")

    @property
    def dataset_id(self):
        return concat_id(self.taxonomy_a.dataset_id, self.taxonomy_b.dataset_id)

    @property
    def taxonomies(self):
        return (self.taxonomy_a, self.taxonomy_b)

    def __len__(self):
        return len(self.taxonomy_a) + len(self.taxonomy_b)

    def taxonomy(self, dataset_id):
        for taxonomy in self.taxonomies:
            if taxonomy.dataset_id == dataset_id:
                return taxonomy
        raise KeyError(f"'{dataset_id}' is not part of {self.dataset_id}")

    def offset(self, dataset_id):
        if dataset_id == self.taxonomy_a.dataset_id:
            return 0
        if dataset_id == self.taxonomy_b.dataset_id:
            return len(self.taxonomy_a)
        raise KeyError(f"'{dataset_id}' is not part of {self.dataset_id}")

    def index(self, ref):
        taxonomy = self.taxonomy(ref.dataset_id)
        if ref.class_index >= len(taxonomy):
            raise IndexError(f"{ref} is out of range")
        return self.offset(ref.dataset_id) + ref.class_index

    def ref(self, index):
        if 0 <= index < len(self.taxonomy_a):
            return ClassRef(self.taxonomy_a.dataset_id, index)
        if len(self.taxonomy_a) <= index < len(self):
            return ClassRef(self.taxonomy_b.dataset_id, index - len(self.taxonomy_a))
        raise IndexError(f"concatenated index {index} out of range")

    def as_taxonomy(self):
        names = [self.taxonomy_a.qualified_name(i) for i in range(len(self.taxonomy_a))]
        names += [self.taxonomy_b.qualified_name(i) for i in range(len(self.taxonomy_b))]
        return Taxonomy(self.dataset_id, names, void_label=VOID_16BIT, is_meta=True)


def concat_id(first, second):
    return f"{first}+{second}"
