import os
import tempfile

from django.test import SimpleTestCase

from taxonomy.exceptions import FormatError
from taxonomy.models import (
    ClassRef, ConflictPair, RelationHypothesis, RelationKind, Taxonomy, UniversalClass, UniversalTaxonomy,
    validate_taxonomy, validate_universal,
)
from taxonomy.serializers import load_taxonomy, load_universal, save_taxonomy, save_universal, write_json


def road_zebra_universal():
    ade, vistas = ClassRef('ade', 0), ClassRef('vistas', 0)
    zebra = ClassRef('vistas', 1)
    return UniversalTaxonomy(
        [UniversalClass('ade-road/vistas-road', {ade, vistas}), UniversalClass('vistas-zebra', {ade, zebra})],
        {'ade': [{0, 1}], 'vistas': [{0}, {1}]},
        {'ade': Taxonomy('ade', ['road']), 'vistas': Taxonomy('vistas', ['road', 'zebra'])},
    )


class TaxonomyValidationTests(SimpleTestCase):

    def test_valid_taxonomy(self):
        self.assertEqual(validate_taxonomy(Taxonomy('ade', ['road', 'sky'])), [])

    def test_duplicate_name(self):
        errors = validate_taxonomy(Taxonomy('ade', ['road', 'road']))
        self.assertEqual([e.code for e in errors], ['duplicate_name'])
        self.assertEqual(errors[0].params['name'], 'road')

    def test_empty_taxonomy(self):
        self.assertEqual([e.code for e in validate_taxonomy(Taxonomy('ade', []))], ['empty'])

    def test_void_collision(self):
        errors = validate_taxonomy(Taxonomy('ade', ['road', 'sky'], void_label=1))
        self.assertEqual([e.code for e in errors], ['void_collision'])

    def test_qualified_name(self):
        self.assertEqual(Taxonomy('ade', ['road']).qualified_name(0), 'ade-road')
        self.assertEqual(Taxonomy('ade+vistas', ['ade-road'], is_meta=True).qualified_name(0), 'ade-road')

    def test_json_file_round_trip(self):
        taxonomy = Taxonomy('vistas', ['road', 'zebra', 'sky'])
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'vistas.json')
            save_taxonomy(taxonomy, path)
            self.assertEqual(load_taxonomy(path), taxonomy)

    def test_invalid_taxonomy_document(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'ade.json')
            write_json(path, {'dataset_id': 'ade', 'classes': ['road', 'road']})
            with self.assertRaises(FormatError):
                load_taxonomy(path)


class RelationHypothesisTests(SimpleTestCase):

    def test_overlap_is_stored_in_canonical_order(self):
        first = RelationHypothesis.overlap(ClassRef('vistas', 0), ClassRef('ade', 3))
        second = RelationHypothesis.overlap(ClassRef('ade', 3), ClassRef('vistas', 0))
        self.assertEqual(first, second)
        self.assertEqual(first.subject, ClassRef('ade', 3))

    def test_subset_keeps_direction(self):
        hypothesis = RelationHypothesis.subset(ClassRef('vistas', 1), ClassRef('ade', 0))
        self.assertEqual(hypothesis.kind, RelationKind.SUBSET)
        self.assertEqual(hypothesis.subject, ClassRef('vistas', 1))
        self.assertEqual(str(hypothesis), 'vistas[1] < ade[0]')

    def test_support_is_not_part_of_identity(self):
        self.assertEqual(RelationHypothesis.subset(ClassRef('a', 0), ClassRef('b', 0), support=3),
                         RelationHypothesis.subset(ClassRef('a', 0), ClassRef('b', 0), support=7))

    def test_relation_within_one_dataset_is_rejected(self):
        with self.assertRaises(ValueError):
            RelationHypothesis.subset(ClassRef('a', 0), ClassRef('a', 1))

    def test_conflict_pair_must_chain(self):
        pair = ConflictPair(RelationHypothesis.subset(ClassRef('a', 0), ClassRef('b', 0), 5),
                            RelationHypothesis.subset(ClassRef('b', 0), ClassRef('a', 1), 4))
        self.assertEqual(pair.triplet, (ClassRef('a', 0), ClassRef('b', 0), ClassRef('a', 1)))
        self.assertEqual(pair.support, 9)
        with self.assertRaises(ValueError):
            ConflictPair(RelationHypothesis.subset(ClassRef('a', 0), ClassRef('b', 0)),
                         RelationHypothesis.subset(ClassRef('b', 1), ClassRef('a', 1)))


class UniversalValidationTests(SimpleTestCase):

    def test_road_zebra_is_valid(self):
        universal = road_zebra_universal()
        self.assertEqual(validate_universal(universal), [])
        self.assertEqual(universal.image('ade'), frozenset({0, 1}))

    def test_non_disjoint_mapping(self):
        ade, vistas = ClassRef('ade', 0), ClassRef('vistas', 0)
        universal = UniversalTaxonomy([UniversalClass('road', {ade, vistas})],
                                      {'ade': [{0}, {0}], 'vistas': [{0}]})
        codes = [e.code for e in validate_universal(universal)]
        self.assertIn('non_disjoint_mapping', codes)

    def test_intra_dataset_member_pair(self):
        members = {ClassRef('ade', 0), ClassRef('ade', 1)}
        universal = UniversalTaxonomy([UniversalClass('road', members)], {'ade': [{0}, {0}]})
        errors = validate_universal(universal)
        pair = [e for e in errors if e.code == 'intra_dataset_member_pair']
        self.assertEqual(len(pair), 1)
        self.assertEqual(pair[0].params['refs'], ['ade[0]', 'ade[1]'])

    def test_unmapped_class(self):
        universal = UniversalTaxonomy([UniversalClass('road', {ClassRef('ade', 0)})], {'ade': [{0}, set()]})
        self.assertIn('unmapped_class', [e.code for e in validate_universal(universal)])

    def test_meta_taxonomy_view(self):
        meta = road_zebra_universal().as_taxonomy('ade+vistas')
        self.assertEqual(meta.classes, ('ade-road/vistas-road', 'vistas-zebra'))
        self.assertTrue(meta.is_meta)
        self.assertEqual(meta.void_label, 255)

    def test_json_file_round_trip(self):
        universal = road_zebra_universal()
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'universal.json')
            save_universal(universal, path)
            self.assertEqual(load_universal(path), universal)
