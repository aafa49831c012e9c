import tempfile
from fractions import Fraction
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase, override_settings
from hypothesis import given, settings, strategies as st

from taxonomy.exceptions import EmptyInputError, TaxonomyMismatch, UnknownClassError
from taxonomy.graph import classify
from taxonomy.ingestion import EvalRecord, PosteriorDump
from taxonomy.models import ClassRef, ConcatSpace, RelationHypothesis, RelationKind, Taxonomy
from taxonomy.resolution import (
    MiouResult, RelationSet, base_relations, confusion_from_labels, evaluate_miou, evaluate_predictions, predict,
    resolve, resolve_graph, score, score_columns, write_log,
)
from taxonomy.serializers import read_json_lines

from .helpers import (
    chain_graph, figure_graph, graph_from_successors, make_taxonomy, one_hot_posteriors, random_posteriors, raster,
    road_zebra,
)

ADE_ROAD, ADE_SKY = ClassRef('ade', 0), ClassRef('ade', 1)
VISTAS_ROAD, VISTAS_ZEBRA = ClassRef('vistas', 0), ClassRef('vistas', 1)


def road_zebra_relations():
    return RelationSet([
        RelationHypothesis.overlap(ADE_ROAD, VISTAS_ROAD),
        RelationHypothesis.subset(VISTAS_ZEBRA, ADE_ROAD),
    ])


def f32(value):
    return float(np.float32(value))


def partners_of(ref, hypotheses):
    return {h.object if h.subject == ref else h.subject for h in hypotheses if ref in (h.subject, h.object)}


def naive_scores(posterior, ref, hypotheses, space):
    """Own posterior plus the posterior of every foreign partner, summed in ascending column order."""
    total = posterior.get(space.index(ref), 0.0)
    for column in sorted(space.index(p) for p in partners_of(ref, hypotheses) if p.dataset_id != ref.dataset_id):
        total += posterior.get(column, 0.0)
    return total


def naive_predictions(dump, hypotheses, taxonomy, space):
    predicted = []
    for pixel in range(dump.class_indices.shape[0]):
        posterior = dict(zip(dump.class_indices[pixel].tolist(), dump.probabilities[pixel].tolist()))
        best, label = 0.0, len(taxonomy)
        for ref in taxonomy.refs():
            value = naive_scores(posterior, ref, hypotheses, space)
            if value > best:
                best, label = value, ref.class_index
        predicted.append(label)
    return predicted


def naive_iou(pairs, size, void=255):
    """Intersections and unions counted pixel by pixel; void ground truth is skipped."""
    intersections, truths, guesses = [0] * size, [0] * size, [0] * size
    for labels, predicted in pairs:
        for truth, guess in zip(labels, predicted):
            if truth == void:
                continue
            truths[truth] += 1
            if guess < size:
                guesses[guess] += 1
            if guess == truth:
                intersections[truth] += 1
    unions = [truths[c] + guesses[c] - intersections[c] for c in range(size)]
    ious = [Fraction(intersections[c], unions[c]) for c in range(size) if unions[c]]
    miou = float(sum(ious, Fraction(0)) / len(ious)) if ious else 0.0
    return intersections, unions, miou


@st.composite
def scoring_cases(draw):
    """Two small taxonomies, random hypotheses between them and a seed for the posteriors."""
    a = make_taxonomy('a', draw(st.integers(min_value=1, max_value=4)))
    b = make_taxonomy('b', draw(st.integers(min_value=1, max_value=4)))
    drawn = draw(st.lists(st.tuples(st.sampled_from(['overlap', 'subset', 'superset']),
                                    st.integers(min_value=0, max_value=len(a) - 1),
                                    st.integers(min_value=0, max_value=len(b) - 1)), max_size=6))
    hypotheses = []
    for kind, i, j in drawn:
        first, second = ClassRef('a', i), ClassRef('b', j)
        if kind == 'overlap':
            hypotheses.append(RelationHypothesis.overlap(first, second))
        elif kind == 'subset':
            hypotheses.append(RelationHypothesis.subset(first, second))
        else:
            hypotheses.append(RelationHypothesis.subset(second, first))
    k = draw(st.integers(min_value=1, max_value=len(a) + len(b)))
    return a, b, hypotheses, k, draw(st.integers(min_value=0, max_value=2 ** 32 - 1))


class RelationSetTests(SimpleTestCase):

    def test_relations_are_symmetric(self):
        relations = road_zebra_relations()
        self.assertTrue(relations.related(VISTAS_ZEBRA, ADE_ROAD))
        self.assertTrue(relations.related(ADE_ROAD, VISTAS_ZEBRA))
        self.assertEqual(relations.related_to(ADE_ROAD), [VISTAS_ROAD, VISTAS_ZEBRA])
        self.assertEqual(relations.related_to(ADE_SKY), [])

    def test_contradiction(self):
        relations = RelationSet([
            RelationHypothesis.subset(ADE_ROAD, VISTAS_ROAD),
            RelationHypothesis.overlap(ADE_ROAD, VISTAS_ZEBRA),
        ])
        self.assertFalse(relations.is_consistent())
        self.assertTrue(road_zebra_relations().is_consistent())

    def test_list_round_trip(self):
        relations = road_zebra_relations()
        self.assertEqual(RelationSet.from_list(relations.as_list()), relations)


class ScoreTests(SimpleTestCase):

    def setUp(self):
        self.ade, self.vistas, self.space = road_zebra()

    def test_score_columns(self):
        relations = road_zebra_relations()
        self.assertEqual(score_columns(relations, self.ade, self.space), [[0, 2, 3], [1]])
        self.assertEqual(score_columns(relations, self.vistas, self.space), [[2, 0], [3, 0]])

    def test_zebra_pixel(self):
        # posteriors over ade-road, ade-sky, vistas-road, vistas-zebra
        dump = PosteriorDump(1, 1, [[3, 0]], [[0.6, 0.3]], self.space.dataset_id)
        relations = road_zebra_relations()

        ade_scores = score(dump, relations, self.ade, self.space)
        self.assertEqual(ade_scores[0].tolist(), [f32(0.3) + 0.0 + f32(0.6), 0.0])
        self.assertEqual(predict(ade_scores, 255).tolist(), [0])

        vistas_scores = score(dump, relations, self.vistas, self.space)
        self.assertEqual(vistas_scores[0].tolist(), [0.0 + f32(0.3), f32(0.6) + f32(0.3)])
        self.assertEqual(predict(vistas_scores, 255).tolist(), [1])

    def test_without_relations_foreign_mass_is_void(self):
        dump = one_hot_posteriors([2, 0], self.space)
        scores = score(dump, RelationSet(), self.ade, self.space)
        self.assertEqual(scores.tolist(), [[0.0, 0.0], [1.0, 0.0]])
        self.assertEqual(predict(scores, 255).tolist(), [255, 0])

    def test_ties_pick_the_lowest_index(self):
        self.assertEqual(predict(np.array([[0.5, 0.5], [0.2, 0.4]]), 9).tolist(), [0, 1])

    def test_matches_a_per_pixel_oracle(self):
        rng = np.random.default_rng(1)
        dump = random_posteriors(rng, 1000, 4, 3, self.space.dataset_id)
        relations = road_zebra_relations()
        for taxonomy in (self.ade, self.vistas):
            scores = score(dump, relations, taxonomy, self.space)
            for pixel in range(1000):
                posterior = dict(zip(dump.class_indices[pixel].tolist(), dump.probabilities[pixel].tolist()))
                for ref in taxonomy.refs():
                    expected = posterior.get(self.space.index(ref), 0.0)
                    foreign = sorted(self.space.index(partner) for partner in relations.related_to(ref))
                    for column in foreign:
                        expected += posterior.get(column, 0.0)
                    self.assertEqual(scores[pixel, ref.class_index], expected)

    @settings(max_examples=100, deadline=None)
    @given(scoring_cases())
    def test_random_relations_match_a_per_pixel_oracle(self, case):
        a, b, hypotheses, k, seed = case
        space = ConcatSpace(a, b)
        relations = RelationSet(hypotheses)
        dump = random_posteriors(np.random.default_rng(seed), 50, len(space), k, space.dataset_id)
        for taxonomy in (a, b):
            scores = score(dump, relations, taxonomy, space)
            for pixel in range(50):
                posterior = dict(zip(dump.class_indices[pixel].tolist(), dump.probabilities[pixel].tolist()))
                for ref in taxonomy.refs():
                    self.assertEqual(scores[pixel, ref.class_index], naive_scores(posterior, ref, hypotheses, space))
            self.assertEqual(predict(scores, len(taxonomy)).tolist(),
                             naive_predictions(dump, hypotheses, taxonomy, space))

    def test_unknown_relation_class(self):
        relations = RelationSet([RelationHypothesis.subset(ClassRef('ade', 5), VISTAS_ROAD)])
        with self.assertRaises(UnknownClassError):
            score_columns(relations, self.ade, self.space)

    def test_posteriors_over_another_space(self):
        dump = one_hot_posteriors([0], self.space)
        other = ConcatSpace(self.ade, Taxonomy('coco', ['road', 'zebra']))
        with self.assertRaises(TaxonomyMismatch):
            score(dump, RelationSet(), self.ade, other)


class MiouTests(SimpleTestCase):

    def setUp(self):
        self.ade, self.vistas, self.space = road_zebra()

    def test_seven_twelfths(self):
        result = evaluate_predictions([(raster([0, 0, 1, 1], 'ade'), raster([0, 1, 1, 1], 'ade'))], self.ade)
        self.assertEqual(result.miou, float(Fraction(7, 12)))
        self.assertEqual(result.iou(), {'road': 0.5, 'sky': float(Fraction(2, 3))})

    def test_seven_twelfths_from_posteriors(self):
        record = EvalRecord(raster([0, 0, 1, 1], 'ade'), one_hot_posteriors([0, 1, 1, 1], self.space))
        result = evaluate_miou([record], RelationSet(), self.ade, self.space)
        self.assertEqual(result.miou, float(Fraction(7, 12)))

    def test_void_prediction_is_a_miss(self):
        result = evaluate_predictions([(raster([0, 1], 'ade'), raster([0, 255], 'ade'))], self.ade)
        self.assertEqual(result.unions.tolist(), [1, 1])
        self.assertEqual(result.miou, 0.5)

    def test_absent_classes_are_left_out(self):
        taxonomy = make_taxonomy('ade', 3)
        result = evaluate_predictions([(raster([0, 1], 'ade'), raster([0, 1], 'ade'))], taxonomy)
        self.assertEqual(result.present(), [0, 1])
        self.assertEqual(result.miou, 1.0)
        self.assertIsNone(result.iou()['c2'])

    def test_nothing_present(self):
        result = evaluate_predictions([(raster([255, 255], 'ade'), raster([0, 1], 'ade'))], self.ade)
        self.assertEqual(result.miou, 0.0)

    def test_empty_input(self):
        with self.assertRaises(EmptyInputError):
            evaluate_predictions([], self.ade)
        with self.assertRaises(EmptyInputError):
            evaluate_miou([], RelationSet(), self.ade, self.space)

    @override_settings(UNITAX={'CHUNK_PIXELS': 7})
    def test_chunked_confusion_matches_brute_force(self):
        rng = np.random.default_rng(2)
        relations = road_zebra_relations()
        records = []
        for _ in range(3):
            dump = random_posteriors(rng, 100, 4, 3, self.space.dataset_id)
            labels = rng.integers(0, 2, 100)
            labels[rng.random(100) < 0.1] = 255
            records.append(EvalRecord(raster(labels, 'ade'), dump))

        confusion = np.zeros((2, 3), dtype=np.int64)
        for record in records:
            scores = score(record.posteriors, relations, self.ade, self.space)
            confusion += confusion_from_labels(record.ground_truth, predict(scores, 2), 2)
        expected = MiouResult.from_confusion(self.ade, confusion)

        result = evaluate_miou(records, relations, self.ade, self.space)
        np.testing.assert_array_equal(result.intersections, expected.intersections)
        np.testing.assert_array_equal(result.unions, expected.unions)
        self.assertEqual(result.miou, expected.miou)
        self.assertEqual(evaluate_miou(records, relations, self.ade, self.space, workers=2).miou, expected.miou)

    def test_random_rasters_match_pixel_counting(self):
        rng = np.random.default_rng(3)
        a, b = make_taxonomy('a', 3), make_taxonomy('b', 3)
        space = ConcatSpace(a, b)
        records, pairs = [], []
        for _ in range(100):
            hypotheses = [RelationHypothesis.subset(ClassRef('b', int(j)), ClassRef('a', int(i)))
                          for i, j in rng.integers(0, 3, size=(int(rng.integers(0, 4)), 2))]
            relations = RelationSet(hypotheses)
            dump = random_posteriors(rng, 24, len(space), int(rng.integers(1, 4)), space.dataset_id)
            labels = rng.integers(0, 3, 24)
            labels[rng.random(24) < 0.15] = 255
            record = EvalRecord(raster(labels, 'a'), dump)
            pair = (labels.tolist(), naive_predictions(dump, hypotheses, a, space))
            intersections, unions, miou = naive_iou([pair], 3)

            result = evaluate_miou([record], relations, a, space)
            self.assertEqual(result.intersections.tolist(), intersections)
            self.assertEqual(result.unions.tolist(), unions)
            self.assertEqual(result.miou, miou)
            records.append(record)
            pairs.append(pair)

        _, _, miou = naive_iou(pairs, 3)
        predictions = [(record.ground_truth, raster([255 if p == 3 else p for p in predicted], 'a'))
                       for record, (_, predicted) in zip(records, pairs)]
        self.assertEqual(evaluate_predictions(predictions, a).miou, miou)

    def test_ground_truth_over_another_dataset(self):
        record = EvalRecord(raster([0], 'vistas'), one_hot_posteriors([0], self.space))
        with self.assertRaises(TaxonomyMismatch):
            evaluate_miou([record], RelationSet(), self.ade, self.space)


def constant_evaluate(value=0.5):
    return mock.Mock(return_value=value)


def preferring(*sources):
    """Scores 0.9 whenever a subset hypothesis of one of ``sources`` is part of the relations."""
    def evaluate(records, relations, taxonomy, space):
        chosen = any(h.kind == RelationKind.SUBSET and h.subject in sources for h in relations)
        return 0.9 if chosen else 0.5
    return mock.Mock(side_effect=evaluate)


def eval_data(graph):
    return {taxonomy.dataset_id: ['record'] for taxonomy in graph.taxonomies}


class TournamentTests(SimpleTestCase):

    def run_tournament(self, graph, evaluate):
        return resolve_graph(graph, eval_data(graph), evaluate=evaluate)

    def test_evaluation_count(self):
        for graph, expected in ((chain_graph(1), 4), (chain_graph(6), 24), (figure_graph(), 8)):
            with self.subTest(conflicts=classify(graph).conflict_count):
                evaluate = constant_evaluate()
                _, result = self.run_tournament(graph, evaluate)
                self.assertEqual(result.evaluations, expected)
                self.assertEqual(evaluate.call_count, expected)

    def test_no_conflicts_no_evaluations(self):
        a, b = make_taxonomy('a', 2), make_taxonomy('b', 2)
        graph = graph_from_successors(a, b, [0, 1], [0, 1])
        evaluate = constant_evaluate()
        resolved, result = resolve_graph(graph, {}, evaluate=evaluate)
        self.assertEqual(result.evaluations, 0)
        evaluate.assert_not_called()
        self.assertEqual(resolved.edges(), graph.edges())
        self.assertEqual(result.relations, base_relations(classify(graph)))

    def test_higher_miou_wins(self):
        a0, b0, a1 = ClassRef('a', 0), ClassRef('b', 0), ClassRef('a', 1)
        resolved, result = self.run_tournament(chain_graph(1), preferring(b0))
        self.assertEqual(result.dropped, (a0,))
        self.assertIn(RelationHypothesis.subset(b0, a1), result.relations)
        self.assertNotIn(RelationHypothesis.subset(a0, b0), result.relations)
        self.assertIsNone(resolved.successor(a0))
        self.assertEqual(result.log[0]['winner'], 'b')
        self.assertEqual(result.log[0]['mean_b'], 0.9)

    def test_ties_fall_back_to_the_canonical_order(self):
        _, result = self.run_tournament(chain_graph(1), constant_evaluate())
        self.assertEqual(result.log[0]['winner'], 'a')
        self.assertEqual(result.dropped, (ClassRef('b', 0),))

    def test_shared_edge_forces_the_second_outcome(self):
        a, b = make_taxonomy('a', 3), make_taxonomy('b', 1)
        graph = graph_from_successors(a, b, [0, 0, None], [2])
        a0, a1, b0 = ClassRef('a', 0), ClassRef('a', 1), ClassRef('b', 0)

        resolved, result = self.run_tournament(graph, preferring(b0))
        self.assertEqual([entry['forced'] for entry in result.log], [False, True])
        self.assertEqual([entry['winner'] for entry in result.log], ['b', 'b'])
        self.assertEqual(result.dropped, (a0, a1))
        self.assertEqual(result.evaluations, 8)
        self.assertEqual(classify(resolved).conflict_count, 0)

        resolved, result = self.run_tournament(graph, preferring(a0, a1))
        self.assertEqual([entry['winner'] for entry in result.log], ['a', 'a'])
        self.assertEqual(result.dropped, (b0,))
        self.assertIn(RelationHypothesis.subset(a1, b0), result.relations)
        self.assertEqual(classify(resolved).conflict_count, 0)

    def test_resolved_graph_is_consistent(self):
        for evaluate in (constant_evaluate(), preferring(ClassRef('b', 4), ClassRef('a', 6))):
            resolved, result = self.run_tournament(figure_graph(), evaluate)
            self.assertEqual(classify(resolved).conflict_count, 0)
            self.assertTrue(result.relations.is_consistent())
            self.assertEqual(len(resolved), 12 - len(result.dropped))

    def test_conflicts_need_evaluation_data(self):
        with self.assertRaises(EmptyInputError):
            resolve_graph(figure_graph(), {}, evaluate=constant_evaluate())

    def test_log_is_written_as_json_lines(self):
        _, result = self.run_tournament(figure_graph(), constant_evaluate())
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp, 'resolution.log.jsonl')
            write_log(result, path)
            entries = read_json_lines(path)
        self.assertEqual([entry['round'] for entry in entries], [1, 2])
        self.assertEqual(entries[-1]['evaluations'], 8)
        self.assertEqual(entries[0]['triplet'][0], {'dataset': 'a', 'class': 4})

    def test_resolve_directly(self):
        classification = classify(chain_graph(2))
        space = ConcatSpace(make_taxonomy('a', 4), make_taxonomy('b', 2))
        result = resolve(classification.conflicts, base_relations(classification), {'a': [], 'b': []}, space,
                         evaluate=constant_evaluate())
        self.assertEqual(result.evaluations, 8)
        self.assertEqual(len(result.dropped), 2)
