import os
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from taxonomy.exceptions import DimensionMismatch, EmptyInputError, FormatError, LabelRangeError, TaxonomyMismatch
from taxonomy.ingestion import (
    POSTERIOR_HEADER, POSTERIOR_MAGIC, RASTER_HEADER, RASTER_MAGIC, CooccurrenceMatrix, LabelRaster,
    PosteriorDump, accumulate_all, accumulate_coincidence, accumulate_cooccurrence, accumulate_files,
    load_matrix, load_posterior_dump, load_raster, pair_files, save_matrix, save_posterior_dump, save_raster,
)
from taxonomy.models import Taxonomy

from .helpers import make_taxonomy, raster, random_posteriors


def nested_loop_counts(pairs, shape):
    counts = np.zeros(shape, dtype=np.int64)
    for rows, cols in pairs:
        for r, c in zip(rows.labels, cols.labels):
            if r != rows.void_label and c != cols.void_label:
                counts[int(r), int(c)] += 1
    return counts


def random_pair(rng, rows, cols, width=64, height=64, void_rate=0.1):
    def labels(size):
        values = rng.integers(0, size, width * height)
        values[rng.random(width * height) < void_rate] = 255
        return values
    return (LabelRaster(width, height, labels(len(rows)).astype(np.uint8), rows.dataset_id),
            LabelRaster(width, height, labels(len(cols)).astype(np.uint8), cols.dataset_id))


class AccumulationTests(SimpleTestCase):

    def setUp(self):
        self.a = make_taxonomy('a', 2)
        self.b = make_taxonomy('b', 3)
        self.acc = CooccurrenceMatrix.empty(self.a, self.b)

    def test_counts_ground_truth_against_foreign_predictions(self):
        result = accumulate_cooccurrence(raster([0, 0, 1], 'a'), raster([2, 2, 0], 'b'), self.acc)
        expected = np.zeros((2, 3), dtype=np.int64)
        expected[0, 2] = 2
        expected[1, 0] = 1
        np.testing.assert_array_equal(result.counts, expected)
        self.assertEqual(result.pixel_total, 3)

    def test_void_on_either_side_is_ignored(self):
        result = accumulate_cooccurrence(raster([0, 255], 'a'), raster([1, 1], 'b'), self.acc)
        self.assertEqual(result.counts[0, 1], 1)
        self.assertEqual(result.pixel_total, 1)

    def test_coincidence_counting(self):
        result = accumulate_coincidence(raster([0, 1], 'a'), raster([1, 1], 'b'), self.acc)
        self.assertEqual(result.counts[0, 1], 1)
        self.assertEqual(result.counts[1, 1], 1)
        self.assertEqual(result.pixel_total, 2)

    def test_identical_rasters_give_a_diagonal(self):
        first, second = make_taxonomy('p', 3), make_taxonomy('q', 3)
        labels = [0, 1, 2, 2, 1, 0, 0]
        result = accumulate_coincidence(raster(labels, 'p'), raster(labels, 'q'),
                                        CooccurrenceMatrix.empty(first, second))
        np.testing.assert_array_equal(result.counts, np.diag([3, 2, 2]))

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            accumulate_cooccurrence(raster([0, 1, 0, 1], 'a', width=2), raster([0, 1, 0, 1], 'b', width=4),
                                    self.acc)

    def test_taxonomy_mismatch(self):
        with self.assertRaises(TaxonomyMismatch):
            accumulate_cooccurrence(raster([0], 'b'), raster([0], 'a'), self.acc)

    def test_out_of_range_label(self):
        with self.assertRaises(LabelRangeError):
            accumulate_cooccurrence(raster([0, 7], 'a'), raster([0, 0], 'b'), self.acc)

    @settings(deadline=None, max_examples=25)
    @given(st.integers(min_value=0, max_value=2 ** 32 - 1))
    def test_matches_nested_loop(self, seed):
        rng = np.random.default_rng(seed)
        pairs = [random_pair(rng, self.a, self.b) for _ in range(3)]
        result = accumulate_all(pairs, self.acc)
        np.testing.assert_array_equal(result.counts, nested_loop_counts(pairs, (2, 3)))
        both_valid = sum(int((rows.valid & cols.valid).sum()) for rows, cols in pairs)
        self.assertEqual(result.pixel_total, both_valid)

    def test_order_independent(self):
        rng = np.random.default_rng(7)
        pairs = [random_pair(rng, self.a, self.b) for _ in range(6)]
        self.assertEqual(accumulate_all(pairs, self.acc), accumulate_all(pairs[::-1], self.acc))

    def test_partial_matrices_sum_to_the_sequential_result(self):
        rng = np.random.default_rng(11)
        pairs = [random_pair(rng, self.a, self.b) for _ in range(8)]
        sequential = accumulate_all(pairs, self.acc, workers=1)
        self.assertEqual(accumulate_all(pairs, self.acc, workers=3), sequential)
        self.assertEqual(accumulate_all(pairs[:3], self.acc) + accumulate_all(pairs[3:], self.acc), sequential)

    def test_parallel_file_accumulation(self):
        rng = np.random.default_rng(5)
        pairs = [random_pair(rng, self.a, self.b, width=16, height=8) for _ in range(5)]
        with tempfile.TemporaryDirectory() as tmp:
            paths = []
            for i, (rows, cols) in enumerate(pairs):
                row_path, col_path = Path(tmp, 'rows', f'{i}.segr'), Path(tmp, 'cols', f'{i}.segr')
                save_raster(rows, row_path)
                save_raster(cols, col_path)
                paths.append((row_path, col_path))
            sequential = accumulate_files(paths, self.a, self.b, workers=1)
            parallel = accumulate_files(paths, self.a, self.b, workers=2)
        self.assertEqual(parallel, sequential)
        self.assertEqual(sequential, accumulate_all(pairs, self.acc))

    def test_merging_different_pairs_fails(self):
        with self.assertRaises(TaxonomyMismatch):
            self.acc.merge(CooccurrenceMatrix.empty(self.b, self.a))


class RasterFormatTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.taxonomy = make_taxonomy('a', 3)

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def write(self, name, data):
        with open(self.path(name), 'wb') as f:
            f.write(data)
        return self.path(name)

    def test_round_trip(self):
        original = raster([0, 1, 2, 255, 1, 0], 'a', width=3)
        save_raster(original, self.path('x.segr'))
        self.assertEqual(load_raster(self.path('x.segr'), self.taxonomy), original)

    def test_sixteen_bit_round_trip(self):
        original = LabelRaster(2, 2, np.array([0, 65535, 2, 1], dtype=np.uint16), 'a', 65535)
        save_raster(original, self.path('x.segr'))
        loaded = load_raster(self.path('x.segr'), self.taxonomy)
        self.assertEqual(loaded, original)
        self.assertEqual(loaded.valid.tolist(), [True, False, True, True])

    def test_pgm_sixteen_bit(self):
        payload = np.array([0, 2, 65535], dtype='>u2').tobytes()
        path = self.write('x.pgm', b'P5\n# labels\n3 1\n65535\n' + payload)
        loaded = load_raster(path, self.taxonomy)
        self.assertEqual((loaded.width, loaded.height, loaded.void_label), (3, 1, 65535))
        self.assertEqual(loaded.labels.tolist(), [0, 2, 65535])

    def test_truncated_payload(self):
        path = self.write('x.segr', RASTER_HEADER.pack(RASTER_MAGIC, 1, 8, 4, 4) + bytes(10))
        with self.assertRaisesMessage(FormatError, 'truncated payload'):
            load_raster(path, self.taxonomy)

    def test_trailing_bytes(self):
        path = self.write('x.segr', RASTER_HEADER.pack(RASTER_MAGIC, 1, 8, 2, 1) + bytes(3))
        with self.assertRaises(FormatError):
            load_raster(path, self.taxonomy)

    def test_malformed_header(self):
        for data in (b'SEG', RASTER_HEADER.pack(b'SEGX', 1, 8, 1, 1) + bytes(1),
                     RASTER_HEADER.pack(RASTER_MAGIC, 2, 8, 1, 1) + bytes(1),
                     RASTER_HEADER.pack(RASTER_MAGIC, 1, 12, 1, 1) + bytes(1)):
            with self.subTest(data=data):
                with self.assertRaisesMessage(FormatError, 'malformed header'):
                    load_raster(self.write('x.segr', data), self.taxonomy)

    def test_out_of_range_label(self):
        save_raster(raster([0, 3], 'a'), self.path('x.segr'))
        with self.assertRaisesMessage(LabelRangeError, 'out-of-range label'):
            load_raster(self.path('x.segr'), self.taxonomy)


class PosteriorDumpTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = os.path.join(self.tmp.name, 'x.segp')

    def test_round_trip(self):
        dump = random_posteriors(np.random.default_rng(3), 12, 9, 4, 'a+b')
        save_posterior_dump(dump, self.path)
        loaded = load_posterior_dump(self.path, 'a+b', 9)
        self.assertEqual(loaded, dump)
        self.assertEqual(loaded.k, 4)

    def write_entries(self, classes, probabilities):
        entries = np.empty((len(classes), len(classes[0])), dtype=[('class_index', '<u2'), ('probability', '<f4')])
        entries['class_index'] = classes
        entries['probability'] = probabilities
        with open(self.path, 'wb') as f:
            f.write(POSTERIOR_HEADER.pack(POSTERIOR_MAGIC, 1, len(classes[0]), len(classes), 1))
            f.write(entries.tobytes())

    def test_probabilities_must_not_increase(self):
        self.write_entries([[0, 1]], [[0.2, 0.7]])
        with self.assertRaises(FormatError):
            load_posterior_dump(self.path, 'a+b', 4)

    def test_repeated_class_index(self):
        self.write_entries([[2, 2]], [[0.5, 0.5]])
        with self.assertRaises(FormatError):
            load_posterior_dump(self.path, 'a+b', 4)

    def test_out_of_range_class_index(self):
        self.write_entries([[0, 9]], [[0.5, 0.5]])
        with self.assertRaises(LabelRangeError):
            load_posterior_dump(self.path, 'a+b', 4)

    def test_truncated_payload(self):
        with open(self.path, 'wb') as f:
            f.write(POSTERIOR_HEADER.pack(POSTERIOR_MAGIC, 1, 2, 2, 2) + bytes(5))
        with self.assertRaisesMessage(FormatError, 'truncated payload'):
            load_posterior_dump(self.path, 'a+b', 4)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionMismatch):
            PosteriorDump(2, 1, np.zeros((2, 3)), np.zeros((2, 2)), 'a+b')


class MatrixCsvTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = os.path.join(self.tmp.name, 'ab.csv')

    def test_round_trip(self):
        a = Taxonomy('ade', ['road', 'sky'])
        b = Taxonomy('vistas', ['road', 'zebra', 'sky'])
        matrix = CooccurrenceMatrix('ade', 'vistas', a.classes, b.classes, [[90, 10, 0], [0, 3, 50]])
        save_matrix(matrix, self.path)
        self.assertEqual(load_matrix(self.path), matrix)
        with open(self.path, encoding='utf-8') as f:
            self.assertEqual(f.readline().strip(), 'ade\\vistas,road,zebra,sky')

    def test_short_row(self):
        with open(self.path, 'w', encoding='utf-8') as f:
            f.write('a\\b,x,y\nu,1,2\nv,3\n')
        with self.assertRaisesMessage(FormatError, 'malformed row'):
            load_matrix(self.path)

    def test_non_numeric_cell(self):
        with open(self.path, 'w', encoding='utf-8') as f:
            f.write('a\\b,x,y\nu,1,2\nv,3,many\n')
        with self.assertRaisesMessage(FormatError, 'malformed row'):
            load_matrix(self.path)

    def test_missing_taxonomy_ids(self):
        with open(self.path, 'w', encoding='utf-8') as f:
            f.write('rows,x,y\nu,1,2\n')
        with self.assertRaisesMessage(FormatError, 'malformed header'):
            load_matrix(self.path)


class FilePairingTests(SimpleTestCase):

    def test_pairs_by_stem_and_caps_images(self):
        with tempfile.TemporaryDirectory() as tmp:
            for name in ('img_2', 'img_0', 'img_1', 'img_3'):
                save_raster(raster([0], 'a'), Path(tmp, 'gt', f'{name}.segr'))
            for name in ('img_0', 'img_1', 'img_2'):
                save_raster(raster([0], 'b'), Path(tmp, 'pred', f'{name}.segr'))
            pairs = pair_files(Path(tmp, 'gt'), Path(tmp, 'pred'), max_images=2)
            self.assertEqual([gt.stem for gt, _ in pairs], ['img_0', 'img_1'])

    def test_no_pairs(self):
        with tempfile.TemporaryDirectory() as tmp:
            save_raster(raster([0], 'a'), Path(tmp, 'gt', 'x.segr'))
            save_raster(raster([0], 'b'), Path(tmp, 'pred', 'y.segr'))
            with self.assertRaises(EmptyInputError):
                pair_files(Path(tmp, 'gt'), Path(tmp, 'pred'))
