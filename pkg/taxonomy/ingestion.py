"""
Loading of label rasters, sparse top-K posterior dumps and count matrices, and
accumulation of co-occurrence / coincidence counts from paired rasters.

Binary layouts (little-endian):

    SEGR  magic "SEGR", u8 version=1, u8 bits-per-label (8|16), u32 width,
          u32 height, then width*height row-major labels.
          Void is 255 (8-bit) or 65535 (16-bit).
    SEGP  magic "SEGP", u8 version=1, u16 K, u32 width, u32 height, then per
          pixel K x (u16 class_index, f32 probability).

16-bit binary PGM (P5) rasters are accepted for interchange.
"""
import logging
import multiprocessing
import re
import struct
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import DimensionMismatch, EmptyInputError, FormatError, LabelRangeError, TaxonomyMismatch
from .models import VOID_8BIT, VOID_16BIT

logger = logging.getLogger(__name__)

RASTER_MAGIC = b'SEGR'
POSTERIOR_MAGIC = b'SEGP'
FORMAT_VERSION = 1
RASTER_HEADER = struct.Struct('<4sBBII')
POSTERIOR_HEADER = struct.Struct('<4sBHII')
POSTERIOR_ENTRY = np.dtype([('class_index', '<u2'), ('probability', '<f4')])
PGM_HEADER = re.compile(rb'^P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s')
PROBABILITY_TOLERANCE = 1e-5

RASTER_SUFFIXES = ('.segr', '.pgm')
POSTERIOR_SUFFIX = '.segp'


@dataclass(frozen=True, eq=False)
class LabelRaster:
    width: int
    height: int
    labels: np.ndarray
    taxonomy_id: str
    void_label: int = VOID_8BIT

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DimensionMismatch(f"raster dimensions must be positive, got {self.width}x{self.height}")
        labels = np.asarray(self.labels).reshape(-1)
        if labels.size != self.width * self.height:
            raise DimensionMismatch(
                f"raster has {labels.size} labels, expected {self.width}x{self.height}")
        object.__setattr__(self, 'labels', labels)

    def __eq__(self, other):
        if not isinstance(other, LabelRaster):
            return NotImplemented
        return (self.width, self.height, self.taxonomy_id, self.void_label) == \
            (other.width, other.height, other.taxonomy_id, other.void_label) and \
            np.array_equal(self.labels, other.labels)

    __hash__ = None

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def valid(self):
        return self.labels != self.void_label

    def check_range(self, size):
        labels = self.labels[self.valid]
        if labels.size and int(labels.max()) >= size:
            raise LabelRangeError(
                f"out-of-range label {int(labels.max())} for taxonomy '{self.taxonomy_id}' of size {size}",
                label=int(labels.max()), size=size)
        return self


@dataclass(frozen=True, eq=False)
class PosteriorDump:
    """Per pixel, the K most probable classes in descending probability order."""
    width: int
    height: int
    class_indices: np.ndarray
    probabilities: np.ndarray
    taxonomy_id: str

    def __post_init__(self):
        pixels = self.width * self.height
        classes = np.asarray(self.class_indices, dtype=np.int64).reshape(pixels, -1)
        probabilities = np.asarray(self.probabilities, dtype=np.float32).reshape(pixels, -1)
        if classes.shape != probabilities.shape or classes.shape[1] < 1:
            raise DimensionMismatch("class indices and probabilities must share a (pixels, K) shape")
        object.__setattr__(self, 'class_indices', classes)
        object.__setattr__(self, 'probabilities', probabilities)

    def __eq__(self, other):
        if not isinstance(other, PosteriorDump):
            return NotImplemented
        return (self.width, self.height, self.taxonomy_id) == (other.width, other.height, other.taxonomy_id) \
            and np.array_equal(self.class_indices, other.class_indices) \
            and np.array_equal(self.probabilities, other.probabilities)

    __hash__ = None

    @property
    def k(self):
        return self.class_indices.shape[1]

    def validate(self, size=None):
        probabilities = self.probabilities
        if np.any((probabilities < 0) | (probabilities > 1)):
            raise FormatError("posterior probabilities must lie in [0, 1]")
        if np.any(np.diff(probabilities, axis=1) > 0):
            raise FormatError("posterior probabilities must be non-increasing per pixel")
        if np.any(probabilities.sum(axis=1, dtype=np.float64) > 1 + PROBABILITY_TOLERANCE):
            raise FormatError("posterior probabilities sum to more than 1 at some pixel")
        ordered = np.sort(self.class_indices, axis=1)
        if np.any(np.diff(ordered, axis=1) == 0):
            raise FormatError("class indices repeat within a pixel")
        if size is not None and int(self.class_indices.max()) >= size:
            raise LabelRangeError(
                f"out-of-range label {int(self.class_indices.max())} in posteriors over '{self.taxonomy_id}'",
                label=int(self.class_indices.max()), size=size)
        return self


@dataclass(frozen=True)
class EvalRecord:
    """Ground truth of one image plus the naive-concatenation posteriors for it."""
    ground_truth: LabelRaster
    posteriors: PosteriorDump

    def __post_init__(self):
        gt, dump = self.ground_truth, self.posteriors
        if (gt.width, gt.height) != (dump.width, dump.height):
            raise DimensionMismatch(
                f"ground truth {gt.width}x{gt.height} does not match posteriors {dump.width}x{dump.height}")


@dataclass(frozen=True, eq=False)
class CooccurrenceMatrix:
    """
    Pixel counts pairing row-taxonomy labels (ground truth or intra-domain
    predictions) with column-taxonomy (foreign) predictions.
    """
    row_taxonomy_id: str
    col_taxonomy_id: str
    row_classes: tuple
    col_classes: tuple
    counts: np.ndarray

    def __post_init__(self):
        if self.row_taxonomy_id == self.col_taxonomy_id:
            raise TaxonomyMismatch("row and column taxonomies must differ")
        object.__setattr__(self, 'row_classes', tuple(self.row_classes))
        object.__setattr__(self, 'col_classes', tuple(self.col_classes))
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.row_classes), len(self.col_classes)):
            raise DimensionMismatch(
                f"counts shape {counts.shape} does not match {len(self.row_classes)}x{len(self.col_classes)}")
        if np.any(counts < 0):
            raise FormatError("counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, 'counts', counts)

    @classmethod
    def empty(cls, row_taxonomy, col_taxonomy):
        return cls(row_taxonomy.dataset_id, col_taxonomy.dataset_id, row_taxonomy.classes,
                   col_taxonomy.classes, np.zeros((len(row_taxonomy), len(col_taxonomy)), dtype=np.int64))

    def __eq__(self, other):
        if not isinstance(other, CooccurrenceMatrix):
            return NotImplemented
        return (self.row_taxonomy_id, self.col_taxonomy_id, self.row_classes, self.col_classes) == \
            (other.row_taxonomy_id, other.col_taxonomy_id, other.row_classes, other.col_classes) and \
            np.array_equal(self.counts, other.counts)

    __hash__ = None

    @property
    def shape(self):
        return self.counts.shape

    @property
    def pixel_total(self):
        return int(self.counts.sum())

    def with_counts(self, counts):
        return CooccurrenceMatrix(self.row_taxonomy_id, self.col_taxonomy_id, self.row_classes,
                                  self.col_classes, counts)

    def merge(self, other):
        """Entrywise sum of two partial matrices over the same taxonomy pair."""
        if (self.row_taxonomy_id, self.col_taxonomy_id) != (other.row_taxonomy_id, other.col_taxonomy_id):
            raise TaxonomyMismatch(
                f"cannot merge {self.row_taxonomy_id}x{self.col_taxonomy_id} "
                f"with {other.row_taxonomy_id}x{other.col_taxonomy_id}")
        return self.with_counts(self.counts + other.counts)

    __add__ = merge


# --- accumulation -----------------------------------------------------------

def _pair_counts(rows, cols, shape):
    if (rows.width, rows.height) != (cols.width, cols.height):
        raise DimensionMismatch(
            f"raster dimensions differ: {rows.width}x{rows.height} vs {cols.width}x{cols.height}")
    rows.check_range(shape[0])
    cols.check_range(shape[1])
    mask = rows.valid & cols.valid
    flat = rows.labels[mask].astype(np.int64) * shape[1] + cols.labels[mask].astype(np.int64)
    return np.bincount(flat, minlength=shape[0] * shape[1]).reshape(shape)


def _check_taxonomies(rows, cols, acc):
    if rows.taxonomy_id != acc.row_taxonomy_id:
        raise TaxonomyMismatch(
            f"row raster is over '{rows.taxonomy_id}', accumulator rows are '{acc.row_taxonomy_id}'")
    if cols.taxonomy_id != acc.col_taxonomy_id:
        raise TaxonomyMismatch(
            f"column raster is over '{cols.taxonomy_id}', accumulator columns are '{acc.col_taxonomy_id}'")


def accumulate_cooccurrence(gt, foreign_pred, acc):
    """Adds one (ground truth, foreign prediction) raster pair to the counts."""
    _check_taxonomies(gt, foreign_pred, acc)
    return acc.with_counts(acc.counts + _pair_counts(gt, foreign_pred, acc.shape))


def accumulate_coincidence(pred_a, pred_b, acc):
    """
    Same counting as accumulate_cooccurrence, with intra-domain predictions (or
    meta-dataset pseudo-labels) standing in for the missing ground truth.
    """
    _check_taxonomies(pred_a, pred_b, acc)
    return acc.with_counts(acc.counts + _pair_counts(pred_a, pred_b, acc.shape))


def _count_raster_chunk(pairs, shape):
    counts = np.zeros(shape, dtype=np.int64)
    for rows, cols in pairs:
        counts += _pair_counts(rows, cols, shape)
    return counts


def _count_file_chunk(paths, row_taxonomy, col_taxonomy):
    shape = (len(row_taxonomy), len(col_taxonomy))
    pairs = [(load_raster(row_path, row_taxonomy), load_raster(col_path, col_taxonomy))
             for row_path, col_path in paths]
    return _count_raster_chunk(pairs, shape)


def _chunks(items, workers):
    size = max(1, -(-len(items) // (workers * 4)))
    return [items[i:i + size] for i in range(0, len(items), size)]


def _sum_partials(func, items, shape, workers):
    if workers <= 1 or len(items) <= 1:
        return func(items)
    total = np.zeros(shape, dtype=np.int64)
    with multiprocessing.Pool(workers) as pool:
        for partial_counts in pool.imap(func, _chunks(items, workers)):
            total += partial_counts
    return total


def accumulate_all(pairs, acc, workers=1):
    """
    Accumulates many in-memory raster pairs. With ``workers`` > 1 each worker
    builds a partial matrix over a disjoint subset and the partials are summed,
    which equals the sequential result exactly.
    """
    pairs = list(pairs)
    for rows, cols in pairs:
        _check_taxonomies(rows, cols, acc)
    counts = _sum_partials(partial(_count_raster_chunk, shape=acc.shape), pairs, acc.shape, workers)
    return acc.with_counts(acc.counts + counts)


def accumulate_files(path_pairs, row_taxonomy, col_taxonomy, workers=1, acc=None):
    """Accumulates counts over (row raster path, column raster path) pairs."""
    acc = acc if acc is not None else CooccurrenceMatrix.empty(row_taxonomy, col_taxonomy)
    path_pairs = [(str(row), str(col)) for row, col in path_pairs]
    func = partial(_count_file_chunk, row_taxonomy=row_taxonomy, col_taxonomy=col_taxonomy)
    counts = _sum_partials(func, path_pairs, acc.shape, workers)
    logger.info(f"Accumulated {len(path_pairs)} raster pairs into "
                f"{acc.row_taxonomy_id}x{acc.col_taxonomy_id} using {workers} worker(s)")
    return acc.with_counts(acc.counts + counts)


def list_files(directory, suffixes, max_images=None):
    """Files of ``directory`` with one of ``suffixes``, sorted by name and capped at ``max_images``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"directory not found: {directory}")
    files = sorted(path for path in directory.iterdir() if path.suffix.lower() in suffixes)
    if max_images is not None and len(files) > max_images:
        logger.warning(f"Using the first {max_images} of {len(files)} files in {directory}")
        files = files[:max_images]
    return files


def pair_files(first_dir, second_dir, first_suffixes=RASTER_SUFFIXES, second_suffixes=RASTER_SUFFIXES,
               max_images=None):
    """Pairs files of two directories by file stem, in sorted stem order."""
    first = {path.stem: path for path in list_files(first_dir, first_suffixes)}
    second = {path.stem: path for path in list_files(second_dir, second_suffixes)}
    stems = sorted(first.keys() & second.keys())
    unmatched = sorted(first.keys() ^ second.keys())
    if unmatched:
        logger.warning(f"Skipping {len(unmatched)} unpaired file(s) between {first_dir} and {second_dir}: "
                       f"{unmatched[:5]}")
    if not stems:
        raise EmptyInputError(f"no paired files between {first_dir} and {second_dir}")
    if max_images is not None and len(stems) > max_images:
        logger.warning(f"Using the first {max_images} of {len(stems)} images")
        stems = stems[:max_images]
    return [(first[stem], second[stem]) for stem in stems]


# --- raster I/O -------------------------------------------------------------

def _read_bytes(path):
    with open(path, 'rb') as f:
        return f.read()


def _parse_segr(data, path, taxonomy_id):
    if len(data) < RASTER_HEADER.size:
        raise FormatError(f"malformed header in {path}", path=str(path))
    magic, version, bits, width, height = RASTER_HEADER.unpack_from(data)
    if magic != RASTER_MAGIC or version != FORMAT_VERSION or bits not in (8, 16):
        raise FormatError(f"malformed header in {path}", path=str(path))
    dtype = np.dtype('<u1') if bits == 8 else np.dtype('<u2')
    return _payload_raster(data[RASTER_HEADER.size:], dtype, width, height, path, taxonomy_id,
                           VOID_8BIT if bits == 8 else VOID_16BIT)


def _parse_pgm(data, path, taxonomy_id):
    match = PGM_HEADER.match(data)
    if not match:
        raise FormatError(f"malformed header in {path}", path=str(path))
    width, height, maxval = (int(value) for value in match.groups())
    if not 0 < maxval < 65536:
        raise FormatError(f"malformed header in {path}", path=str(path))
    dtype = np.dtype('u1') if maxval < 256 else np.dtype('>u2')
    return _payload_raster(data[match.end():], dtype, width, height, path, taxonomy_id,
                           VOID_8BIT if maxval < 256 else VOID_16BIT)


def _payload_raster(payload, dtype, width, height, path, taxonomy_id, void_label):
    expected = width * height * dtype.itemsize
    if len(payload) < expected:
        raise FormatError(f"truncated payload in {path}: {len(payload)} of {expected} bytes", path=str(path))
    if len(payload) > expected:
        raise FormatError(f"trailing bytes after payload in {path}", path=str(path))
    labels = np.frombuffer(payload, dtype=dtype).astype(np.uint16 if dtype.itemsize == 2 else np.uint8)
    return LabelRaster(width, height, labels, taxonomy_id, void_label)


def load_raster(path, taxonomy):
    """Reads a SEGR or P5 raster and checks its labels against the taxonomy."""
    data = _read_bytes(path)
    if data.startswith(RASTER_MAGIC):
        raster = _parse_segr(data, path, taxonomy.dataset_id)
    elif data.startswith(b'P5'):
        raster = _parse_pgm(data, path, taxonomy.dataset_id)
    else:
        raise FormatError(f"malformed header in {path}", path=str(path))
    return raster.check_range(len(taxonomy))


def save_raster(raster, path):
    """Writes a SEGR raster, 8-bit when the void label is 255 and 16-bit otherwise."""
    bits = 8 if raster.void_label == VOID_8BIT else 16
    dtype = '<u1' if bits == 8 else '<u2'
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(RASTER_HEADER.pack(RASTER_MAGIC, FORMAT_VERSION, bits, raster.width, raster.height))
        f.write(raster.labels.astype(dtype).tobytes())


def void_for(size):
    """Smallest raster void label that cannot collide with a class of the given taxonomy size."""
    return VOID_8BIT if size < VOID_8BIT else VOID_16BIT


# --- posterior dump I/O -----------------------------------------------------

def load_posterior_dump(path, taxonomy_id, size=None):
    """
    Reads a top-K posterior dump over ``taxonomy_id``. With ``size`` the class
    indices are checked against it.
    """
    data = _read_bytes(path)
    if len(data) < POSTERIOR_HEADER.size:
        raise FormatError(f"malformed header in {path}", path=str(path))
    magic, version, k, width, height = POSTERIOR_HEADER.unpack_from(data)
    if magic != POSTERIOR_MAGIC or version != FORMAT_VERSION or k < 1:
        raise FormatError(f"malformed header in {path}", path=str(path))
    payload = data[POSTERIOR_HEADER.size:]
    expected = width * height * k * POSTERIOR_ENTRY.itemsize
    if len(payload) < expected:
        raise FormatError(f"truncated payload in {path}: {len(payload)} of {expected} bytes", path=str(path))
    if len(payload) > expected:
        raise FormatError(f"trailing bytes after payload in {path}", path=str(path))
    entries = np.frombuffer(payload, dtype=POSTERIOR_ENTRY).reshape(width * height, k)
    dump = PosteriorDump(width, height, entries['class_index'], entries['probability'], taxonomy_id)
    return dump.validate(size)


def save_posterior_dump(dump, path):
    entries = np.empty(dump.class_indices.shape, dtype=POSTERIOR_ENTRY)
    entries['class_index'] = dump.class_indices
    entries['probability'] = dump.probabilities
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(POSTERIOR_HEADER.pack(POSTERIOR_MAGIC, FORMAT_VERSION, dump.k, dump.width, dump.height))
        f.write(entries.tobytes())


def load_eval_records(gt_dir, posterior_dir, taxonomy, space, max_images=None):
    """Pairs ground-truth rasters with naive-concatenation dumps by file stem."""
    pairs = pair_files(gt_dir, posterior_dir, RASTER_SUFFIXES, (POSTERIOR_SUFFIX,), max_images=max_images)
    records = [
        EvalRecord(load_raster(gt_path, taxonomy),
                   load_posterior_dump(dump_path, space.dataset_id, len(space)))
        for gt_path, dump_path in pairs
    ]
    logger.info(f"Loaded {len(records)} evaluation records for '{taxonomy.dataset_id}'")
    return records


# --- count matrix CSV -------------------------------------------------------

def _corner(row_taxonomy_id, col_taxonomy_id):
    return f"{row_taxonomy_id}\\{col_taxonomy_id}"


def save_matrix(matrix, path):
    """First row: column class names; first column: row class names; cells: counts."""
    frame = pd.DataFrame(matrix.counts, index=list(matrix.row_classes), columns=list(matrix.col_classes))
    frame.index.name = _corner(matrix.row_taxonomy_id, matrix.col_taxonomy_id)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, lineterminator='\n')


def load_matrix(path):
    """Reads a CSV written by save_matrix; the corner cell names both taxonomies."""
    try:
        frame = pd.read_csv(path, index_col=0, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        logger.error(f"Malformed co-occurrence CSV {path}: {e}")
        raise FormatError(f"malformed row in {path}: {e}", path=str(path))
    except pd.errors.EmptyDataError:
        raise FormatError(f"malformed header in {path}: empty file", path=str(path))
    corner = str(frame.index.name or '')
    if '\\' not in corner:
        raise FormatError(f"malformed header in {path}: missing taxonomy ids", path=str(path))
    row_id, col_id = corner.split('\\', 1)
    if frame.isna().to_numpy().any() or (frame == '').to_numpy().any():
        raise FormatError(f"malformed row in {path}: missing cells", path=str(path))
    try:
        counts = frame.to_numpy().astype(np.int64)
    except ValueError as e:
        raise FormatError(f"malformed row in {path}: {e}", path=str(path))
    return CooccurrenceMatrix(row_id, col_id, [str(name) for name in frame.index],
                              [str(name) for name in frame.columns], counts)
