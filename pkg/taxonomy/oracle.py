"""
Synthetic worlds with a known latent taxonomy.

A LatentWorld holds disjoint latent concepts and, per dataset, a grouping of
(a subset of) them into dataset classes. Pixels are i.i.d. draws from the
latent prior. Ground truth under a dataset is the group holding the pixel's
latent class (void when ungrouped); a model trained on a taxonomy predicts the
correct class with probability 1 - noise.

Every random stream is derived from (seed, stream kind, keys...), so images,
predictions and posteriors do not depend on the order they are generated in.
"""
import logging
import string
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingestion import (
    CooccurrenceMatrix, EvalRecord, LabelRaster, PosteriorDump, accumulate_all, save_posterior_dump, save_raster,
    void_for,
)
from .exceptions import TaxonomyMismatch
from .merge import MergeSchedule, MetaDataset, flat_taxonomy, run_schedule
from .models import ConcatSpace, Taxonomy
from .serializers import read_json, save_taxonomy, write_json

logger = logging.getLogger(__name__)

LAWS = ('identity', 'overlap', 'nested', 'interleaved', 'mixed')
NOISE_MODES = ('symmetric', 'adjacent')

WORLD_STREAM = 0
IMAGE_STREAM = 1
PREDICTION_STREAM = 2
POSTERIOR_STREAM = 3
PSEUDO_LABEL_STREAM = 4

INTERLEAVED_WEIGHTS = (0.5, 0.3, 0.2)

# Share of the correct mass a simulated network puts on the class of the
# dataset an image comes from.
IN_DOMAIN_SHARE = 0.6


def _stream(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def _key(text):
    return zlib.crc32(text.encode('utf-8'))


def latent_name(index):
    return f"l{index:02d}"


@dataclass(frozen=True, eq=False)
class DatasetGrouping:
    dataset_id: str
    groups: tuple

    def __post_init__(self):
        object.__setattr__(self, 'groups', tuple(tuple(int(l) for l in group) for group in self.groups))

    @property
    def classes(self):
        return tuple('_'.join(latent_name(l) for l in group) for group in self.groups)

    def taxonomy(self):
        return Taxonomy(self.dataset_id, self.classes, void_label=void_for(len(self.groups)))

    def labeller(self, num_latent):
        """Latent class -> dataset class index, -1 where ungrouped."""
        labeller = np.full(num_latent, -1, dtype=np.int64)
        for index, group in enumerate(self.groups):
            labeller[list(group)] = index
        return labeller

    def as_dict(self):
        return {'dataset_id': self.dataset_id, 'groups': [list(group) for group in self.groups],
                'classes': list(self.classes)}


@dataclass(frozen=True, eq=False)
class LatentWorld:
    latent_classes: tuple
    datasets: tuple
    prior: np.ndarray
    width: int = 64
    height: int = 64
    noise: float = 0.0
    noise_mode: str = 'symmetric'
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'latent_classes', tuple(self.latent_classes))
        object.__setattr__(self, 'datasets', tuple(self.datasets))
        prior = np.asarray(self.prior, dtype=np.float64)
        object.__setattr__(self, 'prior', prior)
        size = len(self.latent_classes)
        if size < 1:
            raise ValueError("a world needs at least one latent class")
        if prior.shape != (size,) or np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
            raise ValueError("prior must be a probability vector over the latent classes")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError(f"noise must lie in [0, 1), got {self.noise}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"unknown noise mode '{self.noise_mode}'")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        ids = [d.dataset_id for d in self.datasets]
        if len(set(ids)) != len(ids):
            raise ValueError("dataset ids must be unique")
        for dataset in self.datasets:
            seen = set()
            if not dataset.groups:
                raise ValueError(f"dataset '{dataset.dataset_id}' has no groups")
            for group in dataset.groups:
                if not group:
                    raise ValueError(f"dataset '{dataset.dataset_id}' has an empty group")
                for latent in group:
                    if not 0 <= latent < size:
                        raise ValueError(f"latent class {latent} out of range in '{dataset.dataset_id}'")
                    if latent in seen:
                        raise ValueError(f"groups of '{dataset.dataset_id}' overlap at latent class {latent}")
                    seen.add(latent)

    def __eq__(self, other):
        if not isinstance(other, LatentWorld):
            return NotImplemented
        return world_to_dict(self) == world_to_dict(other)

    __hash__ = None

    @property
    def num_latent(self):
        return len(self.latent_classes)

    @property
    def dataset_ids(self):
        return [d.dataset_id for d in self.datasets]

    def dataset(self, dataset_id):
        for dataset in self.datasets:
            if dataset.dataset_id == dataset_id:
                return dataset
        raise KeyError(f"dataset '{dataset_id}' is not part of this world")

    def index(self, dataset_id):
        return self.dataset_ids.index(dataset_id)

    def taxonomies(self):
        return {d.dataset_id: d.taxonomy() for d in self.datasets}

    def intersects(self, first, second):
        """Whether two dataset classes share a latent class."""
        a = set(self.dataset(first.dataset_id).groups[first.class_index])
        b = set(self.dataset(second.dataset_id).groups[second.class_index])
        return bool(a & b)


# --- construction -----------------------------------------------------------

def dataset_ids_for(count):
    if count > len(string.ascii_lowercase):
        return [f"d{i:02d}" for i in range(count)]
    return list(string.ascii_lowercase[:count])


def from_groups(groups, prior=None, **params):
    """
    World from explicit groupings, e.g. ``{'a': [[0, 1], [2]], 'b': [[0], [1], [2]]}``.
    The prior defaults to uniform.
    """
    num_latent = 1 + max(l for dataset_groups in groups.values() for group in dataset_groups for l in group)
    if prior is None:
        prior = np.full(num_latent, 1.0 / num_latent)
    return LatentWorld(
        latent_classes=[latent_name(i) for i in range(num_latent)],
        datasets=[DatasetGrouping(dataset_id, dataset_groups) for dataset_id, dataset_groups in groups.items()],
        prior=prior,
        **params,
    )


def _blocks(num_latent, rng, sizes):
    blocks, start = [], 0
    while start < num_latent:
        size = min(int(rng.choice(sizes)), num_latent - start)
        blocks.append(list(range(start, start + size)))
        start += size
    return blocks


def _split(group, rng):
    """Random split of a run of latent classes into consecutive parts."""
    if len(group) == 1:
        return [group]
    cuts = sorted(c for c in range(1, len(group)) if rng.random() < 0.5)
    bounds = [0] + cuts + [len(group)]
    return [group[bounds[i]:bounds[i + 1]] for i in range(len(bounds) - 1)]


def _refinement_chain(block, rng):
    levels = [[block]]
    for _ in range(2):
        levels.append([part for group in levels[-1] for part in _split(group, rng)])
    levels.append([[l] for l in block])
    return levels


def _nested_block(block, num_datasets, rng):
    levels = _refinement_chain(block, rng)
    return [levels[int(rng.integers(0, len(levels)))] for _ in range(num_datasets)]


def _interleaved_block(block, num_datasets):
    x, y, z = block
    first, second = [[x, y], [z]], [[x], [y, z]]
    return [first, second] + [[[l] for l in block] for _ in range(num_datasets - 2)]


def sample_world(num_latent, num_datasets=2, law='nested', seed=0, noise=0.0, noise_mode='symmetric',
                 width=64, height=64, coverage=1.0):
    """
    Reproducible random world. Laws:

    identity     every dataset keeps every latent class apart
    overlap      all datasets share one random grouping
    nested       per block, each dataset picks a level of one refinement chain
    interleaved  blocks of three grouped {x,y},{z} versus {x},{y,z}
    mixed        nested and interleaved blocks

    With ``coverage`` < 1 each dataset leaves latent classes ungrouped at random.
    """
    if num_latent < 1:
        raise ValueError("num_latent must be at least 1")
    if num_datasets < 1:
        raise ValueError("num_datasets must be at least 1")
    if law not in LAWS:
        raise ValueError(f"unknown grouping law '{law}'")
    if not 0.0 < coverage <= 1.0:
        raise ValueError("coverage must lie in (0, 1]")
    rng = _stream(seed, WORLD_STREAM)
    prior = 0.5 * rng.dirichlet(np.ones(num_latent)) + 0.5 / num_latent

    if law == 'identity':
        blocks = [[l] for l in range(num_latent)]
    elif law == 'interleaved':
        blocks = _blocks(num_latent, rng, [3])
    else:
        blocks = _blocks(num_latent, rng, [1, 2, 3, 4])

    per_dataset = [[] for _ in range(num_datasets)]
    for block in blocks:
        interleave = (num_datasets >= 2 and len(block) == 3
                      and (law == 'interleaved' or (law == 'mixed' and rng.random() < 0.5)))
        if interleave:
            groupings = _interleaved_block(block, num_datasets)
            mass = prior[block].sum()
            prior[block] = [mass * w for w in INTERLEAVED_WEIGHTS]
        elif law == 'identity':
            groupings = [[block] for _ in range(num_datasets)]
        elif law == 'overlap':
            shared = _split(block, rng)
            groupings = [shared for _ in range(num_datasets)]
        else:
            groupings = _nested_block(block, num_datasets, rng)
        for index, grouping in enumerate(groupings):
            per_dataset[index].extend(grouping)

    datasets = []
    for dataset_id, groups in zip(dataset_ids_for(num_datasets), per_dataset):
        if coverage < 1.0:
            kept = [[l for l in group if rng.random() < coverage] for group in groups]
            groups = [group for group in kept if group] or [groups[0][:1]]
        order = rng.permutation(len(groups))
        datasets.append(DatasetGrouping(dataset_id, [groups[i] for i in order]))

    world = LatentWorld(
        latent_classes=[latent_name(i) for i in range(num_latent)],
        datasets=datasets,
        prior=prior / prior.sum(),
        width=width,
        height=height,
        noise=noise,
        noise_mode=noise_mode,
        seed=seed,
    )
    logger.debug(f"Sampled {law} world with seed {seed}: {num_latent} latent classes, "
                 f"{[len(d.groups) for d in datasets]} classes per dataset")
    return world


# --- JSON -------------------------------------------------------------------

def world_to_dict(world):
    return {
        'seed': world.seed,
        'noise': world.noise,
        'noise_mode': world.noise_mode,
        'width': world.width,
        'height': world.height,
        'latent_classes': list(world.latent_classes),
        'prior': [float(p) for p in world.prior],
        'datasets': [d.as_dict() for d in world.datasets],
    }


def world_from_dict(payload):
    return LatentWorld(
        latent_classes=payload['latent_classes'],
        datasets=[DatasetGrouping(d['dataset_id'], d['groups']) for d in payload['datasets']],
        prior=payload['prior'],
        width=int(payload['width']),
        height=int(payload['height']),
        noise=float(payload['noise']),
        noise_mode=payload['noise_mode'],
        seed=int(payload['seed']),
    )


def save_world(world, path):
    write_json(path, world_to_dict(world))


def load_world(path):
    return world_from_dict(read_json(path))


# --- pixel simulation -------------------------------------------------------

def sample_latent(world, dataset_id, image_index):
    rng = _stream(world.seed, IMAGE_STREAM, world.index(dataset_id), image_index)
    return rng.choice(world.num_latent, size=world.width * world.height, p=world.prior)


def corrupt(labels, size, noise, mode, latent, labeller, rng):
    """
    Flips each non-void label with probability ``noise``: to a uniformly random
    other class, or, in 'adjacent' mode, to the class of a neighbouring latent
    concept when it differs.
    """
    n = labels.size
    flip = rng.random(n) < noise
    offsets = rng.integers(1, max(size, 2), n)
    towards_left = rng.random(n) < 0.5
    out = labels.copy()
    if noise <= 0 or size < 2:
        return out
    replacement = (labels + offsets) % size
    if mode == 'adjacent':
        last = len(labeller) - 1
        neighbour = np.where(towards_left, labeller[np.clip(latent - 1, 0, last)],
                             labeller[np.clip(latent + 1, 0, last)])
        usable = (neighbour >= 0) & (neighbour != labels)
        replacement = np.where(usable, neighbour, replacement)
    flip &= labels >= 0
    out[flip] = replacement[flip]
    return out


def to_raster(labels, taxonomy, width, height):
    void = void_for(len(taxonomy))
    dtype = np.uint8 if void == 255 else np.uint16
    return LabelRaster(width, height, np.where(labels >= 0, labels, void).astype(dtype), taxonomy.dataset_id, void)


def synthesize_posteriors(latent, labeller_a, labeller_b, space, noise, top_k, rng, width, height, domain=None):
    """
    Top-K posteriors over the concatenated space. The correct classes of both
    taxonomies share 1 - noise: the class of the image's own dataset
    (``domain``) takes IN_DOMAIN_SHARE of it, an even split without a domain.
    noise is spread over random other classes; entries are padded to K
    distinct classes and truncated to K.
    """
    size_a = len(space.taxonomy_a)
    size = len(space)
    k = min(top_k, size)
    n = latent.size
    rows = np.arange(n)
    correct_b = labeller_b[latent]
    correct = np.stack([labeller_a[latent], np.where(correct_b >= 0, correct_b + size_a, -1)], axis=1)
    share = 0.5 if domain is None else IN_DOMAIN_SHARE
    if domain == space.taxonomy_b.dataset_id:
        correct = correct[:, ::-1]
    present = correct >= 0
    weights = np.stack([np.where(present[:, 1], share, 1.0), np.where(present[:, 0], 1.0 - share, 1.0)], axis=1)
    p_correct = np.where(present, (1.0 - noise) * weights, 0.0)

    keys = rng.random((n, size))
    for column in range(2):
        mask = present[:, column]
        keys[rows[mask], correct[mask, column]] = np.inf
    others = np.argsort(keys, axis=1, kind='stable')[:, :k]
    others = np.where((others == correct[:, :1]) | (others == correct[:, 1:]), -1, others)

    n_noise = k - np.minimum(present.sum(axis=1), k)
    p_noise = np.where(n_noise > 0, noise / np.maximum(n_noise, 1), 0.0)

    candidates = np.concatenate([correct, others], axis=1)
    mass = np.concatenate([p_correct, np.broadcast_to(p_noise[:, None], others.shape)], axis=1)
    order = np.argsort(candidates < 0, axis=1, kind='stable')[:, :k]
    classes = np.take_along_axis(candidates, order, axis=1)
    probabilities = np.take_along_axis(mass, order, axis=1).astype(np.float32)

    ranked = np.argsort(-probabilities, axis=1, kind='stable')
    return PosteriorDump(width, height, np.take_along_axis(classes, ranked, axis=1),
                         np.take_along_axis(probabilities, ranked, axis=1), space.dataset_id)


class SimulatedEvidence:
    """
    EvidenceProvider backed by a LatentWorld. A meta-dataset's model labels a
    latent concept with the universal class having most members that contain
    it, ties to the lower index.
    """

    def __init__(self, world, num_images, top_k=8, workers=1):
        self.world = world
        self.num_images = num_images
        self.top_k = top_k
        self.workers = workers
        self._labellers = {d.dataset_id: d.labeller(world.num_latent) for d in world.datasets}
        self._members = {d.dataset_id: (d.dataset_id,) for d in world.datasets}
        self._leaves = set(world.dataset_ids)
        self._latent = {}

    def labeller(self, dataset_id):
        return self._labellers[dataset_id]

    def latent(self, dataset_id, image_index):
        key = (dataset_id, image_index)
        if key not in self._latent:
            self._latent[key] = sample_latent(self.world, dataset_id, image_index)
        return self._latent[key]

    def images(self, dataset_id):
        for member in self._members[dataset_id]:
            for image_index in range(self.num_images):
                yield member, image_index, self.latent(member, image_index)

    def labels(self, taxonomy, member, image_index, latent):
        """Ground truth for an original dataset, noisy pseudo-labels for a meta-dataset."""
        labeller = self._labellers[taxonomy.dataset_id]
        clean = labeller[latent]
        if taxonomy.dataset_id in self._leaves:
            return clean
        rng = _stream(self.world.seed, PSEUDO_LABEL_STREAM, _key(taxonomy.dataset_id),
                      self.world.index(member), image_index)
        return corrupt(clean, len(taxonomy), self.world.noise, self.world.noise_mode, latent, labeller, rng)

    def prediction(self, taxonomy, member, image_index, latent):
        labeller = self._labellers[taxonomy.dataset_id]
        rng = _stream(self.world.seed, PREDICTION_STREAM, _key(taxonomy.dataset_id),
                      self.world.index(member), image_index)
        return corrupt(labeller[latent], len(taxonomy), self.world.noise, self.world.noise_mode,
                       latent, labeller, rng)

    def posteriors(self, space, member, image_index, latent, domain=None):
        """Posteriors of the naive-concatenation model on an image of the ``domain`` side."""
        rng = _stream(self.world.seed, POSTERIOR_STREAM, _key(space.dataset_id),
                      self.world.index(member), image_index)
        return synthesize_posteriors(latent, self._labellers[space.taxonomy_a.dataset_id],
                                     self._labellers[space.taxonomy_b.dataset_id], space,
                                     self.world.noise, self.top_k, rng, self.world.width, self.world.height,
                                     domain=domain)

    def _matrix(self, rows, cols):
        width, height = self.world.width, self.world.height
        pairs = [
            (to_raster(self.labels(rows, member, i, latent), rows, width, height),
             to_raster(self.prediction(cols, member, i, latent), cols, width, height))
            for member, i, latent in self.images(rows.dataset_id)
        ]
        return accumulate_all(pairs, CooccurrenceMatrix.empty(rows, cols), workers=self.workers)

    def matrices(self, taxonomy_a, taxonomy_b):
        return self._matrix(taxonomy_a, taxonomy_b), self._matrix(taxonomy_b, taxonomy_a)

    def eval_records(self, taxonomy, space):
        width, height = self.world.width, self.world.height
        return [
            EvalRecord(to_raster(self.labels(taxonomy, member, i, latent), taxonomy, width, height),
                       self.posteriors(space, member, i, latent, domain=taxonomy.dataset_id))
            for member, i, latent in self.images(taxonomy.dataset_id)
        ]

    def register(self, meta):
        counts = np.zeros((self.world.num_latent, len(meta.universal)), dtype=np.int64)
        for index, universal_class in enumerate(meta.universal.universal_classes):
            for ref in universal_class.members:
                counts[:, index] += self._labellers[ref.dataset_id] == ref.class_index
        self._labellers[meta.dataset_id] = np.where(counts.max(axis=1) > 0, np.argmax(counts, axis=1), -1)
        self._members[meta.dataset_id] = tuple(meta.member_datasets)


# --- simulate ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ImageSample:
    name: str
    latent: np.ndarray
    ground_truth: LabelRaster
    predictions: dict
    posteriors: dict


def pair_spaces(world):
    """Naive-concatenation spaces of every dataset pair, in world order."""
    taxonomies = world.taxonomies()
    ids = world.dataset_ids
    return [ConcatSpace(taxonomies[ids[i]], taxonomies[ids[j]])
            for i in range(len(ids)) for j in range(i + 1, len(ids))]


def image_name(image_index):
    return f"img_{image_index:05d}"


def simulate(world, num_images, top_k=8):
    """
    Per dataset and image: the ground truth, the predictions of every other
    dataset's model, and the naive-concatenation posteriors of every pair the
    dataset belongs to.
    """
    evidence = SimulatedEvidence(world, num_images, top_k=top_k)
    taxonomies = world.taxonomies()
    spaces = pair_spaces(world)
    result = {}
    for dataset_id in world.dataset_ids:
        taxonomy = taxonomies[dataset_id]
        samples = []
        for member, i, latent in evidence.images(dataset_id):
            samples.append(ImageSample(
                name=image_name(i),
                latent=latent,
                ground_truth=to_raster(evidence.labels(taxonomy, member, i, latent), taxonomy,
                                       world.width, world.height),
                predictions={
                    other: to_raster(evidence.prediction(taxonomies[other], member, i, latent), taxonomies[other],
                                     world.width, world.height)
                    for other in world.dataset_ids if other != dataset_id
                },
                posteriors={
                    space.dataset_id: evidence.posteriors(space, member, i, latent, domain=dataset_id)
                    for space in spaces if dataset_id in (space.taxonomy_a.dataset_id, space.taxonomy_b.dataset_id)
                },
            ))
        result[dataset_id] = samples
    logger.info(f"Simulated {num_images} image(s) of {world.width}x{world.height} for "
                f"{len(world.datasets)} dataset(s)")
    return result


def sample_name(side_id, member, image_index):
    """File stem of an image; images of a meta-dataset carry their member dataset."""
    return image_name(image_index) if member == side_id else f"{member}-{image_name(image_index)}"


def _write_side(evidence, side, other, space, out_dir):
    """Labels of ``side``, the predictions of ``other``'s model and the posteriors over ``space``."""
    width, height = evidence.world.width, evidence.world.height
    base = out_dir / side.dataset_id
    for member, i, latent in evidence.images(side.dataset_id):
        name = sample_name(side.dataset_id, member, i)
        save_raster(to_raster(evidence.labels(side, member, i, latent), side, width, height),
                    base / 'labels' / f"{name}.segr")
        save_raster(to_raster(evidence.prediction(other, member, i, latent), other, width, height),
                    base / 'foreign' / other.dataset_id / f"{name}.segr")
        save_posterior_dump(evidence.posteriors(space, member, i, latent, domain=side.dataset_id),
                            base / 'posteriors' / space.dataset_id / f"{name}.segp")


def write_meta_evidence(world, out_dir, num_images, schedule, top_k=8, min_support=0.0):
    """
    Runs ``schedule`` on simulated evidence and writes the evidence of every
    merge with a meta-dataset side: pseudo-labels of the meta-dataset, the
    predictions of both models on each other's images and the posteriors of
    the merge's concatenated space.
    """
    out_dir = Path(out_dir)
    evidence = SimulatedEvidence(world, num_images, top_k=top_k)
    result = run_schedule(schedule, world.taxonomies(), evidence, min_support=min_support)
    written = []
    for meta in result.metas:
        if not any(isinstance(side, MetaDataset) for side in meta.sides):
            continue
        first, second = (flat_taxonomy(side) for side in meta.sides)
        space = ConcatSpace(first, second)
        _write_side(evidence, first, second, space, out_dir)
        _write_side(evidence, second, first, space, out_dir)
        written.append(meta.dataset_id)
    logger.info(f"Wrote meta-level evidence for {len(written)} merge(s): {written}")
    return result


def write_fixtures(world, out_dir, num_images, top_k=8, schedule=None, min_support=0.0):
    """
    Writes the world, its taxonomies and the simulated rasters and dumps in
    the directory layout read by DirectoryEvidence. With two or more datasets
    the merge schedule (the default order unless given) is saved as
    ``schedule.json`` and the evidence its meta-dataset merges need is
    written too; it matches a merge over all images with ``min_support``.
    """
    out_dir = Path(out_dir)
    save_world(world, out_dir / 'world.json')
    for dataset_id, taxonomy in world.taxonomies().items():
        save_taxonomy(taxonomy, out_dir / 'taxonomies' / f"{dataset_id}.json")
    for dataset_id, samples in simulate(world, num_images, top_k=top_k).items():
        base = out_dir / dataset_id
        for sample in samples:
            save_raster(sample.ground_truth, base / 'labels' / f"{sample.name}.segr")
            for other, raster in sample.predictions.items():
                save_raster(raster, base / 'foreign' / other / f"{sample.name}.segr")
            for space_id, dump in sample.posteriors.items():
                save_posterior_dump(dump, base / 'posteriors' / space_id / f"{sample.name}.segp")
    if len(world.datasets) >= 2:
        schedule = schedule or MergeSchedule.default(world.dataset_ids)
        schedule.check_covers(world.dataset_ids)
        write_json(out_dir / 'schedule.json', schedule.as_list())
        if len(schedule.nodes()) > 1:
            write_meta_evidence(world, out_dir, num_images, schedule, top_k=top_k, min_support=min_support)
    logger.info(f"Wrote fixtures for {len(world.datasets)} dataset(s) to {out_dir}")
    return out_dir


# --- recovery ---------------------------------------------------------------

def recovery_score(recovered, world):
    """
    Fraction of cross-dataset class pairs on which the recovered taxonomy
    agrees with the latent truth: two classes should share a universal class
    iff their groups share a latent concept.
    """
    if set(recovered.dataset_ids) != set(world.dataset_ids):
        raise TaxonomyMismatch(
            f"recovered datasets {recovered.dataset_ids} do not match the world's {world.dataset_ids}")
    for dataset in world.datasets:
        if len(recovered.mapping(dataset.dataset_id)) != len(dataset.groups):
            raise TaxonomyMismatch(f"class count of '{dataset.dataset_id}' differs from the world")
    ids = world.dataset_ids
    matched = total = 0
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            first, second = world.dataset(ids[i]), world.dataset(ids[j])
            rows_first, rows_second = recovered.mapping(ids[i]), recovered.mapping(ids[j])
            for x, group_x in enumerate(first.groups):
                for y, group_y in enumerate(second.groups):
                    truth = bool(set(group_x) & set(group_y))
                    shared = bool(rows_first[x] & rows_second[y])
                    matched += truth == shared
                    total += 1
    return matched / total if total else 1.0


def recover(world, num_images, top_k=8, schedule=None, min_support=0.0, workers=1):
    """Runs the whole merge pipeline on simulated evidence and returns the MergeResult."""
    schedule = schedule or MergeSchedule.default(world.dataset_ids)
    evidence = SimulatedEvidence(world, num_images, top_k=top_k, workers=workers)
    return run_schedule(schedule, world.taxonomies(), evidence, min_support=min_support, workers=workers)
