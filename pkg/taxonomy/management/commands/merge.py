import logging
from pathlib import Path

from taxonomy.exceptions import EmptyInputError
from taxonomy.management.base import TaxonomyCommand
from taxonomy.merge import DirectoryEvidence, MergeSchedule, run_schedule, save_meta_taxonomy
from taxonomy.oracle import SimulatedEvidence, load_world, recovery_score
from taxonomy.resolution import write_log
from taxonomy.serializers import load_taxonomy, save_universal, write_json
from taxonomy.universal import save_mapping_csv

logger = logging.getLogger(__name__)


class Command(TaxonomyCommand):
    help = ("Merges several datasets pairwise along a schedule into one universal taxonomy and "
            "composes the mapping of every original class.")
    pipeline_options = ('max_images', 'min_support', 'top_k', 'workers', 'schedule', 'out')
    taxonomy_options = ('taxonomies',)
    path_options = ('evidence', 'world')
    out_required = True

    def add_command_arguments(self, parser):
        parser.add_argument('--taxonomies', nargs='+', help='Taxonomy JSON of every dataset.')
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument('--evidence', help='Evidence root laid out per (meta-)dataset id.')
        source.add_argument('--world', help='Simulated world JSON to draw evidence from.')
        parser.add_argument('--images', type=int, default=16, help='Images per dataset when using --world.')

    def run(self, config, **options):
        world = None
        if options.get('world'):
            world = load_world(options['world'])
            taxonomies = world.taxonomies()
            evidence = SimulatedEvidence(world, options['images'], top_k=config.top_k, workers=config.workers)
        else:
            if not config.taxonomies:
                raise EmptyInputError("merging from --evidence needs --taxonomies")
            taxonomies = {taxonomy.dataset_id: taxonomy for taxonomy in map(load_taxonomy, config.taxonomies)}
            evidence = DirectoryEvidence(options['evidence'], max_images=config.max_images, workers=config.workers)
        stored = Path(options['evidence'], 'schedule.json') if options.get('evidence') else None
        if config.schedule:
            schedule = MergeSchedule.load(config.schedule)
        elif stored is not None and stored.is_file():
            schedule = MergeSchedule.load(stored)
            logger.info(f"No schedule given; using {stored}")
        else:
            schedule = MergeSchedule.default(list(taxonomies))
            logger.info(f"No schedule given; merging in the default order {schedule.as_list()}")

        result = run_schedule(schedule, taxonomies, evidence, min_support=config.min_support,
                              workers=config.workers)
        out = config.out
        save_universal(result.universal, out / 'universal.json')
        for dataset_id in result.universal.dataset_ids:
            save_mapping_csv(result.universal, dataset_id, out / 'mappings' / f"{dataset_id}.csv")
        for meta in result.metas:
            save_meta_taxonomy(meta, out / 'meta' / f"{meta.dataset_id}.json")
            write_log(meta.resolution, out / 'logs' / f"{meta.dataset_id}.jsonl")
        write_json(out / 'tree.json', {'schedule': schedule.as_list(), 'tree': result.tree()})

        report = {
            'schedule': schedule.as_list(),
            'merges': len(result.metas),
            'evaluations': sum(meta.stats['evaluations'] for meta in result.metas),
            'universal': len(result.universal),
            'out': str(out),
        }
        if world is not None:
            report['recovery_score'] = recovery_score(result.universal, world)
        return report
