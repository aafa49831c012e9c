import logging

from taxonomy.ingestion import RASTER_SUFFIXES, accumulate_files, pair_files, save_matrix
from taxonomy.management.base import TaxonomyCommand
from taxonomy.serializers import load_taxonomy

logger = logging.getLogger(__name__)


class Command(TaxonomyCommand):
    help = ("Accumulates a co-occurrence matrix: ground truth of the row dataset against the "
            "column dataset model's predictions on the same images.")
    pipeline_options = ('max_images', 'workers', 'out')
    taxonomy_options = ('row_taxonomy', 'col_taxonomy')
    path_options = ('rows', 'cols')
    out_required = True
    row_label = 'ground truth'
    col_label = 'foreign predictions'

    def add_command_arguments(self, parser):
        parser.add_argument('--row-taxonomy', required=True, help='Taxonomy JSON of the row dataset.')
        parser.add_argument('--col-taxonomy', required=True, help='Taxonomy JSON of the column dataset.')
        parser.add_argument('--rows', required=True, help=f'Directory of {self.row_label} rasters.')
        parser.add_argument('--cols', required=True, help=f'Directory of {self.col_label} rasters.')

    def run(self, config, **options):
        row_taxonomy = load_taxonomy(options['row_taxonomy'])
        col_taxonomy = load_taxonomy(options['col_taxonomy'])
        pairs = pair_files(options['rows'], options['cols'], RASTER_SUFFIXES, RASTER_SUFFIXES,
                           max_images=config.max_images)
        matrix = accumulate_files(pairs, row_taxonomy, col_taxonomy, workers=config.workers)
        save_matrix(matrix, config.out)
        unobserved = [row_taxonomy.classes[i] for i, total in enumerate(matrix.counts.sum(axis=1)) if total == 0]
        if unobserved:
            logger.warning(f"{len(unobserved)} class(es) of {row_taxonomy.dataset_id} never appear: {unobserved[:5]}")
        return {
            'rows': row_taxonomy.dataset_id,
            'cols': col_taxonomy.dataset_id,
            'images': len(pairs),
            'pixels': matrix.pixel_total,
            'unobserved': unobserved,
            'out': str(config.out),
        }
