from taxonomy.exceptions import UnresolvedConflicts
from taxonomy.graph import classify, graph_from_dict
from taxonomy.ingestion import RASTER_SUFFIXES, load_eval_records, load_raster, pair_files
from taxonomy.management.base import TaxonomyCommand, failure
from taxonomy.models import ConcatSpace
from taxonomy.resolution import RelationSet, base_relations, evaluate_miou, evaluate_predictions
from taxonomy.serializers import load_taxonomy, load_universal, read_json
from taxonomy.universal import map_prediction


class Command(TaxonomyCommand):
    help = ("Reports the mIoU of predictions against a dataset's ground truth. Predictions are label "
            "rasters over the dataset (default), universal label rasters (--universal), or naive-"
            "concatenation posterior dumps scored under a relation set (--posteriors).")
    pipeline_options = ('max_images', 'workers')
    taxonomy_options = ('taxonomy',)
    path_options = ('gt', 'predictions', 'universal', 'posteriors', 'graph', 'relations')

    def add_command_arguments(self, parser):
        parser.add_argument('--taxonomy', required=True, help='Taxonomy JSON of the evaluated dataset.')
        parser.add_argument('--gt', required=True, help='Directory of ground-truth rasters.')
        parser.add_argument('--predictions', help='Directory of prediction rasters.')
        parser.add_argument('--universal', help='Universal taxonomy JSON; predictions are universal labels.')
        parser.add_argument('--posteriors', help='Directory of naive-concatenation posterior dumps.')
        parser.add_argument('--graph', help='Conflict-free graph JSON supplying relations and both taxonomies.')
        parser.add_argument('--relations', help='Relation list JSON overriding the graph relations.')

    def run(self, config, **options):
        taxonomy = load_taxonomy(options['taxonomy'])
        if options.get('posteriors'):
            result = self.evaluate_posteriors(taxonomy, config, options)
            mode = 'posteriors'
        elif options.get('predictions'):
            result = self.evaluate_rasters(taxonomy, config, options)
            mode = 'universal' if options.get('universal') else 'predictions'
        else:
            raise failure('missing', 'one of --predictions or --posteriors is required')
        return {'mode': mode, **result.as_dict()}

    def evaluate_rasters(self, taxonomy, config, options):
        pairs = pair_files(options['gt'], options['predictions'], RASTER_SUFFIXES, RASTER_SUFFIXES,
                           max_images=config.max_images)
        if options.get('universal'):
            universal = load_universal(options['universal'])
            universal_taxonomy = universal.as_taxonomy('universal')
            rasters = [
                (load_raster(gt, taxonomy),
                 map_prediction(load_raster(prediction, universal_taxonomy), universal, taxonomy.dataset_id))
                for gt, prediction in pairs
            ]
        else:
            rasters = [(load_raster(gt, taxonomy), load_raster(prediction, taxonomy)) for gt, prediction in pairs]
        return evaluate_predictions(rasters, taxonomy)

    def evaluate_posteriors(self, taxonomy, config, options):
        if not options.get('graph'):
            raise failure('missing', '--posteriors needs --graph')
        graph = graph_from_dict(read_json(options['graph']))
        if options.get('relations'):
            relations = RelationSet.from_list(read_json(options['relations']))
        else:
            classification = classify(graph)
            if classification.conflict_count:
                raise UnresolvedConflicts(classification.conflict_count)
            relations = base_relations(classification)
        space = ConcatSpace(graph.taxonomy_a, graph.taxonomy_b)
        records = load_eval_records(options['gt'], options['posteriors'], taxonomy, space,
                                    max_images=config.max_images)
        return evaluate_miou(records, relations, taxonomy, space, workers=config.workers)
