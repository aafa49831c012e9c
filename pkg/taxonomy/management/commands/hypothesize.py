from taxonomy.graph import build_graph, classify, graph_to_dict
from taxonomy.ingestion import load_matrix
from taxonomy.management.base import TaxonomyCommand
from taxonomy.serializers import load_taxonomy, write_json


class Command(TaxonomyCommand):
    help = "Builds the bipartite mcfp graph of two datasets and classifies its relation hypotheses."
    pipeline_options = ('min_support', 'out')
    taxonomy_options = ('taxonomy_a', 'taxonomy_b')
    path_options = ('ab', 'ba')
    out_required = True

    def add_command_arguments(self, parser):
        parser.add_argument('--ab', required=True, help='Matrix CSV: rows of dataset a, columns of dataset b.')
        parser.add_argument('--ba', required=True, help='Matrix CSV: rows of dataset b, columns of dataset a.')
        parser.add_argument('--taxonomy-a', help='Taxonomy JSON of dataset a (default: from the matrix).')
        parser.add_argument('--taxonomy-b', help='Taxonomy JSON of dataset b (default: from the matrix).')

    def run(self, config, **options):
        taxonomy_a = load_taxonomy(options['taxonomy_a']) if options.get('taxonomy_a') else None
        taxonomy_b = load_taxonomy(options['taxonomy_b']) if options.get('taxonomy_b') else None
        graph = build_graph(load_matrix(options['ab']), load_matrix(options['ba']), taxonomy_a, taxonomy_b,
                            min_support=config.min_support)
        classification = classify(graph)
        write_json(config.out, graph_to_dict(graph, classification))
        return {
            'datasets': [taxonomy.dataset_id for taxonomy in graph.taxonomies],
            'vertices': len(graph.vertices()),
            'edges': len(graph),
            **classification.summary(),
            'out': str(config.out),
        }
