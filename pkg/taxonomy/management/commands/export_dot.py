from taxonomy.graph import classify, graph_from_dict, render_dot
from taxonomy.management.base import TaxonomyCommand
from taxonomy.serializers import read_json


class Command(TaxonomyCommand):
    help = "Renders a graph JSON as Graphviz DOT, edges colored by overlap, subset or conflict."
    pipeline_options = ('out',)
    path_options = ('graph',)

    def add_command_arguments(self, parser):
        parser.add_argument('--graph', required=True, help='Graph JSON written by hypothesize or resolve.')

    def run(self, config, **options):
        graph = graph_from_dict(read_json(options['graph']))
        classification = classify(graph)
        source = render_dot(graph, classification)
        if config.out is None:
            self.stdout.write(source, ending='')
            return None
        config.out.parent.mkdir(parents=True, exist_ok=True)
        config.out.write_text(source, encoding='utf-8')
        return {'edges': len(graph), **classification.summary(), 'out': str(config.out)}
