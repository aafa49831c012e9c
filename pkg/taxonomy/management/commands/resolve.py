from pathlib import Path

from taxonomy.graph import classify, graph_from_dict, graph_to_dict
from taxonomy.management.base import TaxonomyCommand
from taxonomy.merge import DirectoryEvidence
from taxonomy.models import ConcatSpace
from taxonomy.resolution import resolve_graph, write_log
from taxonomy.serializers import read_json, write_json


class Command(TaxonomyCommand):
    help = ("Disambiguates conflicting relation hypotheses with the mIoU tournament and writes the "
            "resolved graph plus a JSON-lines log of every round.")
    pipeline_options = ('max_images', 'workers', 'out')
    path_options = ('graph', 'evidence')
    out_required = True

    def add_command_arguments(self, parser):
        parser.add_argument('--graph', required=True, help='Graph JSON written by hypothesize.')
        parser.add_argument('--evidence', required=True,
                            help='Evidence root holding <id>/labels and <id>/posteriors/<a+b> per dataset.')
        parser.add_argument('--log', help='JSON-lines tournament log (default: next to --out).')

    def run(self, config, **options):
        graph = graph_from_dict(read_json(options['graph']))
        space = ConcatSpace(graph.taxonomy_a, graph.taxonomy_b)
        evidence = DirectoryEvidence(options['evidence'], max_images=config.max_images, workers=config.workers)
        eval_data = {}
        if classify(graph).conflict_count:
            eval_data = {taxonomy.dataset_id: evidence.eval_records(taxonomy, space) for taxonomy in space.taxonomies}
        resolved, result = resolve_graph(graph, eval_data, space, workers=config.workers)
        write_json(config.out, graph_to_dict(resolved))
        log_path = Path(options['log']) if options.get('log') else config.out.with_suffix('.log.jsonl')
        write_log(result, log_path)
        return {
            'conflicts': len(result.log),
            'evaluations': result.evaluations,
            'dropped': [ref.as_dict() for ref in result.dropped],
            'remaining_conflicts': classify(resolved).conflict_count,
            'out': str(config.out),
            'log': str(log_path),
        }
