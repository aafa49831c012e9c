from taxonomy.graph import graph_from_dict
from taxonomy.management.base import TaxonomyCommand
from taxonomy.serializers import read_json, save_universal
from taxonomy.universal import (
    build_universal, logit_report, partial_label_matrices, save_mapping_csv, save_partial_label_matrix,
)


class Command(TaxonomyCommand):
    help = ("Builds the universal taxonomy from a conflict-free graph and writes its partial-label "
            "matrices and per-dataset mappings.")
    pipeline_options = ('out',)
    path_options = ('graph',)
    out_required = True

    def add_command_arguments(self, parser):
        parser.add_argument('--graph', required=True, help='Resolved graph JSON.')

    def run(self, config, **options):
        graph = graph_from_dict(read_json(options['graph']))
        universal = build_universal(graph)
        out = config.out
        save_universal(universal, out / 'universal.json')
        for dataset_id, matrix in partial_label_matrices(universal).items():
            save_partial_label_matrix(matrix, out / 'partial_labels' / f"{dataset_id}.csv")
            save_mapping_csv(universal, dataset_id, out / 'mappings' / f"{dataset_id}.csv")
        return {
            **logit_report(graph, universal),
            'classes': list(universal.names),
            'out': str(out),
        }
