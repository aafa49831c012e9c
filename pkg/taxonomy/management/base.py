import json
import logging

from django.core.management.base import BaseCommand, CommandError

from ..exceptions import ReconciliationError
from ..forms import PipelineConfigForm
from ..serializers import dumps, write_json

logger = logging.getLogger(__name__)

PIPELINE_ARGUMENTS = {
    'max_images': ('--max-images', {'type': int, 'help': 'Use only the first N images (sorted file order).'}),
    'min_support': ('--min-support', {'type': float, 'help': 'Drop edges below this fraction of the row mass.'}),
    'top_k': ('--top-k', {'type': int, 'help': 'Posterior entries kept per pixel.'}),
    'seed': ('--seed', {'type': int, 'help': 'Seed of every random stream.'}),
    'workers': ('--workers', {'type': int, 'help': 'Worker processes for accumulation and evaluation.'}),
    'schedule': ('--schedule', {'help': 'JSON merge schedule, e.g. [["a", "b"], "c"].'}),
    'out': ('--out', {'help': 'Output file or directory.'}),
}


def failure(code, message):
    return CommandError(json.dumps({'error': code, 'message': message}, ensure_ascii=False), returncode=2)


class TaxonomyCommand(BaseCommand):
    """
    Base of the pipeline commands. Subclasses list the shared options they take
    in ``pipeline_options``, name the option holding existing input paths in
    ``path_options``, and implement ``run(config, **options)`` returning a
    JSON-serialisable report.
    """
    requires_system_checks = []
    pipeline_options = ()
    path_options = ()
    taxonomy_options = ()
    out_required = False

    def add_arguments(self, parser):
        for name in self.pipeline_options:
            flag, kwargs = PIPELINE_ARGUMENTS[name]
            parser.add_argument(flag, dest=name, default=None, required=name == 'out' and self.out_required,
                                **kwargs)
        parser.add_argument('--json', action='store_true', dest='as_json', help='Print the report as JSON.')
        parser.add_argument('--report', help='Also write the JSON report to this file.')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def _collect(self, options, names):
        values = []
        for name in names:
            value = options.get(name)
            if value is None:
                continue
            values.extend(value if isinstance(value, (list, tuple)) else [value])
        return values

    def validate(self, options):
        data = {name: options.get(name) for name in PIPELINE_ARGUMENTS if options.get(name) is not None}
        data['taxonomies'] = [str(path) for path in self._collect(options, self.taxonomy_options)]
        data['inputs'] = [str(path) for path in self._collect(options, self.path_options)]
        form = PipelineConfigForm(data)
        if not form.is_valid():
            field, errors = next(iter(form.errors.as_data().items()))
            error = errors[0]
            message = error.message % error.params if error.params else str(error.message)
            logger.error(f"Invalid option {field}: {message}")
            raise failure(error.code or 'invalid', f"{field}: {message}")
        return form.config()

    def handle(self, *args, **options):
        config = self.validate(options)
        try:
            report = self.run(config, **options)
        except ReconciliationError as e:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed: {e.message}")
            raise failure(e.code, e.message)
        except FileNotFoundError as e:
            logger.error(f"Missing input: {e}")
            raise failure('missing', str(e))
        if report is None:
            return None
        if options.get('report'):
            write_json(options['report'], report)
        if options.get('as_json'):
            self.stdout.write(dumps(report), ending='')
        else:
            self.write_table(report)

    def run(self, config, **options):
        raise NotImplementedError('subclasses of TaxonomyCommand must provide a run() method')

    def write_table(self, report):
        for key, value in report.items():
            if isinstance(value, float):
                value = f"{value:.4f}"
            elif isinstance(value, (dict, list)):
                value = json.dumps(value, ensure_ascii=False)
            self.stdout.write(f"{key:<24} {value}")
        self.stdout.write(self.style.SUCCESS('OK'))
