from taxonomy.management.base import TaxonomyCommand, failure
from taxonomy.merge import MergeSchedule
from taxonomy.oracle import LAWS, NOISE_MODES, load_world, sample_world, write_fixtures


class Command(TaxonomyCommand):
    help = ("Samples a synthetic world with a known latent taxonomy and writes its taxonomies, "
            "ground truth, foreign predictions and posterior dumps as fixtures.")
    pipeline_options = ('seed', 'top_k', 'min_support', 'schedule', 'out')
    path_options = ('world',)
    out_required = True

    def add_command_arguments(self, parser):
        parser.add_argument('--world', help='Existing world JSON to simulate instead of sampling one.')
        parser.add_argument('--latent', type=int, default=6, help='Number of latent classes.')
        parser.add_argument('--datasets', type=int, default=2, help='Number of datasets.')
        parser.add_argument('--law', choices=LAWS, default='nested', help='Grouping law.')
        parser.add_argument('--noise', type=float, default=0.0, help='Label flip rate in [0, 1).')
        parser.add_argument('--noise-mode', choices=NOISE_MODES, default='symmetric')
        parser.add_argument('--coverage', type=float, default=1.0,
                            help='Fraction of latent classes each dataset labels.')
        parser.add_argument('--width', type=int, default=64)
        parser.add_argument('--height', type=int, default=64)
        parser.add_argument('--images', type=int, default=4, help='Images per dataset.')

    def run(self, config, **options):
        if options.get('world'):
            world = load_world(options['world'])
        else:
            try:
                world = sample_world(options['latent'], num_datasets=options['datasets'], law=options['law'],
                                     seed=config.seed, noise=options['noise'], noise_mode=options['noise_mode'],
                                     width=options['width'], height=options['height'],
                                     coverage=options['coverage'])
            except ValueError as e:
                raise failure('invalid', str(e))
        if options['images'] < 1:
            raise failure('invalid', '--images must be at least 1')
        schedule = MergeSchedule.load(config.schedule) if config.schedule else None
        write_fixtures(world, config.out, options['images'], top_k=config.top_k, schedule=schedule,
                       min_support=config.min_support)
        return {
            'seed': world.seed,
            'datasets': {d.dataset_id: len(d.groups) for d in world.datasets},
            'latent': world.num_latent,
            'images': options['images'],
            'pixels_per_image': world.width * world.height,
            'out': str(config.out),
        }
