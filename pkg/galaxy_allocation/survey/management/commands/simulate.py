"""Django management command to write simulated fields to disk."""
from galaxy_allocation.services.rng import substream
from galaxy_allocation.services.simulator import (
    mean_nearest_neighbor_distance, neighbor_count_statistic, sample_phi, simulate_field, write_field,
)
from ._base import AllocationCommand, parse_phi


class Command(AllocationCommand):
    """Simulate fields and write ``field_XXXX.csv`` plus metadata."""

    help = 'Simulate galaxy fields and write their features and metadata'
    default_subdir = 'fields'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--count', type=int, default=1, help='number of fields')
        parser.add_argument('--phi', default='prior',
                            help='clustering parameter, or "prior" to sample it')

    def run(self, cfg, out_dir, **options):
        seed = cfg.seed
        digest = cfg.digest()
        self.stdout.write(self.style.MIGRATE_HEADING(
            f"\n=== Simulating {options['count']} field(s) into {out_dir} ==="
        ))
        protocol = parse_phi(options['phi'])
        for index in range(options['count']):
            if protocol == 'prior':
                phi = sample_phi(substream(seed, 'simulate-phi', index), cfg.simulator)
            else:
                phi = protocol
            field = simulate_field(phi, cfg.simulator, substream(seed, 'simulate-field', index),
                                   seed=seed, index=index)
            metadata = {
                'phi': field.phi,
                'seed': seed,
                'index': index,
                'count': len(field),
                'config_hash': digest,
                'neighbor_count': neighbor_count_statistic(field.positions),
                'mean_nearest_neighbor': mean_nearest_neighbor_distance(field.positions),
            }
            csv_path, _ = write_field(field, out_dir, metadata)
            self.stdout.write(f'{csv_path.name}: phi={field.phi:.4f}, {len(field)} galaxies')
        self.stdout.write(self.style.SUCCESS("\n=== FIELDS WRITTEN ==="))
