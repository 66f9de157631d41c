"""Train the WGAN on an 8-Gaussian ring and watch the modes fill in.

The ring is the classic sanity check for a GAN: eight tight clusters on a
circle. A generator that collapses covers only a few of them. Run with

    python demos/01_toy_ring.py [iterations]

Default is 20000 iterations (about five minutes on one core).
"""
import sys

import numpy as np

from vpgan.nn import predict
from vpgan.toy import mode_coverage, ring_centers, sample_ring
from vpgan.trainer import TrainConfig, sample_noise, train
from vpgan.utility import mmd

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
data = sample_ring(20_000, np.random.default_rng(0))
held_out = sample_ring(2_000, np.random.default_rng(1))

config = TrainConfig(seed=0, total_iterations=iterations, checkpoint_every=max(1, iterations // 5))
print(f"generator/critic: {config.resolve(2).generator_spec.parameter_count()} parameters each")


def report(it, _diag):
    if it % 1000 == 0:
        print(f"  iteration {it}")


result = train(data, config, held_out=held_out, callback=report)

# Coverage at each stored snapshot: a mode counts once a sample lands within 3 sigma.
centers = ring_centers()
for it, generator in sorted(result.snapshots.items()):
    fake = predict(generator, sample_noise(2_000, config.noise_dim, np.random.default_rng(2)))
    cov = mode_coverage(fake, centers, std=0.02)
    print(f"iteration {it:>6}: {cov['covered']}/8 modes, MMD {mmd(fake, held_out):.4f}")
