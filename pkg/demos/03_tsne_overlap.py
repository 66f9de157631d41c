"""Do generated embeddings look like real ones? A t-SNE picture over training.

Trains on the synthetic corpus, keeps a generator snapshot every few
thousand iterations, and projects 200 real and 200 generated embeddings
jointly to 2-D. Each snapshot gets an SVG (real green, generated purple)
in ./tsne_figures together with its 1-nearest-neighbour label error: near
0 means the two sets sit apart, near 0.5 means they are mixed.

    python demos/03_tsne_overlap.py [iterations]
"""
import sys
from pathlib import Path

import numpy as np

from vpgan.corpus import SyntheticCorpusSpec, generate_pool, generate_synthetic
from vpgan.experiment import one_per_speaker
from vpgan.nn import predict
from vpgan.projection import ProjectionConfig, nn1_label_error, render_overlap, tsne
from vpgan.trainer import TrainConfig, sample_noise, train

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
spec = SyntheticCorpusSpec()
_, trial = generate_synthetic(spec)
external = generate_pool(spec)
real = one_per_speaker(trial)

config = TrainConfig(seed=0, total_iterations=iterations, checkpoint_every=max(1, iterations // 4))
result = train(external.vectors, config)

out = Path("tsne_figures")
labels = ["real"] * len(real) + ["generated"] * len(real)
for it, generator in sorted(result.snapshots.items()):
    fake = predict(generator, sample_noise(len(real), config.noise_dim, np.random.default_rng(1)))
    proj = tsne(np.vstack([real, fake]), ProjectionConfig(seed=0), labels)
    path = render_overlap(proj, out / f"step_{it:07d}.svg", title=f"iteration {it}")
    print(f"iteration {it:>6}: 1-NN label error {nn1_label_error(proj.points, labels):.3f} -> {path}")
