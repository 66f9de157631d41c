"""Speaker anonymization with a Wasserstein GAN in embedding space."""
from vpgan.anonymizer import AnonymizationMapping, anonymize_corpus, threshold_violations
from vpgan.corpus import Corpus, SyntheticCorpusSpec, generate_pool, generate_synthetic, read_corpus, write_corpus
from vpgan.ot import TransportPlan, quadratic_cost, solve_ot
from vpgan.privacy import asv_score, eer, group_eers
from vpgan.projection import ProjectionConfig, tsne
from vpgan.trainer import TrainConfig, train
from vpgan.utility import gvd, mmd

__all__ = [
    "AnonymizationMapping",
    "Corpus",
    "ProjectionConfig",
    "SyntheticCorpusSpec",
    "TrainConfig",
    "TransportPlan",
    "anonymize_corpus",
    "asv_score",
    "eer",
    "generate_pool",
    "generate_synthetic",
    "group_eers",
    "gvd",
    "mmd",
    "quadratic_cost",
    "read_corpus",
    "solve_ot",
    "threshold_violations",
    "train",
    "tsne",
    "write_corpus",
]
__version__ = "0.1.0"
