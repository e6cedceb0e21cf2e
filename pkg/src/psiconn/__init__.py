"""Directed EEG connectivity with the phase slope index, GA feature
selection scored by a random-tree committee, graph metrics and rank tests."""
__version__ = "0.1.0"

from .committee import RandomCommittee, RandomTreeClassifier, cross_validate, kappa
from .evolve import Chromosome, GaConfig, GeneticSelector, SelectionResult, evolve
from .featureset import FeatureTable, PairIndex, partition
from .graphs import BrainGraph, build_graph, graph_metrics
from .signal_io import ChannelLayout, Epoch, MultichannelRecord, PhaseSchedule
from .spectral import DEFAULT_BANDS, BandSpec, PhaseSlopeIndex, SpectralConfig
from .stats import bonferroni, friedman, wilcoxon_signed_rank

__all__ = [
    "BandSpec", "BrainGraph", "ChannelLayout", "Chromosome", "DEFAULT_BANDS", "Epoch",
    "FeatureTable", "GaConfig", "GeneticSelector", "MultichannelRecord",
    "PairIndex", "PhaseSchedule", "PhaseSlopeIndex", "RandomCommittee",
    "RandomTreeClassifier", "SelectionResult", "SpectralConfig", "bonferroni",
    "build_graph",
    "cross_validate", "evolve", "friedman", "graph_metrics", "kappa",
    "partition", "wilcoxon_signed_rank",
]
