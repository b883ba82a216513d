"""
Interaction data: loading, splitting, and bipartite graph utilities.
"""

from .graph import (InteractionGraph, NodeSet, load_interactions, k_hop_neighborhood,
                    inject_noise, sparsity_groups, subsample_users, dataset_statistics)
from .split import DatasetSplit, split_dataset, write_split, read_split
