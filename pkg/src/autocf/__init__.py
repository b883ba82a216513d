"""
AutoCF Training and Evaluation Engine

Graph collaborative filtering with learned subgraph masking, a GCN encoder,
a graph self-attention decoder, and all-rank top-N evaluation.
"""

__version__ = "0.1.0"
