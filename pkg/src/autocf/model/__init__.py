"""
Masked graph autoencoder: learned masking, propagation encoder, attention decoder and losses.
"""

from .mask import (RelatednessScores, MaskPlan, relatedness_scores, gumbel_perturb, select_centric,
                   mask_edges, random_mask, infomax_loss, write_relatedness_audit)
from .encoder import NormalizedAdjacency, normalized_weights, propagate, encode
from .decoder import (AttentionGraph, AttentionParams, init_attention_params, sample_attention_graph,
                      full_attention_graph, attention_layer, attention_weights, final_embeddings)
from .losses import LossBreakdown, recon_loss, rec_loss, uniformity_loss, squared_norm, compose
from .autocf import (ModelState, MaskStructure, ForwardTrace, LossSettings, init_model,
                     unmasked_structure, forward, joint_loss, inference_embeddings)
