"""
Evaluation: all-rank metrics, baselines and reports.

The experiment harnesses live in `analysis.experiments`.
"""

from .evaluator import (MetricsReport, all_rank, recall_ndcg, per_user_metrics, popularity_baseline,
                        PopularityRanker, evaluate_model, evaluate_popularity, sparsity_report,
                        export_embeddings, config_fingerprint)
