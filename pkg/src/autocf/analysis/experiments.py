"""
Experiment harnesses: module ablations and the noise-robustness sweep.
"""
import logging
import os
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .evaluator import MetricsReport, evaluate_model
from ..constants import EARLY_STOP_CUTOFF, Variant
from ..data.graph import inject_noise
from ..data.split import DatasetSplit
from ..exceptions import ConfigError
from ..training.trainer import TrainConfig, TrainResult, train

logger = logging.getLogger(__name__)


@dataclass
class AblationRun:
    variant: Variant
    report: MetricsReport
    result: TrainResult


def mask_schedule(result: TrainResult) -> List[int]:
    """Masked-edge count of every re-mask of a finished run."""
    return [int(entry['masked']) for entry in result.mask_log]


def run_ablation(variant: str, config: TrainConfig, split: DatasetSplit,
                 out_dir: Optional[str] = None, threads: int = 1,
                 reference: Optional[TrainResult] = None) -> AblationRun:
    """Train and evaluate one variant under the otherwise unchanged config and seed.

    -L2M masks as many random edges at each re-mask as the full model did at
    the same re-mask. The full model's counts come from `reference` when
    given, otherwise the full configuration is trained first.

    Args:
        variant: 'full', '-GSA', '-M', '-IM' or '-L2M'
        config: Base training configuration
        split: Dataset split
        out_dir: Optional directory for the variant's logs and checkpoint
        threads: Evaluation threads
        reference: Finished run of the full variant under `config`

    Returns:
        AblationRun with the report (scope 'ablation', group = variant tag)
    """
    parsed = Variant.parse(variant)
    variant_config = replace(config, variant=parsed.value).validate()
    run_dir = os.path.join(out_dir, parsed.value) if out_dir else None
    schedule = None
    if parsed is Variant.NO_L2M:
        if reference is None:
            logger.info("Training the full model for the -L2M mask schedule")
            reference = train(replace(config, variant=Variant.FULL.value), split, threads=threads)
        schedule = mask_schedule(reference)
    result = train(variant_config, split, run_dir, threads=threads, mask_schedule=schedule)
    report = evaluate_model(result.state, split, variant_config, threads=threads,
                            scope='ablation', group=parsed.value)
    logger.info(f"Ablation {parsed.value}: recall@{EARLY_STOP_CUTOFF} "
                f"{report.recall(EARLY_STOP_CUTOFF, scope='ablation', group=parsed.value):.4f}")
    return AblationRun(parsed, report, result)


@dataclass
class NoiseSweep:
    """Reports per noise ratio plus the degradation curve.

    `curve` has one row per (ratio, cutoff): noise_edges, recall, ndcg and
    relative degradation (clean - noisy) / clean against ratio 0.
    """
    reports: Dict[float, MetricsReport]
    curve: pd.DataFrame

    def combined(self) -> MetricsReport:
        report = MetricsReport()
        for ratio_report in self.reports.values():
            report = report.extend(ratio_report)
        return report


def degradation(clean: float, noisy: float) -> float:
    """Relative drop (clean - noisy) / clean; 0 when the clean value is 0."""
    return (clean - noisy) / clean if clean else 0.0


def noise_sweep(ratios: Sequence[float], config: TrainConfig, split: DatasetSplit,
                out_dir: Optional[str] = None, threads: int = 1) -> NoiseSweep:
    """Retrain on training graphs with injected noise edges; held-out edges stay unchanged.

    Noise is drawn with the run seed and never coincides with a validation or
    test edge. The clean (ratio 0) run is always included as the reference.
    """
    ratios = sorted({float(r) for r in ratios} | {0.0})
    for ratio in ratios:
        if not 0.0 <= ratio <= 1.0:
            raise ConfigError(f"noise ratio must be in [0, 1], got {ratio}", key='noise_ratios')
    held_out = np.concatenate([split.validation, split.test]).reshape(-1, 2)

    reports: Dict[float, MetricsReport] = {}
    rows: List[Dict] = []
    for ratio in ratios:
        noisy_train = inject_noise(split.train, ratio, config.seed, avoid=held_out)
        noisy_split = split.with_train(noisy_train)
        run_dir = os.path.join(out_dir, f"noise_{ratio:g}") if out_dir else None
        result = train(config, noisy_split, run_dir, threads=threads)
        report = evaluate_model(result.state, noisy_split, config, threads=threads,
                                scope='noise', noise_ratio=ratio)
        reports[ratio] = report
        noise_edges = noisy_train.num_edges - split.train.num_edges
        for cutoff in config.cutoffs:
            recall, ndcg = report.metric(cutoff, scope='noise', noise_ratio=ratio)
            rows.append({'noise_ratio': ratio, 'noise_edges': noise_edges, 'cutoff': int(cutoff),
                         'recall': recall, 'ndcg': ndcg})
        logger.info(f"Noise ratio {ratio:g}: {noise_edges} noise edges")

    curve = pd.DataFrame(rows)
    clean = curve[curve['noise_ratio'] == 0.0].set_index('cutoff')
    curve['recall_degradation'] = [degradation(clean.loc[c, 'recall'], r)
                                   for c, r in zip(curve['cutoff'], curve['recall'])]
    curve['ndcg_degradation'] = [degradation(clean.loc[c, 'ndcg'], n)
                                 for c, n in zip(curve['cutoff'], curve['ndcg'])]
    return NoiseSweep(reports, curve)
