import argparse
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import save_checkpoint
from ..analysis.evaluator import embedding_scorer, per_user_metrics
from ..constants import DEFAULT_CUTOFFS, EARLY_STOP_CUTOFF, Readout, RngStream, Variant
from ..data.split import DatasetSplit
from ..exceptions import ConfigError, EmptyDatasetError, NonFiniteError, TrainingDivergedError
from ..model.autocf import (LossSettings, MaskStructure, ModelState, init_model,
                            inference_embeddings, joint_loss)
from ..model.decoder import sample_attention_graph
from ..model.encoder import normalized_weights
from ..model.losses import LossBreakdown
from ..model.mask import (gumbel_perturb, mask_edges, random_mask, relatedness_scores, select_centric,
                          write_relatedness_audit)
from ..tensor import Tape, adam_step, set_default_dtype

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

LAMBDA1_RANGE = (1e-4, 1e1)
LAMBDA2_RANGE = (1e-8, 1e-3)


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    Attributes:
        embedding_dim: Embedding size d
        layers: Propagation layers L
        heads: Attention heads H (must divide d)
        centric: Centric nodes per re-mask S (0 disables masking)
        hops: Masking depth k
        rho: Active-set ratio for the attention graph
        remask_period: Optimizer steps between re-masks T
        lambda1: Weight of the self-supervised terms (0 disables them)
        lambda2: Weight decay (0 disables it)
        lr: Adam learning rate
        batch_size: Training edges per step
        epochs: Maximum epochs
        seed: Run seed; every RNG stream derives from it
        patience: Epochs without validation Recall@20 improvement before stopping
        temperature: Divisor of dot products in the uniformity loss
        readout: Relatedness readout, 'mean' or 'sum'
        variant: 'full' or an ablation tag (-GSA, -M, -IM, -L2M)
        precision: 'float64' or 'float32'
        cutoffs: Evaluation cutoffs N
        max_disconnected_remasks: Consecutive re-masks isolating every batch node
            before S is halved
        audit: Write the relatedness scores and centric flags of every re-mask
            to <out>/relatedness/step_<n>.tsv
    """
    embedding_dim: int = 32
    layers: int = 2
    heads: int = 4
    centric: int = 200
    hops: int = 2
    rho: float = 0.2
    remask_period: int = 10
    lambda1: float = 1.0
    lambda2: float = 1e-7
    lr: float = 1e-3
    batch_size: int = 4096
    epochs: int = 100
    seed: int = 0
    patience: int = 10
    temperature: float = 1.0
    readout: str = Readout.MEAN.value
    variant: str = Variant.FULL.value
    precision: str = 'float64'
    cutoffs: Tuple[int, ...] = DEFAULT_CUTOFFS
    max_disconnected_remasks: int = 5
    audit: bool = False

    def validate(self) -> 'TrainConfig':
        positive = ('embedding_dim', 'layers', 'heads', 'hops', 'remask_period', 'batch_size',
                    'epochs', 'patience')
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}", key=name)
        if self.embedding_dim % self.heads:
            raise ConfigError(f"embedding_dim {self.embedding_dim} is not divisible by "
                              f"heads {self.heads}", key='heads')
        if self.centric < 0:
            raise ConfigError(f"centric must be >= 0, got {self.centric}", key='centric')
        if self.max_disconnected_remasks < 0:
            raise ConfigError("max_disconnected_remasks must be >= 0", key='max_disconnected_remasks')
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho}", key='rho')
        for name, (low, high) in (('lambda1', LAMBDA1_RANGE), ('lambda2', LAMBDA2_RANGE)):
            value = getattr(self, name)
            if value != 0 and not low <= value <= high:
                raise ConfigError(f"{name} must be 0 or within [{low:g}, {high:g}], got {value}",
                                  key=name)
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}", key='lr')
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}",
                              key='temperature')
        if self.readout not in {r.value for r in Readout}:
            raise ConfigError(f"readout must be mean or sum, got {self.readout!r}", key='readout')
        Variant.parse(self.variant)
        if self.precision not in ('float64', 'float32'):
            raise ConfigError(f"precision must be float64 or float32, got {self.precision!r}",
                              key='precision')
        if not self.cutoffs or any(int(c) < 1 for c in self.cutoffs):
            raise ConfigError(f"cutoffs must be positive, got {self.cutoffs}", key='cutoffs')
        return self

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['cutoffs'] = list(self.cutoffs)
        return values

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'TrainConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"unknown training setting {key!r}", key=key)
        values = dict(values)
        if 'cutoffs' in values:
            values['cutoffs'] = tuple(int(c) for c in values['cutoffs'])
        return cls(**values)

    def loss_settings(self) -> LossSettings:
        return LossSettings(num_layers=self.layers, hops=self.hops, lambda1=self.lambda1,
                            lambda2=self.lambda2, temperature=self.temperature,
                            readout=self.readout, variant=Variant.parse(self.variant))

    @staticmethod
    def add_arguments_to_parser(parser: argparse.ArgumentParser) -> None:
        """Add one `--key-with-dashes` override per training setting.

        Args:
            parser: ArgumentParser to add arguments to
        """
        group = parser.add_argument_group('training')
        group.add_argument('--embedding-dim', type=int, help='Embedding size d (default 32)')
        group.add_argument('--layers', type=int, help='Propagation layers L (default 2)')
        group.add_argument('--heads', type=int, help='Attention heads H (default 4)')
        group.add_argument('--centric', type=int, help='Centric nodes per re-mask S (default 200)')
        group.add_argument('--hops', type=int, help='Masking depth k (default 2)')
        group.add_argument('--rho', type=float, help='Attention active-set ratio (default 0.2)')
        group.add_argument('--remask-period', type=int, help='Steps between re-masks T (default 10)')
        group.add_argument('--lambda1', type=float, help='Self-supervised loss weight (default 1.0)')
        group.add_argument('--lambda2', type=float, help='Weight decay (default 1e-7)')
        group.add_argument('--lr', type=float, help='Learning rate (default 1e-3)')
        group.add_argument('--batch-size', type=int, help='Training edges per step (default 4096)')
        group.add_argument('--epochs', type=int, help='Maximum epochs (default 100)')
        group.add_argument('--seed', type=int, help='Run seed (default 0)')
        group.add_argument('--patience', type=int, help='Early-stopping patience (default 10)')
        group.add_argument('--temperature', type=float, help='Uniformity temperature (default 1.0)')
        group.add_argument('--readout', type=str, choices=[r.value for r in Readout],
                           help='Relatedness readout (default mean)')
        group.add_argument('--variant', type=str, help='full, -GSA, -M, -IM or -L2M')
        group.add_argument('--precision', type=str, choices=['float64', 'float32'],
                           help='Floating-point precision (default float64)')
        group.add_argument('--cutoffs', type=str, help='Comma-separated cutoffs (default 20,40)')
        group.add_argument('--max-disconnected-remasks', type=int,
                           help='Re-masks isolating all batch nodes before S is halved (default 5)')
        group.add_argument('--audit', action='store_const', const='true',
                           help='Dump relatedness scores at every re-mask')


@dataclass
class TrainResult:
    """Outcome of `train`.

    Attributes:
        state: Parameters of the best validation epoch (last epoch without validation data)
        loss_log: One record per optimizer step
        epoch_log: One record per epoch
        mask_log: One record per re-mask
        best_epoch: Epoch the returned state comes from
        best_validation: Its validation Recall@20 (None without validation data)
    """
    state: ModelState
    loss_log: List[Dict[str, Any]] = field(default_factory=list)
    epoch_log: List[Dict[str, Any]] = field(default_factory=list)
    mask_log: List[Dict[str, Any]] = field(default_factory=list)
    best_epoch: int = 0
    best_validation: Optional[float] = None


class Trainer:
    """Runs the epoch/batch loop with periodic re-masking.

    Every random draw comes from one of four named streams spawned from the
    run seed, so evaluation and logging never perturb the training draws.

    With the -L2M variant, `mask_schedule` holds the masked-edge count of
    each re-mask of the full model; re-mask j masks `mask_schedule[j]`
    random edges. Past the end of the schedule the count comes from a
    learned mask on this run's own embeddings.
    """

    def __init__(self, config: TrainConfig, split: DatasetSplit,
                 out_dir: Optional[str] = None,
                 epoch_callback: Optional[Callable[[Dict[str, Any]], None]] = None,
                 threads: int = 1, mask_schedule: Optional[Sequence[int]] = None) -> None:
        self.config = config.validate()
        if split.train.num_edges == 0:
            raise EmptyDatasetError("training graph has no edges")
        if mask_schedule is not None and Variant.parse(config.variant) is not Variant.NO_L2M:
            raise ConfigError(f"a mask schedule only applies to -L2M, not {config.variant}",
                              key='variant')
        self.mask_schedule = [int(c) for c in mask_schedule] if mask_schedule is not None else None
        set_default_dtype(config.precision)
        self.split = split
        self.graph = split.train
        self.out_dir = out_dir
        self.epoch_callback = epoch_callback
        self.threads = threads
        self.variant = Variant.parse(config.variant)
        self.settings = config.loss_settings()

        seeds = np.random.SeedSequence(config.seed).spawn(len(RngStream))
        self.rngs = {stream: np.random.default_rng(seq) for stream, seq in zip(RngStream, seeds)}
        self.state = init_model(self.graph.num_users, self.graph.num_items, config.embedding_dim,
                                config.heads, self.rngs[RngStream.INIT], lr=config.lr,
                                dtype=np.dtype(config.precision))
        self.centric = min(config.centric, self.graph.num_nodes)
        self.structure: Optional[MaskStructure] = None
        self.disconnected_remasks = 0
        self.loss_log: List[Dict[str, Any]] = []
        self.epoch_log: List[Dict[str, Any]] = []
        self.mask_log: List[Dict[str, Any]] = []
        self._train_edges = np.stack([self.graph.users, self.graph.items], axis=1)

    def remask(self, batch: np.ndarray) -> MaskStructure:
        """Select centric nodes on the current ego embeddings and rebuild the structure."""
        config = self.config
        graph = self.graph
        learned_count = 0
        remask_index = len(self.mask_log)
        if self.variant is Variant.NO_M or self.centric == 0:
            plan = mask_edges(graph, [], config.hops)
        elif self.mask_schedule is not None and remask_index < len(self.mask_schedule):
            learned_count = self.mask_schedule[remask_index]
            plan = random_mask(graph, learned_count, self.rngs[RngStream.MASK])
        else:
            scores = relatedness_scores(graph, self.state.ego, config.hops, readout=config.readout)
            perturbed = gumbel_perturb(scores, self.rngs[RngStream.MASK])
            centric = select_centric(perturbed, self.centric, nodes=scores.nodes)
            plan = mask_edges(graph, centric, config.hops)
            learned_count = plan.num_masked
            if config.audit and self.out_dir:
                audit_dir = os.path.join(self.out_dir, 'relatedness')
                os.makedirs(audit_dir, exist_ok=True)
                write_relatedness_audit(scores, centric,
                                        os.path.join(audit_dir, f"step_{self.state.step}.tsv"))
            if self.variant is Variant.NO_L2M:
                if self.mask_schedule is not None:
                    logger.debug(f"Mask schedule exhausted at re-mask {remask_index}; "
                                 f"using the learned count {learned_count}")
                plan = random_mask(graph, learned_count, self.rngs[RngStream.MASK])

        attention_graph = sample_attention_graph(plan, config.rho, self.rngs[RngStream.ATTENTION])
        structure = MaskStructure(plan, normalized_weights(plan.surviving_graph), attention_graph)
        self.mask_log.append({'step': self.state.step, 'centric': int(plan.centric.size),
                              'learned_masked': learned_count, 'masked': plan.num_masked,
                              'active_nodes': int(attention_graph.active.size)})
        logger.debug(f"Re-mask at step {self.state.step}: {plan.centric.size} centric nodes, "
                     f"{plan.num_masked} masked edges, {attention_graph.active.size} active nodes")
        self._check_disconnected(structure, batch)
        return structure

    def _check_disconnected(self, structure: MaskStructure, batch: np.ndarray) -> None:
        if structure.plan.num_masked == 0:
            self.disconnected_remasks = 0
            return
        degrees = structure.plan.surviving_graph.degrees()
        nodes = np.concatenate([batch[:, 0], batch[:, 1] + self.graph.num_users])
        if degrees[nodes].max() > 0:
            self.disconnected_remasks = 0
            return
        self.disconnected_remasks += 1
        if self.disconnected_remasks > self.config.max_disconnected_remasks:
            reduced = max(1, self.centric // 2)
            logger.warning(f"Masking isolated every batch node for {self.disconnected_remasks} "
                           f"consecutive re-masks; reducing centric nodes {self.centric} -> {reduced}")
            self.centric = reduced
            self.disconnected_remasks = 0

    def train_step(self, batch: np.ndarray, epoch: int) -> LossBreakdown:
        """Forward, backward and one Adam update on a batch of training edges."""
        if self.structure is None or self.state.step % self.config.remask_period == 0:
            self.structure = self.remask(batch)
        with Tape() as tape:
            loss, breakdown = joint_loss(self.state, self.graph, self.structure, batch, self.settings)
        if not np.isfinite(breakdown.total):
            self._diverged(f"non-finite loss at step {self.state.step}: {breakdown}")

        params = self.state.parameters()
        tape.backward(loss, list(params.values()))
        try:
            adam_step(self.state.adam, params, {name: p.grad for name, p in params.items()})
        except NonFiniteError as e:
            self._diverged(f"step {self.state.step}: {e}", parameter=e.parameter)
        self.state.step += 1

        record = {'epoch': epoch, 'step': self.state.step}
        record.update(breakdown.to_record())
        self.loss_log.append(record)
        return breakdown

    def _diverged(self, message: str, parameter: Optional[str] = None) -> None:
        path = None
        if self.out_dir:
            path = save_checkpoint(self.state, self.config.to_dict(),
                                   os.path.join(self.out_dir, 'last_good'))
        logger.error(f"Training diverged ({message}); last good state: {path}")
        self._flush_logs()
        error = TrainingDivergedError(message, checkpoint_path=path)
        error.parameter = parameter
        raise error

    def validation_recall(self) -> Optional[float]:
        if len(self.split.validation) == 0:
            return None
        h_hat = inference_embeddings(self.state, self.graph, self.config.layers, self.variant)
        per_user = per_user_metrics(embedding_scorer(h_hat, self.graph.num_users), self.graph,
                                    self.split.held_out('validation'), (EARLY_STOP_CUTOFF,),
                                    self.threads)
        return float(per_user['recall'].mean()) if not per_user.empty else 0.0

    def fit(self) -> TrainResult:
        """Train until `epochs` or early stopping; returns the best validation state."""
        config = self.config
        best_state, best_epoch, best_recall, stale = None, 0, None, 0
        num_edges = len(self._train_edges)
        logger.info(f"Training {config.variant} on {num_edges} edges, "
                    f"{self.graph.num_users} users, {self.graph.num_items} items")

        for epoch in range(1, config.epochs + 1):
            started = time.perf_counter()
            order = self.rngs[RngStream.SHUFFLE].permutation(num_edges)
            breakdowns = [self.train_step(self._train_edges[order[start:start + config.batch_size]], epoch)
                          for start in range(0, num_edges, config.batch_size)]
            self.state.epoch = epoch
            wall_seconds = time.perf_counter() - started

            means = {key: float(np.mean([getattr(b, key) for b in breakdowns]))
                     for key in ('rec', 'recon', 'uniformity', 'infomax', 'weight_decay', 'total')}
            recall = self.validation_recall()
            entry = {'epoch': epoch, 'steps': self.state.step, **means,
                     f"validation_recall@{EARLY_STOP_CUTOFF}": recall, 'wall_seconds': wall_seconds}
            self.epoch_log.append(entry)
            logger.info(f"Epoch {epoch}: total {means['total']:.6f} (rec {means['rec']:.6f}, "
                        f"recon {means['recon']:.6f}, uniformity {means['uniformity']:.6f}, "
                        f"infomax {means['infomax']:.6f}), validation recall {recall}, "
                        f"{wall_seconds:.2f}s")
            if self.epoch_callback:
                self.epoch_callback(entry)

            if recall is None:
                best_state, best_epoch = None, epoch
                continue
            if best_recall is None or recall > best_recall:
                best_state, best_epoch, best_recall, stale = self.state.snapshot(), epoch, recall, 0
            else:
                stale += 1
                if stale >= config.patience:
                    logger.info(f"No validation improvement for {stale} epochs, stopping at {epoch}")
                    break

        state = best_state if best_state is not None else self.state
        self._flush_logs()
        if self.out_dir:
            save_checkpoint(state, config.to_dict(), os.path.join(self.out_dir, 'checkpoint'))
        return TrainResult(state, self.loss_log, self.epoch_log, self.mask_log,
                           best_epoch, best_recall)

    def _flush_logs(self) -> None:
        if not self.out_dir:
            return
        os.makedirs(self.out_dir, exist_ok=True)
        for name, rows in (('loss_log', self.loss_log), ('epochs', self.epoch_log),
                           ('masks', self.mask_log)):
            with open(os.path.join(self.out_dir, f"{name}.jsonl"), 'w') as f:
                for row in rows:
                    f.write(json.dumps(row) + '\n')


def train(config: TrainConfig, split: DatasetSplit, out_dir: Optional[str] = None,
          epoch_callback: Optional[Callable[[Dict[str, Any]], None]] = None,
          threads: int = 1, mask_schedule: Optional[Sequence[int]] = None) -> TrainResult:
    """Train a model on `split.train` with early stopping on the validation edges.

    Args:
        config: Training configuration
        split: Dataset split
        out_dir: When set, loss logs and the final checkpoint are written here
        epoch_callback: Called with every epoch record (run registry hook)
        threads: Evaluation threads for validation
        mask_schedule: Masked-edge count per re-mask for the -L2M variant

    Returns:
        TrainResult
    """
    return Trainer(config, split, out_dir, epoch_callback, threads, mask_schedule).fit()
