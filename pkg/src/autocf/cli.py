"""
Command-line front end.

Settings resolve in this order, later sources winning:
built-in defaults < AUTOCF_<KEY> environment variables < `--config` file
(flat `key = value` lines, `#` comments) < command-line flags.
"""
import argparse
import json
import logging
import os
import subprocess
import time
from dataclasses import dataclass, field, fields
from datetime import datetime
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

from tabulate import tabulate

from . import __version__, config
from .analysis.evaluator import (MetricsReport, config_fingerprint, evaluate_model,
                                 evaluate_popularity, export_embeddings, sparsity_report)
from .analysis.experiments import noise_sweep, run_ablation
from .constants import DEFAULT_SPLIT_RATIOS, SPARSITY_BOUNDS, Variant
from .data.graph import dataset_statistics, load_interactions, subsample_users
from .data.split import DatasetSplit, read_split, split_dataset, write_split
from .database.models import RunStatus
from .database.registry import RunRegistry
from .exceptions import CheckpointNotFoundError, ConfigError
from .training.checkpoint import load_checkpoint
from .training.diagnostics import GRAD_CHECK_THRESHOLD, check_joint_loss_gradients
from .training.trainer import TrainConfig, train

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

COMMANDS = {
    'prepare': 'Load a dataset and write train/validation/test manifests',
    'train': 'Train a model and write checkpoints and loss logs',
    'evaluate': 'Evaluate a checkpoint with all-rank Recall/NDCG',
    'ablate': 'Train and evaluate ablation variants',
    'noise-sweep': 'Retrain under injected noise edges and report degradation',
    'sparsity-report': 'Evaluate a checkpoint per user-degree group',
    'grad-check': 'Finite-difference check of the joint loss on a toy graph',
    'export-embeddings': 'Write final embeddings with original ids',
    'stats': 'Print dataset statistics',
}


def _floats(value: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in str(value).split(',') if v.strip())


def _ints(value: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in str(value).split(',') if v.strip())


def _optional_str(value: str) -> Optional[str]:
    return str(value) if value not in (None, '') else None


def _bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"expected true or false, got {value!r}")


def _variants(value: str) -> Tuple[str, ...]:
    return tuple(Variant.parse(v.strip()).value for v in str(value).split(',') if v.strip())


@dataclass
class ExperimentConfig:
    """Resolved settings of one CLI invocation.

    Attributes:
        train: Training configuration
        dataset: Interaction file (`user<TAB>item` lines)
        split_dir: Directory of split manifests written by `prepare`
        ratios: (train, validation, test) split ratios
        subsample: Fraction of users kept before splitting
        out: Output directory for every artifact
        checkpoint: Checkpoint directory (default: <out>/checkpoint)
        threads: Evaluation threads
        variants: Variants run by `ablate`
        noise_ratios: Ratios run by `noise-sweep`
        sparsity_bounds: User-degree group bounds for `sparsity-report`
        eps: Finite-difference step for `grad-check`
        samples: Coordinates checked by `grad-check`
        threshold: Pass threshold for `grad-check`
    """
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: Optional[str] = None
    split_dir: Optional[str] = None
    ratios: Tuple[float, ...] = DEFAULT_SPLIT_RATIOS
    subsample: float = 1.0
    out: str = config.OUT_DIR
    checkpoint: Optional[str] = None
    threads: int = config.THREADS
    variants: Tuple[str, ...] = tuple(v.value for v in Variant)
    noise_ratios: Tuple[float, ...] = (0.0, 0.25, 0.5)
    sparsity_bounds: Tuple[int, ...] = SPARSITY_BOUNDS
    eps: float = 1e-5
    samples: int = 200
    threshold: float = GRAD_CHECK_THRESHOLD

    def flat(self) -> Dict[str, Any]:
        """Every setting under its config-file key."""
        values = {f.name: getattr(self, f.name) for f in fields(self) if f.name != 'train'}
        values.update(self.train.to_dict())
        return {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}

    @property
    def checkpoint_dir(self) -> str:
        return self.checkpoint or os.path.join(self.out, 'checkpoint')


EXPERIMENT_KEYS: Dict[str, Callable[[str], Any]] = {
    'dataset': _optional_str,
    'split_dir': _optional_str,
    'ratios': _floats,
    'subsample': float,
    'out': str,
    'checkpoint': _optional_str,
    'threads': int,
    'variants': _variants,
    'noise_ratios': _floats,
    'sparsity_bounds': _ints,
    'eps': float,
    'samples': int,
    'threshold': float,
}
TRAIN_KEYS: Dict[str, Callable[[str], Any]] = {
    'embedding_dim': int, 'layers': int, 'heads': int, 'centric': int, 'hops': int,
    'rho': float, 'remask_period': int, 'lambda1': float, 'lambda2': float, 'lr': float,
    'batch_size': int, 'epochs': int, 'seed': int, 'patience': int, 'temperature': float,
    'readout': str, 'variant': lambda v: Variant.parse(str(v)).value, 'precision': str,
    'cutoffs': _ints, 'max_disconnected_remasks': int, 'audit': _bool,
}
ALL_KEYS = {**EXPERIMENT_KEYS, **TRAIN_KEYS}


def parse_config_file(path: str) -> Dict[str, str]:
    """Read flat `key = value` lines; `#` starts a comment, dashes in keys become underscores."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}", key='config')
    values: Dict[str, str] = {}
    with open(path) as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f"{path}:{number}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split('=', 1))
            key = key.replace('-', '_')
            if key not in ALL_KEYS:
                raise ConfigError(f"{path}:{number}: unknown key {key!r}", key=key)
            values[key] = value
    return values


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge defaults, environment, config file and flags into an ExperimentConfig."""
    raw: Dict[str, Any] = {}
    for key in ALL_KEYS:
        env_value = os.getenv(f"AUTOCF_{key.upper()}")
        if env_value:
            raw[key] = env_value
    if getattr(args, 'config', None):
        raw.update(parse_config_file(args.config))
    for key in ALL_KEYS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            raw[key] = flag_value

    converted: Dict[str, Any] = {}
    for key, value in raw.items():
        try:
            converted[key] = ALL_KEYS[key](value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid value {value!r} for {key}: {e}", key=key) from e

    train_values = {k: v for k, v in converted.items() if k in TRAIN_KEYS}
    train_values.setdefault('precision', config.PRECISION)
    experiment_values = {k: v for k, v in converted.items() if k in EXPERIMENT_KEYS}
    resolved = ExperimentConfig(train=TrainConfig.from_dict(train_values).validate(),
                                **experiment_values)
    if resolved.threads < 1:
        raise ConfigError(f"threads must be >= 1, got {resolved.threads}", key='threads')
    return resolved


def version_string() -> str:
    """git-describe style version, falling back to the package version."""
    try:
        described = subprocess.run(['git', 'describe', '--always', '--dirty', '--tags'],
                                   capture_output=True, text=True, timeout=5,
                                   cwd=os.path.dirname(os.path.abspath(__file__)))
        if described.returncode == 0 and described.stdout.strip():
            return described.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def write_provenance(experiment: ExperimentConfig, command: str, version: str,
                     started_at: datetime, wall_seconds: float) -> None:
    """Echo the resolved config and write provenance.json into the output directory."""
    os.makedirs(experiment.out, exist_ok=True)
    flat = experiment.flat()
    with open(os.path.join(experiment.out, 'config.echo'), 'w') as f:
        for key in sorted(flat):
            value = flat[key]
            if isinstance(value, list):
                value = ','.join(str(v) for v in value)
            f.write(f"{key} = {'' if value is None else value}\n")
    provenance = {
        'command': command,
        'seed': experiment.train.seed,
        'version': version,
        'started_at': started_at.isoformat(),
        'wall_seconds': wall_seconds,
        'fingerprint': config_fingerprint(flat),
    }
    with open(os.path.join(experiment.out, 'provenance.json'), 'w') as f:
        json.dump(provenance, f, indent=2, sort_keys=True)


def load_split(experiment: ExperimentConfig) -> DatasetSplit:
    """Split manifests when given, otherwise load, subsample and split the dataset."""
    if experiment.split_dir:
        return read_split(experiment.split_dir)
    if not experiment.dataset:
        raise ConfigError("no dataset given (set dataset or split_dir)", key='dataset')
    graph = load_interactions(experiment.dataset)
    if experiment.subsample < 1.0:
        graph = subsample_users(graph, experiment.subsample, experiment.train.seed)
    return split_dataset(graph, experiment.ratios, experiment.train.seed)


def _load_model(experiment: ExperimentConfig):
    state, stored = load_checkpoint(experiment.checkpoint_dir)
    stored = dict(stored)
    stored['cutoffs'] = list(experiment.train.cutoffs)
    return state, TrainConfig.from_dict(stored).validate()


class CommandRunner:
    """Runs one subcommand against a resolved ExperimentConfig."""

    def __init__(self, experiment: ExperimentConfig, registry: Optional[RunRegistry] = None,
                 quiet: bool = False) -> None:
        self.experiment = experiment
        self.registry = registry
        self.run = None
        self.quiet = quiet

    def say(self, message: str) -> None:
        if not self.quiet:
            print(message)

    def _epoch_callback(self, entry: Dict[str, Any]) -> None:
        if self.registry and self.run is not None:
            self.registry.record_epoch(self.run, entry)
        self.say(f"epoch {entry['epoch']}: total {entry['total']:.6f} "
                 f"({entry['wall_seconds']:.1f}s)")

    def _report(self, report: MetricsReport, name: str) -> None:
        paths = report.write(self.experiment.out, name)
        if self.registry and self.run is not None:
            self.registry.record_metrics(self.run, report)
        self.say(report.table())
        self.say(f"Wrote {paths['jsonl']} and {paths['csv']}")

    def prepare(self) -> int:
        split = load_split(self.experiment)
        paths = write_split(split, os.path.join(self.experiment.out, 'split'))
        self.say(tabulate([[name, split.train.num_edges if name == 'train' else len(getattr(split, name))]
                           for name in ('train', 'validation', 'test')],
                          headers=['part', 'edges']))
        self.say(f"Wrote split manifests to {os.path.dirname(paths['meta'])}")
        return 0

    def stats(self) -> int:
        split = load_split(self.experiment)
        stats = dataset_statistics(split.train)
        stats['held_out'] = len(split.validation) + len(split.test)
        self.say(tabulate(stats.items(), headers=['statistic', 'value'], floatfmt='.6f'))
        return 0

    def train(self) -> int:
        experiment = self.experiment
        split = load_split(experiment)
        result = train(experiment.train, split, experiment.out, self._epoch_callback,
                       threads=experiment.threads)
        report = evaluate_model(result.state, split, experiment.train, threads=experiment.threads)
        self._report(report, 'metrics')
        return 0

    def evaluate(self) -> int:
        experiment = self.experiment
        state, train_config = _load_model(experiment)
        split = load_split(experiment)
        report = evaluate_model(state, split, train_config, threads=experiment.threads)
        report = report.extend(evaluate_popularity(split, train_config.cutoffs,
                                                   threads=experiment.threads))
        self._report(report, 'metrics')
        return 0

    def ablate(self) -> int:
        experiment = self.experiment
        split = load_split(experiment)
        report = MetricsReport()
        full_result = None
        for variant in experiment.variants:
            self.say(f"Running variant {variant}")
            run = run_ablation(variant, experiment.train, split,
                               os.path.join(experiment.out, 'ablation'), experiment.threads,
                               reference=full_result)
            if run.variant is Variant.FULL:
                full_result = run.result
            report = report.extend(run.report)
        self._report(report, 'ablation')
        return 0

    def noise_sweep(self) -> int:
        experiment = self.experiment
        split = load_split(experiment)
        sweep = noise_sweep(experiment.noise_ratios, experiment.train, split,
                            os.path.join(experiment.out, 'noise'), experiment.threads)
        sweep.curve.to_csv(os.path.join(experiment.out, 'noise_curve.csv'), index=False,
                           float_format='%.10g')
        self.say(tabulate(sweep.curve, headers='keys', showindex=False, floatfmt='.4f'))
        self._report(sweep.combined(), 'noise')
        return 0

    def sparsity_report(self) -> int:
        experiment = self.experiment
        state, train_config = _load_model(experiment)
        split = load_split(experiment)
        report = sparsity_report(state, split, train_config, experiment.sparsity_bounds,
                                 experiment.threads)
        self._report(report, 'sparsity')
        return 0

    def grad_check(self) -> int:
        experiment = self.experiment
        report = check_joint_loss_gradients(eps=experiment.eps, samples=experiment.samples,
                                            seed=experiment.train.seed,
                                            threshold=experiment.threshold)
        status = 'PASS' if report.passed else 'FAIL'
        print(f"grad-check: max relative error {report.max_relative_error:.3e} over "
              f"{report.coordinates} coordinates (threshold {report.threshold:g}): {status}")
        return 0 if report.passed else 1

    def export_embeddings(self) -> int:
        experiment = self.experiment
        state, train_config = _load_model(experiment)
        split = load_split(experiment)
        os.makedirs(experiment.out, exist_ok=True)
        path = os.path.join(experiment.out, 'embeddings.tsv')
        rows = export_embeddings(state, split, train_config, path)
        self.say(f"Wrote {rows} embeddings to {path}")
        return 0


REGISTERED = {'train', 'evaluate', 'ablate', 'noise-sweep', 'sparsity-report'}


def add_arguments_to_parser(parser: argparse.ArgumentParser) -> None:
    """Add the shared experiment arguments to a subcommand parser.

    Args:
        parser: ArgumentParser to add arguments to
    """
    parser.add_argument('--config', type=str, help='Flat key = value config file')
    parser.add_argument('--dataset', type=str, help='Interaction file (user<TAB>item)')
    parser.add_argument('--split-dir', type=str, help='Split manifests written by prepare')
    parser.add_argument('--ratios', type=str, help='train,validation,test ratios (default 0.7,0.05,0.25)')
    parser.add_argument('--subsample', type=float, help='Fraction of users to keep (default 1.0)')
    parser.add_argument('--out', type=str, help='Output directory')
    parser.add_argument('--checkpoint', type=str, help='Checkpoint directory (default <out>/checkpoint)')
    parser.add_argument('--threads', type=int, help='Evaluation threads')
    parser.add_argument('--variants', type=str, help='Comma-separated variants for ablate')
    parser.add_argument('--noise-ratios', type=str, help='Comma-separated noise ratios')
    parser.add_argument('--sparsity-bounds', type=str, help='Comma-separated user-degree bounds')
    parser.add_argument('--eps', type=float, help='Finite-difference step for grad-check')
    parser.add_argument('--samples', type=int, help='Coordinates checked by grad-check')
    parser.add_argument('--threshold', type=float, help='grad-check pass threshold')
    TrainConfig.add_arguments_to_parser(parser)
    parser.add_argument('--verbose', action='store_true', help='Verbose logging')
    parser.add_argument('--very-verbose', action='store_true', help='Very verbose logging')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Collaborative filtering with learned graph masking')
    subparsers = parser.add_subparsers(dest='command', help='Available commands')
    for command, help_text in COMMANDS.items():
        add_arguments_to_parser(subparsers.add_parser(command, help=help_text))
    return parser


def cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand.

    Returns:
        0 on success, 1 on runtime failure (or a failed grad-check),
        2 on bad configuration or a missing checkpoint
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if not args.command:
        parser.print_help()
        return 2

    if args.very_verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    elif args.verbose:
        logging.getLogger().setLevel(logging.INFO)
    else:
        logging.getLogger().setLevel(logging.WARNING)

    started_at = datetime.now()
    started = time.perf_counter()
    registry = run = None
    try:
        experiment = resolve_config(args)
        version = version_string()
        if args.command in REGISTERED:
            registry = RunRegistry(out_dir=experiment.out)
            run = registry.start_run(args.command, experiment.train.seed, version, experiment.flat())
        runner = CommandRunner(experiment, registry, quiet=args.verbose or args.very_verbose)
        runner.run = run
        status = getattr(runner, args.command.replace('-', '_'))()
        write_provenance(experiment, args.command, version, started_at,
                         time.perf_counter() - started)
        if registry and run is not None:
            registry.finish_run(run, RunStatus.FINISHED)
        return status
    except ConfigError as e:
        key = f" (key: {e.key})" if e.key else ''
        print(f"error: {e}{key}")
        logger.error(f"Configuration error{key}: {e}")
        status, error = 2, str(e)
    except CheckpointNotFoundError as e:
        print(f"error: {e}")
        logger.error(f"Checkpoint not found: {e}")
        status, error = 2, str(e)
    except Exception as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        print(f"error: {args.command} failed: {e}")
        status, error = 1, str(e)
    if registry and run is not None:
        registry.finish_run(run, RunStatus.FAILED, error=error)
    return status
