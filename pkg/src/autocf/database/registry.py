import json
import logging
import math
from datetime import datetime
from typing import Any, Dict, List, Optional

from sqlalchemy.orm import Session

from .connection import get_session
from .models import EpochLog, MetricRecord, Run, RunStatus
from ..analysis.evaluator import MetricsReport, config_fingerprint
from ..constants import EARLY_STOP_CUTOFF

logger = logging.getLogger(__name__)


def _optional_float(value: Any) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value


class RunRegistry:
    """Records runs, epoch logs and metric rows in the run database."""

    def __init__(self, session: Optional[Session] = None, url: Optional[str] = None,
                 out_dir: Optional[str] = None) -> None:
        """Initialize the registry with a database session.

        Args:
            session: Existing session (a new one is created otherwise)
            url: Database URL override
            out_dir: Output directory hosting the default SQLite file
        """
        self.session: Session = session or get_session(url, out_dir)

    def start_run(self, command: str, seed: int, version: str, config: Dict[str, Any]) -> Run:
        run = Run(command=command, seed=int(seed), version=version,
                  config_json=json.dumps(config, sort_keys=True, default=str),
                  fingerprint=config_fingerprint(config), started_at=datetime.now(),
                  status=RunStatus.RUNNING)
        self.session.add(run)
        self.session.commit()
        logger.info(f"Registered run {run.id} ({command}, seed {seed})")
        return run

    def record_epoch(self, run: Run, entry: Dict[str, Any]) -> EpochLog:
        log = EpochLog(run_id=run.id, epoch=int(entry['epoch']), steps=int(entry['steps']),
                       rec=entry['rec'], recon=entry['recon'], uniformity=entry['uniformity'],
                       infomax=entry['infomax'], weight_decay=entry['weight_decay'],
                       total=entry['total'],
                       validation_recall=_optional_float(
                           entry.get(f"validation_recall@{EARLY_STOP_CUTOFF}")),
                       wall_seconds=float(entry['wall_seconds']))
        self.session.add(log)
        self.session.commit()
        return log

    def record_metrics(self, run: Run, report: MetricsReport) -> List[MetricRecord]:
        records = [MetricRecord(run_id=run.id, scope=row['scope'], group=row['group'],
                                noise_ratio=_optional_float(row['noise_ratio']),
                                cutoff=int(row['cutoff']), recall=float(row['recall']),
                                ndcg=float(row['ndcg']), users=int(row['users']))
                   for row in report.records.to_dict(orient='records')]
        self.session.add_all(records)
        self.session.commit()
        return records

    def finish_run(self, run: Run, status: RunStatus = RunStatus.FINISHED,
                   error: Optional[str] = None) -> Run:
        run.finished_at = datetime.now()
        run.wall_seconds = (run.finished_at - run.started_at).total_seconds()
        run.status = status
        run.error = error
        self.session.commit()
        logger.info(f"Run {run.id} {status.value} after {run.wall_seconds:.1f}s")
        return run

    def runs(self, command: Optional[str] = None) -> List[Run]:
        query = self.session.query(Run)
        if command:
            query = query.filter(Run.command == command)
        return query.order_by(Run.id).all()
