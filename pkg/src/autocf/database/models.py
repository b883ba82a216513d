from sqlalchemy import Column, Integer, String, Float, DateTime, ForeignKey, Text, Enum
from sqlalchemy.orm import relationship, Mapped
from .connection import Base
import enum
from datetime import datetime
from typing import Optional, List

class RunStatus(enum.Enum):
    """Lifecycle of a registered run."""
    RUNNING = "running"
    FINISHED = "finished"
    FAILED = "failed"

class Run(Base):
    """One CLI invocation with its provenance.

    Attributes:
        id (int): Primary key
        command (str): Subcommand name (train, evaluate, ablate, ...)
        seed (int): Run seed
        version (str): git-describe style version string
        config_json (str): Resolved configuration as JSON
        fingerprint (str): Short hash of the resolved configuration
        started_at (datetime): Start time
        finished_at (Optional[datetime]): End time
        wall_seconds (Optional[float]): Elapsed wall-clock seconds
        status (RunStatus): Running, finished or failed
        error (Optional[str]): Failure diagnostics
        epochs (List[EpochLog]): Per-epoch loss records
        metrics (List[MetricRecord]): Evaluation records
    """
    __tablename__ = 'runs'

    id: Mapped[int] = Column(Integer, primary_key=True)
    command: Mapped[str] = Column(String, nullable=False)
    seed: Mapped[int] = Column(Integer, nullable=False)
    version: Mapped[str] = Column(String, nullable=False)
    config_json: Mapped[str] = Column(Text, nullable=False)
    fingerprint: Mapped[str] = Column(String(16), nullable=False)
    started_at: Mapped[datetime] = Column(DateTime, nullable=False)
    finished_at: Mapped[Optional[datetime]] = Column(DateTime)
    wall_seconds: Mapped[Optional[float]] = Column(Float)
    status: Mapped[RunStatus] = Column(Enum(RunStatus), nullable=False, default=RunStatus.RUNNING)
    error: Mapped[Optional[str]] = Column(Text)

    epochs: Mapped[List["EpochLog"]] = relationship("EpochLog", back_populates="run")
    metrics: Mapped[List["MetricRecord"]] = relationship("MetricRecord", back_populates="run")

class EpochLog(Base):
    """Epoch-mean loss breakdown of a training run.

    Attributes:
        id (int): Primary key
        run_id (int): Foreign key to the run
        epoch (int): Epoch number (1-based)
        steps (int): Optimizer steps taken so far
        rec, recon, uniformity, infomax, weight_decay, total (float): Epoch means
        validation_recall (Optional[float]): Validation Recall@20
        wall_seconds (float): Epoch wall time
    """
    __tablename__ = 'epoch_logs'

    id: Mapped[int] = Column(Integer, primary_key=True)
    run_id: Mapped[int] = Column(Integer, ForeignKey('runs.id'), nullable=False)
    epoch: Mapped[int] = Column(Integer, nullable=False)
    steps: Mapped[int] = Column(Integer, nullable=False)
    rec: Mapped[float] = Column(Float, nullable=False)
    recon: Mapped[float] = Column(Float, nullable=False)
    uniformity: Mapped[float] = Column(Float, nullable=False)
    infomax: Mapped[float] = Column(Float, nullable=False)
    weight_decay: Mapped[float] = Column(Float, nullable=False)
    total: Mapped[float] = Column(Float, nullable=False)
    validation_recall: Mapped[Optional[float]] = Column(Float)
    wall_seconds: Mapped[float] = Column(Float, nullable=False)

    run: Mapped["Run"] = relationship("Run", back_populates="epochs")

class MetricRecord(Base):
    """One aggregated metrics row of a report.

    Attributes:
        id (int): Primary key
        run_id (int): Foreign key to the run
        scope (str): overall, sparsity, noise, ablation or popularity
        group (str): Sparsity group label, variant tag or 'all'
        noise_ratio (Optional[float]): Noise ratio for noise-sweep rows
        cutoff (int): N
        recall (float): Recall@N
        ndcg (float): NDCG@N
        users (int): Users averaged over
    """
    __tablename__ = 'metric_records'

    id: Mapped[int] = Column(Integer, primary_key=True)
    run_id: Mapped[int] = Column(Integer, ForeignKey('runs.id'), nullable=False)
    scope: Mapped[str] = Column(String, nullable=False)
    group: Mapped[str] = Column(String, nullable=False)
    noise_ratio: Mapped[Optional[float]] = Column(Float)
    cutoff: Mapped[int] = Column(Integer, nullable=False)
    recall: Mapped[float] = Column(Float, nullable=False)
    ndcg: Mapped[float] = Column(Float, nullable=False)
    users: Mapped[int] = Column(Integer, nullable=False)

    run: Mapped["Run"] = relationship("Run", back_populates="metrics")
