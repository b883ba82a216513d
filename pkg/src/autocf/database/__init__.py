"""
Run registry: provenance, epoch logs and metric records.
"""

from .connection import get_database_url, init_db, get_session
from .models import Run, EpochLog, MetricRecord, RunStatus
from .registry import RunRegistry
