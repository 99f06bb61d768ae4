"""In-memory registry of experiment runs served over HTTP."""

import uuid
from datetime import datetime, timedelta
from typing import Dict, List, Optional
import logging

from app.schemas import MetricsRow, RunSummary

logger = logging.getLogger(__name__)


class RunRecord:
    """One finished (or failed) experiment run."""

    def __init__(self, run_id: str, profile: str, policies: List[str]):
        """
        Initialize a run record.

        Args:
            run_id: Unique run identifier
            profile: Scenario profile the run started from
            policies: Policies evaluated in the run
        """
        self.run_id = run_id
        self.profile = profile
        self.policies = policies
        self.status = "running"
        self.created_at = datetime.now()
        self.finished_at: Optional[datetime] = None
        self.summary: List[MetricsRow] = []
        self.out_dir: Optional[str] = None
        self.error: Optional[str] = None

    def finish(self, summary: List[MetricsRow], out_dir: str) -> None:
        self.summary = summary
        self.out_dir = out_dir
        self.status = "finished"
        self.finished_at = datetime.now()
        logger.info(f"Run {self.run_id}: finished with {len(summary)} summary rows")

    def fail(self, error: str) -> None:
        self.error = error
        self.status = "failed"
        self.finished_at = datetime.now()
        logger.error(f"Run {self.run_id}: failed: {error}")

    @property
    def elapsed_s(self) -> float:
        end = self.finished_at or datetime.now()
        return (end - self.created_at).total_seconds()

    def is_expired(self, timeout_minutes: int) -> bool:
        """True once the run finished more than timeout_minutes ago."""
        if self.finished_at is None:
            return False
        return datetime.now() > self.finished_at + timedelta(minutes=timeout_minutes)

    def to_summary(self) -> RunSummary:
        return RunSummary(run_id=self.run_id, status=self.status, profile=self.profile,
                          elapsed_s=self.elapsed_s, summary=self.summary, out_dir=self.out_dir)


class RunRegistry:
    """Keeps recent runs until they expire."""

    def __init__(self, timeout_minutes: int = 60):
        self.runs: Dict[str, RunRecord] = {}
        self.timeout_minutes = timeout_minutes
        logger.info(f"RunRegistry initialized with {timeout_minutes}min retention")

    def create_run(self, profile: str, policies: List[str]) -> RunRecord:
        run_id = str(uuid.uuid4())
        record = RunRecord(run_id, profile, policies)
        self.runs[run_id] = record
        logger.info(f"Registered run {run_id} (profile={profile}, policies={policies})")
        return record

    def get_run(self, run_id: str) -> Optional[RunRecord]:
        self._cleanup_expired_runs()
        return self.runs.get(run_id)

    def _cleanup_expired_runs(self) -> None:
        expired = [rid for rid, run in self.runs.items() if run.is_expired(self.timeout_minutes)]
        for rid in expired:
            del self.runs[rid]
        if expired:
            logger.warning(f"Dropped {len(expired)} expired runs")

    def get_active_run_count(self) -> int:
        self._cleanup_expired_runs()
        return len(self.runs)


run_registry = RunRegistry()
