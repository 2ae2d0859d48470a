from typing import Dict, Optional, Tuple

from sqlalchemy.orm import Session
from app.db import models


def get_run_by_id(db: Session, run_id: int):
    """Fetches a single run by its primary key."""
    return db.query(models.RunRecord).filter(models.RunRecord.id == run_id).first()

def get_all_runs(db: Session, experiment: Optional[str] = None):
    """Fetches recorded runs, newest first, optionally for one experiment."""
    query = db.query(models.RunRecord)
    if experiment:
        query = query.filter(models.RunRecord.experiment == experiment)
    return query.order_by(models.RunRecord.created_at.desc(), models.RunRecord.id.desc()).all()

def create_run(db: Session, experiment: str, profile: str, seed: int, filter_name: str,
               dataset_digest: Optional[str] = None, status: str = "RUNNING"):
    """Creates a run record before its results are attached."""
    db_run = models.RunRecord(experiment=experiment, profile=profile, seed=seed, filter_name=filter_name,
                              dataset_digest=dataset_digest, status=status)
    db.add(db_run)
    db.commit()
    db.refresh(db_run)
    return db_run

def update_run_status(db: Session, run_id: int, status: str, error: Optional[str] = None,
                      mean_step_ms: Optional[float] = None):
    """Updates the status (and optional error / timing) of an existing run."""
    db_run = get_run_by_id(db, run_id)
    if db_run:
        db_run.status = status
        db_run.error = error
        if mean_step_ms is not None:
            db_run.mean_step_ms = mean_step_ms
        db.commit()
        db.refresh(db_run)
    return db_run

def add_metrics(db: Session, run_id: int, values: Dict[Tuple[str, str], float]):
    """Attaches (variable, metric) -> value pairs to a run."""
    for (variable, metric), value in values.items():
        db.add(models.MetricRecord(run_id=run_id, variable=variable, metric=metric, value=float(value)))
    db.commit()

def clear_all_data(db: Session):
    """Deletes all records from all tables."""
    db.query(models.MetricRecord).delete()
    db.query(models.RunRecord).delete()
    db.commit()
