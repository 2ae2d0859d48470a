from sqlalchemy import Column, Integer, String, DateTime, Float, ForeignKey
from sqlalchemy.orm import relationship
from sqlalchemy.sql import func
from app.db.database import Base


class RunRecord(Base):
    """
    One filter run over one dataset: experiment, noise profile, seed and filter,
    with its final status and the digest of the dataset it consumed.
    """
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    experiment = Column(String, nullable=False, index=True)
    profile = Column(String, nullable=True)
    seed = Column(Integer, nullable=False)
    filter_name = Column(String, nullable=False)
    status = Column(String, default="RUNNING")  # RUNNING, SUCCESS, FAILED
    dataset_digest = Column(String, nullable=True)
    mean_step_ms = Column(Float, nullable=True)
    error = Column(String, nullable=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    metrics = relationship("MetricRecord", back_populates="run", cascade="all, delete-orphan")

    def __repr__(self):
        return f"<RunRecord(id={self.id}, experiment='{self.experiment}', seed={self.seed}, filter='{self.filter_name}', status='{self.status}')>"


class MetricRecord(Base):
    """A single index value (eps1, eps2, rmse) for one variable of a run."""
    __tablename__ = "metrics"

    id = Column(Integer, primary_key=True, index=True)
    variable = Column(String, nullable=False)
    metric = Column(String, nullable=False)
    value = Column(Float, nullable=False)

    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)

    run = relationship("RunRecord", back_populates="metrics")

    def __repr__(self):
        return f"<MetricRecord(run_id={self.run_id}, variable='{self.variable}', metric='{self.metric}', value={self.value})>"
