import os
from typing import Optional

from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, declarative_base


# Run registry location. The environment variable wins over the default;
# an explicit URL passed to init_db wins over both.
DEFAULT_DATABASE_URL = "sqlite:///runs.db"
DATABASE_URL_ENV = "DSE_REGISTRY_URL"

# Session factory, bound to an engine by init_db().
SessionLocal = sessionmaker(autocommit=False, autoflush=False)

# Base class for the ORM models.
Base = declarative_base()


def database_url(url: Optional[str] = None) -> Optional[str]:
    """Resolves the registry URL; returns None when the registry is disabled ('none')."""
    url = url or os.environ.get(DATABASE_URL_ENV) or DEFAULT_DATABASE_URL
    return None if url.lower() == "none" else url


def init_db(url: Optional[str] = None):
    """
    Creates the engine for the registry, binds the session factory and creates all tables.
    Returns the engine, or None when the registry is disabled.
    """
    resolved = database_url(url)
    if resolved is None:
        return None
    connect_args = {"check_same_thread": False} if resolved.startswith("sqlite") else {}
    engine = create_engine(resolved, connect_args=connect_args)
    SessionLocal.configure(bind=engine)
    # Models must be imported before create_all so they are registered with the Base metadata.
    from app.db.models import MetricRecord, RunRecord
    Base.metadata.create_all(bind=engine)
    return engine
