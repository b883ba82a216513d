from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, declarative_base
from typing import Optional
from ..config import DATABASE_URL, OUT_DIR

import os

Base = declarative_base()

def get_database_url(out_dir: Optional[str] = None) -> str:
    """Get the run registry URL from config.

    Falls back to a SQLite file inside the output directory; under pytest the
    registry lives in memory.
    """
    if os.getenv('PYTEST_CURRENT_TEST') is not None:
        return 'sqlite://'
    if DATABASE_URL:
        return DATABASE_URL
    directory = out_dir or OUT_DIR
    os.makedirs(directory, exist_ok=True)
    return f"sqlite:///{os.path.abspath(os.path.join(directory, 'runs.db'))}"

def init_db(url: Optional[str] = None, out_dir: Optional[str] = None):
    """Initialize database connection and create missing tables."""
    engine = create_engine(url or get_database_url(out_dir))
    Base.metadata.create_all(engine)
    return engine

def get_session(url: Optional[str] = None, out_dir: Optional[str] = None):
    """Create a new database session."""
    engine = init_db(url, out_dir)
    Session = sessionmaker(bind=engine)
    return Session()
