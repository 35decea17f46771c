"""
SQLAlchemy results store for sweeps of the GRID project.
"""

import os
from typing import Dict, Iterable, List, Optional, Tuple

import pandas as pd
from sqlalchemy import Column, Float, ForeignKey, Integer, String, create_engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

from src.utils.exceptions import DatabaseError

Base = declarative_base()


class RunDB(Base):
    """
    SQLAlchemy ORM model for one sweep cell.

    Attributes:
        id: Primary key.
        cell: Position of the cell in the sweep.
        axis: Swept field ("lambda", "slnir" or "mode").
        value: Axis value of the cell, as text.
        scenario, mode, lambda_percent, slnir, seed: Effective run settings.
        final_val_ndcg: Validation NDCG after the last epoch.
        test_ndcg: Final test NDCG.
        output_dir: Directory holding the run's files.
    """

    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    cell = Column(Integer, nullable=False, unique=True)
    axis = Column(String, nullable=False)
    value = Column(String, nullable=False)
    scenario = Column(String, nullable=False)
    mode = Column(String, nullable=False)
    lambda_percent = Column(Integer, nullable=False)
    slnir = Column(Float, nullable=False)
    seed = Column(Integer, nullable=False)
    final_val_ndcg = Column(Float, nullable=True)
    test_ndcg = Column(Float, nullable=True)
    output_dir = Column(String, nullable=False)


class EpochMetricDB(Base):
    """
    SQLAlchemy ORM model for one (epoch, metric, value) row of a run.
    """

    __tablename__ = "epoch_metrics"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)
    epoch = Column(Integer, nullable=False)
    metric = Column(String, nullable=False)
    value = Column(Float, nullable=False)


RUN_COLUMNS = ("cell", "axis", "value", "scenario", "mode", "lambda_percent", "slnir", "seed",
               "final_val_ndcg", "test_ndcg", "output_dir")


class Database:
    """
    Database manager class for the SQLite sweep results store.

    This class handles database initialization, session management,
    and recording and reading back sweep cells.
    """

    def __init__(self, db_path: str = "sweep.db") -> None:
        """
        Initialize the database manager.

        Args:
            db_path: Path to the SQLite database file.
        """
        self.db_path = db_path
        self.engine = None
        self.Session = None

    def init_db(self, reset: bool = True) -> None:
        """
        Initialize the database and create all tables.

        Args:
            reset: Drop existing tables first so a sweep starts clean.

        Raises:
            DatabaseError: If database initialization fails.
        """
        try:
            db_url = f"sqlite:///{os.path.abspath(self.db_path)}"
            self.engine = create_engine(db_url, echo=False)
            if reset:
                Base.metadata.drop_all(self.engine)
            Base.metadata.create_all(self.engine)
            self.Session = sessionmaker(bind=self.engine)
        except Exception as e:
            raise DatabaseError(f"Failed to initialize database: {str(e)}") from e

    def get_session(self) -> Session:
        """
        Get a new database session.

        Raises:
            DatabaseError: If engine is not initialized.
        """
        if self.engine is None:
            raise DatabaseError("Database not initialized. Call init_db() first.")
        return self.Session()

    def close(self) -> None:
        """Close the database connection."""
        if self.engine:
            self.engine.dispose()

    def record_run(self, run: Dict, metrics: Iterable[Tuple[int, str, float]] = ()) -> int:
        """
        Store one sweep cell and its per-epoch metric rows.

        Args:
            run: Values for every column in RUN_COLUMNS.
            metrics: (epoch, metric, value) rows.

        Returns:
            The new run's primary key.

        Raises:
            DatabaseError: If a column is missing or the insert fails.
        """
        missing = [name for name in RUN_COLUMNS if name not in run]
        if missing:
            raise DatabaseError(f"Run record lacks columns: {missing}")
        session = self.get_session()
        try:
            row = RunDB(**{name: run[name] for name in RUN_COLUMNS})
            session.add(row)
            session.flush()
            session.add_all(
                EpochMetricDB(run_id=row.id, epoch=int(epoch), metric=str(metric), value=float(value))
                for epoch, metric, value in metrics
            )
            session.commit()
            return row.id
        except Exception as e:
            session.rollback()
            raise DatabaseError(f"Failed to record run {run.get('cell')}: {str(e)}") from e
        finally:
            session.close()

    def runs_frame(self) -> pd.DataFrame:
        """All runs ordered by cell."""
        session = self.get_session()
        try:
            rows = session.query(RunDB).order_by(RunDB.cell).all()
            return pd.DataFrame([{name: getattr(r, name) for name in RUN_COLUMNS} for r in rows],
                                columns=list(RUN_COLUMNS))
        finally:
            session.close()

    def metrics_frame(self, cell: Optional[int] = None) -> pd.DataFrame:
        """Per-epoch metric rows joined with their cell number."""
        session = self.get_session()
        try:
            query = session.query(RunDB.cell, EpochMetricDB.epoch, EpochMetricDB.metric, EpochMetricDB.value).join(
                EpochMetricDB, EpochMetricDB.run_id == RunDB.id
            )
            if cell is not None:
                query = query.filter(RunDB.cell == cell)
            rows: List = query.order_by(RunDB.cell, EpochMetricDB.id).all()
            return pd.DataFrame(rows, columns=["cell", "epoch", "metric", "value"])
        finally:
            session.close()
