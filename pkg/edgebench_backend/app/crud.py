from typing import Optional

from fastapi import HTTPException
from sqlalchemy.orm import Session

from . import models, schemas

RUN_COLUMNS = tuple(schemas.RunRow.model_fields) + ("structure_hash",)


def create_run(db: Session, summary: schemas.RunSummary):
    db_run = models.RunRecord(
        **{column: getattr(summary, column) for column in RUN_COLUMNS}
    )
    db.add(db_run)
    db.commit()
    db.refresh(db_run)
    return db_run


def get_runs(
    db: Session, policy: Optional[str] = None, scenario_id: Optional[str] = None
):
    query = db.query(models.RunRecord)
    if policy is not None:
        query = query.filter(models.RunRecord.policy == policy)
    if scenario_id is not None:
        query = query.filter(models.RunRecord.scenario_id == scenario_id)
    return query.order_by(models.RunRecord.id).all()


def get_run(db: Session, run_id: int):
    db_run = db.query(models.RunRecord).filter(models.RunRecord.id == run_id).first()
    if not db_run:
        raise HTTPException(status_code=404, detail="Run not found")
    return db_run


def delete_run(db: Session, run_id: int):
    db_run = get_run(db, run_id)
    db.delete(db_run)
    db.commit()


def create_solve(db: Session, result: schemas.SolveResult):
    db_solve = models.SolveRecord(**result.model_dump())
    db.add(db_solve)
    db.commit()
    db.refresh(db_solve)
    return db_solve


def get_solves(db: Session):
    return db.query(models.SolveRecord).order_by(models.SolveRecord.id).all()
