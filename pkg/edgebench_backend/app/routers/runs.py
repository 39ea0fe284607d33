from typing import Optional

from fastapi import APIRouter, Depends
from sqlalchemy.orm import Session

from .. import crud, experiments, schemas
from ..database import get_db
from ..dependencies import domain_errors
from ..scenario import validate_config

router = APIRouter()


@router.post("/runs/", response_model=schemas.Run)
def create_run(
    scenario: schemas.ScenarioConfig,
    lambda_multiplier: float = 1.0,
    db: Session = Depends(get_db),
):
    with domain_errors():
        cfg = validate_config(scenario)
        summary, _ = experiments.run_once(cfg, lambda_multiplier=lambda_multiplier)
    return crud.create_run(db, summary)


@router.get("/runs/", response_model=list[schemas.Run])
def read_runs(
    policy: Optional[str] = None,
    scenario_id: Optional[str] = None,
    db: Session = Depends(get_db),
):
    return crud.get_runs(db, policy=policy, scenario_id=scenario_id)


@router.get("/runs/{run_id}", response_model=schemas.Run)
def read_run(run_id: int, db: Session = Depends(get_db)):
    return crud.get_run(db, run_id)


@router.delete("/runs/{run_id}")
def delete_run(run_id: int, db: Session = Depends(get_db)):
    crud.delete_run(db, run_id)
    return {"detail": "Run deleted"}
