from fastapi import APIRouter, Depends
from sqlalchemy.orm import Session

from .. import crud, experiments, schemas
from ..database import get_db
from ..dependencies import domain_errors
from ..metrics import compare_runs
from ..scenario import validate_config

router = APIRouter()


@router.post("/sweeps/", response_model=schemas.SweepResult)
def create_sweep(request: schemas.SweepRequest, db: Session = Depends(get_db)):
    with domain_errors():
        base = validate_config(request.scenario)
        results = experiments.run_sweep(
            base, request.lambda_multipliers, request.policies, request.seeds, threads=1
        )
        summaries = experiments.summaries_of(results)
        comparison = compare_runs(summaries)
    for summary in summaries:
        crud.create_run(db, summary)
    errors = [
        f"{r.cell.policy.id.value} lambda={r.cell.lambda_multiplier} seed={r.cell.seed}: {r.error}"
        for r in results
        if r.error
    ]
    return schemas.SweepResult(rows=summaries, errors=errors, comparison=comparison)
