from fastapi import APIRouter, Depends
from sqlalchemy.orm import Session

from .. import crud, mdp, schemas
from ..database import get_db
from ..dependencies import domain_errors

router = APIRouter()


@router.post("/mdp/solve", response_model=schemas.Solve)
def solve_mdp(spec: schemas.MdpSpec, db: Session = Depends(get_db)):
    with domain_errors():
        solved, _ = mdp.solve(spec)
    result = schemas.SolveResult(**mdp.solve_result_fields(solved))
    return crud.create_solve(db, result)


@router.get("/mdp/solves", response_model=list[schemas.Solve])
def read_solves(db: Session = Depends(get_db)):
    return crud.get_solves(db)
