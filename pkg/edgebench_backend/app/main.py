from fastapi import FastAPI

from . import models  # noqa: F401  registers the tables
from .database import init_db
from .routers import mdp, presets, runs, sweeps

init_db()

app = FastAPI(title="Edgebench API")

app.include_router(runs.router)
app.include_router(sweeps.router)
app.include_router(presets.router)
app.include_router(mdp.router)
