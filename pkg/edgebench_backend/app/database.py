import os
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, declarative_base

# Results store for runs and MDP solves submitted over HTTP
RESULTS_DATABASE_URL = os.getenv("EDGEBENCH_DATABASE_URL", "sqlite:///./edgebench.db")


def make_engine(url: str):
    # sweeps write from the request thread, sqlite needs the check relaxed
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    return create_engine(url, connect_args=connect_args)


engine = make_engine(RESULTS_DATABASE_URL)
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

Base = declarative_base()


def init_db():
    Base.metadata.create_all(bind=engine)


def get_db():
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
