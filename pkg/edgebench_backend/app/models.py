from datetime import datetime

from sqlalchemy import Column, DateTime, Float, Integer, String

from .database import Base


class RunRecord(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    created = Column(DateTime, default=datetime.utcnow)
    scenario_id = Column(String, index=True)
    policy = Column(String, index=True)
    V = Column(Float, nullable=True)
    lambda_multiplier = Column(Float)
    seed = Column(Integer)
    arrivals = Column(Integer)
    completions = Column(Integer)
    drops_deadline = Column(Integer)
    drops_overflow = Column(Integer)
    throughput = Column(Float)
    completion_ratio = Column(Float)
    mean_latency_slots = Column(Float, nullable=True)
    p95_latency_slots = Column(Float, nullable=True)
    energy_J_total = Column(Float)
    energy_J_per_completion = Column(Float)
    mean_Q = Column(Float)
    mean_K = Column(Float)
    load_imbalance = Column(Float)
    structure_hash = Column(String, index=True)


class SolveRecord(Base):
    __tablename__ = "solves"

    id = Column(Integer, primary_key=True, index=True)
    created = Column(DateTime, default=datetime.utcnow)
    spec_hash = Column(String, index=True)
    config_hash = Column(String)
    states = Column(Integer)
    actions = Column(Integer)
    iterations = Column(Integer)
    residual = Column(Float)
    value_at_empty = Column(Float)
