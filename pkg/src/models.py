# src/models.py
# -*- coding: utf-8 -*-
from typing import Mapping, Optional

from sqlalchemy import Column, DateTime, Float, ForeignKey, Index, Integer, String, Text, UniqueConstraint
from sqlalchemy.orm import Session, declarative_base, relationship
from sqlalchemy.sql import func

Base = declarative_base()


class BenchmarkRun(Base):
    __tablename__ = "benchmark_runs"
    id = Column(Integer, primary_key=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now(), nullable=False)
    seeds = Column(Integer, nullable=False)
    first_seed = Column(Integer, nullable=False, default=0)
    k_candidates = Column(Integer, nullable=False)
    horizon = Column(Integer, nullable=False)
    epsilon = Column(Float, nullable=False)
    p_fail = Column(Float, nullable=True, comment="NULL: вероятности из файлов сцен")
    note = Column(Text, nullable=True)
    results = relationship("TaskResult", back_populates="run", cascade="all, delete-orphan", lazy="selectin")

    def __str__(self):
        return f"run #{self.id}: {self.seeds} seeds, K={self.k_candidates}, H={self.horizon}"


class TaskResult(Base):
    """Агрегат по (прогон, конфигурация, задача)."""
    __tablename__ = "task_results"
    id = Column(Integer, primary_key=True)
    run_id = Column(Integer, ForeignKey("benchmark_runs.id", ondelete="CASCADE"), nullable=False)
    config = Column(String(32), nullable=False)
    task = Column(String(64), nullable=False)
    episodes = Column(Integer, nullable=False)
    success_rate = Column(Float, nullable=False)
    mean_steps = Column(Float, nullable=False)
    planning_failures = Column(Integer, nullable=False, default=0)
    promptable_failures = Column(Integer, nullable=False, default=0)
    grounding_failures = Column(Integer, nullable=False, default=0)
    mean_navigation_s = Column(Float, nullable=False, default=0.0)
    mean_manipulation_s = Column(Float, nullable=False, default=0.0)
    mean_planning_s = Column(Float, nullable=False, default=0.0)
    gate_violations = Column(Integer, nullable=False, default=0)
    stop_agreement = Column(Float, nullable=True)
    run = relationship("BenchmarkRun", back_populates="results")
    __table_args__ = (
        UniqueConstraint("run_id", "config", "task", name="_run_config_task_uc"),
        Index("ix_task_results_task_config", "task", "config"),
    )

    def __str__(self):
        return f"{self.task}/{self.config}: {self.success_rate:.2f}"


def store_benchmark(session: Session, metrics: Mapping, seeds: int, base=None, note: Optional[str] = None) -> int:
    """
    Сохранить метрики run_benchmark ({config: {task: TaskMetrics}}) одним прогоном.
    base - PlannerConfig, с которым запускали (K, H, eps, p_fail, seed).
    Возвращает id прогона.
    """
    run = BenchmarkRun(
        seeds=seeds,
        first_seed=getattr(base, "seed", 0),
        k_candidates=getattr(base, "k_candidates", 4),
        horizon=getattr(base, "horizon", 20),
        epsilon=getattr(base, "epsilon", 0.0),
        p_fail=getattr(base, "p_fail", None),
        note=note,
    )
    for per_task in metrics.values():
        for tm in per_task.values():
            row = tm.to_dict()
            durations = row["mean_durations"]
            run.results.append(TaskResult(
                config=row["config"],
                task=row["task"],
                episodes=row["episodes"],
                success_rate=row["success_rate"],
                mean_steps=row["mean_steps"],
                planning_failures=row["failures"].get("planning", 0),
                promptable_failures=row["failures"].get("promptable", 0),
                grounding_failures=row["failures"].get("grounding", 0),
                mean_navigation_s=durations.get("navigation", 0.0),
                mean_manipulation_s=durations.get("manipulation", 0.0),
                mean_planning_s=durations.get("planning", 0.0),
                gate_violations=row["gate_violations"],
                stop_agreement=row["stop_agreement"],
            ))
    session.add(run)
    session.commit()
    return run.id
