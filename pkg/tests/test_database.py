# tests/test_database.py
import pytest
from sqlalchemy import create_engine, select
from sqlalchemy.exc import IntegrityError
from sqlalchemy.orm import sessionmaker

from src.models import Base, BenchmarkRun, TaskResult, store_benchmark
from src.planner import PlannerConfig, TaskMetrics


@pytest.fixture
def session():
    engine = create_engine("sqlite://", future=True)
    Base.metadata.create_all(engine)
    Session = sessionmaker(bind=engine, expire_on_commit=False)
    with Session() as s:
        yield s
    engine.dispose()


def _metrics():
    full = TaskMetrics("place_box", "full", episodes=4, successes=3, total_steps=24,
                       failures={"planning": 0, "promptable": 1, "grounding": 0},
                       durations={"navigation": 20.0, "manipulation": 8.0, "planning": 0.4},
                       stop_confirmed=3, goal_terminations=3)
    ablated = TaskMetrics("place_box", "feasibility", episodes=4, successes=1, total_steps=40,
                          failures={"planning": 2, "promptable": 0, "grounding": 1}, gate_violations=0)
    return {"full": {"place_box": full}, "feasibility": {"place_box": ablated}}


def test_store_benchmark_round_trip(session):
    base = PlannerConfig(k_candidates=3, horizon=15, epsilon=0.1, p_fail=None, seed=100)
    run_id = store_benchmark(session, _metrics(), seeds=4, base=base, note="smoke")

    run = session.get(BenchmarkRun, run_id)
    assert (run.seeds, run.first_seed, run.k_candidates, run.horizon) == (4, 100, 3, 15)
    assert run.p_fail is None
    assert run.note == "smoke"
    assert run.created_at is not None

    rows = {r.config: r for r in session.scalars(select(TaskResult).where(TaskResult.run_id == run_id))}
    assert set(rows) == {"full", "feasibility"}
    full = rows["full"]
    assert full.success_rate == 0.75
    assert full.mean_steps == 6.0
    assert full.promptable_failures == 1
    assert full.mean_navigation_s == 5.0
    assert full.stop_agreement == 1.0
    assert rows["feasibility"].planning_failures == 2
    assert rows["feasibility"].stop_agreement is None


def test_runs_are_independent(session):
    a = store_benchmark(session, _metrics(), seeds=4)
    b = store_benchmark(session, _metrics(), seeds=4)
    assert a != b
    assert len(session.scalars(select(TaskResult)).all()) == 4


def test_duplicate_task_config_in_a_run_rejected(session):
    run = BenchmarkRun(seeds=1, k_candidates=4, horizon=20, epsilon=0.0)
    for _ in range(2):
        run.results.append(TaskResult(config="full", task="place_box", episodes=1, success_rate=1.0, mean_steps=5.0))
    session.add(run)
    with pytest.raises(IntegrityError):
        session.commit()
