# src/database.py
# -*- coding: utf-8 -*-
from __future__ import annotations

import logging
import time
from pathlib import Path

from sqlalchemy import create_engine, event
from sqlalchemy.engine import make_url
from sqlalchemy.orm import sessionmaker

from src.settings import settings  # читаем значения из .env

# ---------- URL результатов бенчмарков ----------
sqlalchemy_url = make_url(settings.DB_URL)
_is_sqlite = sqlalchemy_url.get_backend_name() == "sqlite"

# SQLite: сессии открываются из потоков бенчмарка
connect_args: dict = {"check_same_thread": False} if _is_sqlite else {}

# ---------- Создание engine ----------
engine = create_engine(
    sqlalchemy_url,
    pool_pre_ping=not _is_sqlite,           # чинит «мертвые» коннекты
    echo=settings.LOG_SQL,                  # подробный SQL (для отладки)
    connect_args=connect_args,
    future=True,
)

# ---------- Диагностика: лог «медленных» SQL ----------
SLOW_MS = 300  # порог, всё медленнее пишем в лог "sql.slow"


@event.listens_for(engine, "before_cursor_execute")
def _before_cursor_execute(conn, cursor, statement, parameters, context, executemany):
    context._query_start_time = time.perf_counter()


@event.listens_for(engine, "after_cursor_execute")
def _after_cursor_execute(conn, cursor, statement, parameters, context, executemany):
    start = getattr(context, "_query_start_time", None)
    if start is None:
        return
    total_ms = (time.perf_counter() - start) * 1000.0
    if total_ms >= SLOW_MS:
        stmt_flat = " ".join(str(statement).split())
        logging.getLogger("sql.slow").warning("SQL %.1f ms | %s", total_ms, stmt_flat)


# ---------- Фабрика сессий ----------
SessionLocal = sessionmaker(
    autocommit=False,
    autoflush=False,
    expire_on_commit=False,
    bind=engine,
)


def init_db() -> None:
    """
    Создать каталог файла SQLite и таблицы, если их ещё нет.
    Для боевой БД схема ведётся миграциями alembic.
    """
    from src.models import Base

    if _is_sqlite and sqlalchemy_url.database and sqlalchemy_url.database != ":memory:":
        Path(sqlalchemy_url.database).parent.mkdir(parents=True, exist_ok=True)
    Base.metadata.create_all(engine)
