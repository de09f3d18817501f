# src/settings.py
# -*- coding: utf-8 -*-
from __future__ import annotations

import json
from pathlib import Path
from typing import List

from pydantic_settings import BaseSettings, SettingsConfigDict

ABLATION_NAMES = ("full", "feasibility", "optimal")


class Settings(BaseSettings):
    """
    Централизованные настройки планировщика.
    Источник: переменные окружения и/или .env (см. model_config ниже).
    """

    # --- Логи/отладка ---
    LOG_LEVEL: str = "INFO"
    LOG_STYLE: str = "plain"
    LOG_SQL: bool = False  # Читает src/database.py при создании engine (echo=settings.LOG_SQL)

    # --- База результатов бенчмарков ---
    DB_URL: str = "sqlite:///./runs/results.db"

    # --- Данные: домен, сцены ---
    DATA_DIR: str = str(Path(__file__).resolve().parents[1] / "data")

    # --- Удалённая модель (chat-completions) ---
    LLM_BASE_URL: str = ""
    LLM_MODEL: str = "gpt-4o"
    LLM_AUTH_TOKEN: str = ""      # только из окружения, никогда из флагов
    LLM_TIMEOUT: float = 30.0
    LLM_RETRIES: int = 3
    LLM_BACKOFF: float = 0.5      # база экспоненциальной паузы между попытками, сек
    LLM_TEMPERATURE: float = 0.7

    # --- Планировщик ---
    PLANNER_K: int = 4
    PLANNER_HORIZON: int = 20
    PLANNER_EPSILON: float = 0.05
    PLANNER_P_FAIL: float = 0.05
    REACH_SAMPLES: int = 200_000

    # Какие конфигурации гонять в бенчмарке по умолчанию.
    # Примеры:
    #   BENCHMARK_ABLATIONS_RAW=full,feasibility
    #   BENCHMARK_ABLATIONS_RAW=["full","optimal"]
    BENCHMARK_ABLATIONS_RAW: str = "full"

    # --- Производные свойства/утилиты ---
    @property
    def data_path(self) -> Path:
        return Path(self.DATA_DIR)

    @property
    def domain_path(self) -> Path:
        return self.data_path / "domain_room.pddl"

    @property
    def scenes_path(self) -> Path:
        return self.data_path / "scenes"

    def get_ablations(self) -> List[str]:
        """
        Разобрать BENCHMARK_ABLATIONS_RAW в список конфигураций.
        Поддерживает JSON-массив и CSV/«;». Неизвестные имена отбрасываются.
        """
        raw = (self.BENCHMARK_ABLATIONS_RAW or "").strip()
        if not raw:
            return ["full"]
        items: List[str] = []
        if raw.startswith("["):
            try:
                items = [str(x).strip().lower() for x in json.loads(raw)]
            except Exception:
                items = []
        if not items:
            items = [p.strip().lower() for p in raw.replace(";", ",").split(",")]
        out = [x for x in ABLATION_NAMES if x in items]
        return out or ["full"]

    # Pydantic Settings конфигурация: читаем .env и игнорируем лишние переменные
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )


# Единый инстанс настроек
settings = Settings()
