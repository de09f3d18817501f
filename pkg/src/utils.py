# src/utils.py
# -*- coding: utf-8 -*-
import re
from typing import Iterable, List

_WS_RE = re.compile(r"\s+")
_IDENT_BAD_RE = re.compile(r"[^a-z0-9_\-]+")


def normalize_label(text: str) -> str:
    """
    Текстовая метка для эмбеддинга: нижний регистр, "_" как пробел,
    схлопнутые пробелы. "Blue_Jacket " -> "blue jacket".
    """
    if not text:
        return ""
    s = str(text).replace("_", " ").lower()
    return _WS_RE.sub(" ", s).strip()


def normalize_name(text: str) -> str:
    """
    Идентификатор объекта для PDDL: многословные имена склеиваются через "_".
    Сначала нормализуем как метку, затем fallback: выкидываем всё лишнее.
    "Black Table." -> "black_table"
    """
    label = normalize_label(text)
    if not label:
        return ""
    ident = label.replace(" ", "_")
    return _IDENT_BAD_RE.sub("", ident).strip("_")


def strip_code_fence(text: str) -> str:
    """Снять обёртку ```json ... ``` если модель её всё-таки вернула."""
    s = (text or "").strip()
    if s.startswith("```"):
        lines = s.splitlines()
        if len(lines) >= 3:
            s = "\n".join(lines[1:-1]).strip()
        else:
            s = s.strip("`").strip()
    return s


def dedupe(items: Iterable) -> List:
    """Убрать дубли, сохранив порядок первого появления."""
    seen = set()
    out = []
    for x in items:
        if x in seen:
            continue
        seen.add(x)
        out.append(x)
    return out
