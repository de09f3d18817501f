# tests/conftest.py
import numpy as np
import pytest

from src import worldsim
from src.pddl import load_domain, parse_problem
from src.settings import settings

CANONICAL_SCENES = ("insert_book", "lift_bucket", "place_box", "take_jacket", "take_pillbox")


@pytest.fixture(scope="session")
def domain():
    return load_domain()


@pytest.fixture(scope="session")
def place_box_problem(domain):
    text = (settings.data_path / "problems" / "place_box.pddl").read_text(encoding="utf-8")
    return parse_problem(text, domain)


@pytest.fixture
def place_box_spec():
    return worldsim.read_scene("place_box")


@pytest.fixture
def place_box_world(place_box_spec):
    return worldsim.load_scene(place_box_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
