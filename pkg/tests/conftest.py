import pytest

from scanmap import find_attack_points, synthesize_scan
from shared.models import (
    POLARIZATIONS, AttackPoint, ChannelEffVector, EveDetectorModel, LinkModel,
    OptimizerConfig, ReceiverModel, SearchThresholds,
)


def make_points(own=1.0, conj=0.0, other=0.0):
    """Точки атаки, одинаковые с точностью до перестановки каналов."""
    points = []
    for pol in POLARIZATIONS:
        values = [other] * 4
        values[pol.index] = own
        values[pol.index ^ 1] = conj
        delta = own / other if other > 0 else float("inf")
        points.append(AttackPoint(pol, 0.0, 0.0, ChannelEffVector.from_sequence(values), delta))
    return tuple(points)


@pytest.fixture
def receiver():
    return ReceiverModel()


@pytest.fixture
def eve():
    return EveDetectorModel()


@pytest.fixture
def link_3db():
    return LinkModel(3.0)


@pytest.fixture
def optimizer_config():
    return OptimizerConfig(restarts=3, max_iterations=2000)


@pytest.fixture(scope="session")
def paper_map():
    return synthesize_scan("paper-like", 1)


@pytest.fixture(scope="session")
def paper_search(paper_map):
    return find_attack_points(paper_map, SearchThresholds.paper())
