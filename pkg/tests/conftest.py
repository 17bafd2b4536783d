import pathlib

import pytest

from intentrefine import capability, factbase, refiner, topology

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


def read_fixture(*parts: str) -> str:
    return (FIXTURES / pathlib.Path(*parts)).read_text()


@pytest.fixture(scope="session")
def catalog():
    return capability.load_catalog(read_fixture("catalog.json"))


@pytest.fixture()
def scenario1_topology():
    return topology.parse_topology(read_fixture("scenario1", "topology.yaml"))


@pytest.fixture()
def scenario1_knowledge():
    return factbase.parse_knowledge(read_fixture("scenario1", "knowledge.json"))


@pytest.fixture()
def scenario1_intent():
    return refiner.parse_hspl(read_fixture("scenario1", "hspl.xml"))[0]


@pytest.fixture()
def scenario2_topology():
    return topology.parse_topology(read_fixture("scenario2", "topology.yaml"))


@pytest.fixture()
def scenario2_knowledge():
    return factbase.parse_knowledge(read_fixture("scenario2", "knowledge.json"))


@pytest.fixture()
def scenario2_intent():
    return refiner.parse_hspl(read_fixture("scenario2", "hspl.xml"))[0]
