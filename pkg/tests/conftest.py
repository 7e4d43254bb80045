import pytest

from edgesight.ontology import OntologyPath
from edgesight.simulator import build_demo_site
from edgesight.store import TelemetryStore
from edgesight.telemetry import Quality, TelemetrySample


@pytest.fixture(scope="session")
def demo_site():
    return build_demo_site()


@pytest.fixture
def demo_store(demo_site):
    return TelemetryStore(demo_site, capacity=1000)


def make_sample(path, ts, value, unit, quality=Quality.GOOD):
    if isinstance(path, str):
        path = OntologyPath.parse(path)
    return TelemetrySample(path=path, timestamp=ts, value=value, unit=unit, quality=quality)
