import textwrap

import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=100, deadline=None)
settings.load_profile("default")


def yaml_docs(*docs: str) -> str:
    return "---\n".join(textwrap.dedent(d).lstrip("\n") for d in docs)


PARKING = """
apiVersion: twinsim/v1
kind: TwinInterface
metadata:
  name: ngsi-ld-city-offstreetparking
spec:
  properties:
  - name: totalSpotNumber
    schema: integer
  commands:
  - name: updatevehiclecount
    schema:
      spot: string
      status: string
  service:
    handler: offstreet-parking
    cpu: 100m
    memory: 64Mi
"""

SPOT = """
apiVersion: twinsim/v1
kind: TwinInterface
metadata:
  name: ngsi-ld-city-parkingspot
spec:
  properties:
  - name: status
    schema:
      enum: [free, occupied, closed]
  relationships:
  - name: refParentParking
    target: ngsi-ld-city-offstreetparking
    multiplicity: one
  service:
    handler: parking-spot
  routing:
    persistStoreEvents: false
"""


@pytest.fixture
def parking_text():
    return yaml_docs(PARKING, SPOT)


# -- acceptance verdicts ---------------------------------------------------

_VERDICTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, name = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed:
        detail = detail or rep.longreprtext.strip().splitlines()[-1]
        _VERDICTS[number] = ("FAIL", name, detail)
    elif rep.when == "call":
        _VERDICTS[number] = ("PASS", name, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        status, name, detail = _VERDICTS[number]
        terminalreporter.write_line(f"[{status}] criterion {number:2d} {name}: {detail}")
