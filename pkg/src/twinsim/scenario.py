"""Smart City definitions, scenario configuration and device workload.

The city is built per neighborhood: 50 smart poles, each carrying a
streetlight and five observation sensors, one EV charging station, one
off-street parking with 20 spots, and 220 battery-powered devices (one per
air-quality, noise, weather and traffic sensor and one per parking spot).
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Mapping

import yaml

from .definitions import (
    AutoscalePolicy,
    CommandDef,
    Property,
    RelationshipDef,
    RelationshipRef,
    RoutingSettings,
    Schema,
    ServiceSettings,
    TwinGraph,
    TwinInstance,
    TwinInterface,
    resolve_graph,
)
from .routing import CLOUDEVENT_DISPATCHER, EVENT_STORE_DISPATCHER, MQTT_DISPATCHER


class ConfigError(ValueError):
    pass


NEIGHBORHOOD = "s4city-city-neighborhood"
POLE = "city-pole"
STREETLIGHT = "ngsi-ld-city-streetlight"
AIR_QUALITY = "ngsi-ld-city-airqualityobserved"
CROWD_FLOW = "ngsi-ld-city-crowdflowobserved"
TRAFFIC_FLOW = "ngsi-ld-city-trafficflowobserved"
NOISE_LEVEL = "ngsi-ld-city-noiselevelobserved"
WEATHER = "ngsi-ld-city-weatherobserved"
EV_STATION = "ngsi-ld-city-evchargingstation"
PARKING = "ngsi-ld-city-offstreetparking"
PARKING_SPOT = "ngsi-ld-city-parkingspot"
DEVICE = "ngsi-ld-city-device"
OBSERVATION = "ngsi-ld-city-observation"

ENTITY_TYPES = (
    NEIGHBORHOOD, POLE, STREETLIGHT, AIR_QUALITY, CROWD_FLOW, TRAFFIC_FLOW,
    NOISE_LEVEL, WEATHER, EV_STATION, PARKING, PARKING_SPOT, DEVICE,
)

POLES_PER_NEIGHBORHOOD = 50
SPOTS_PER_PARKING = 20

# Interfaces that carry a battery device, and how many per neighborhood.
DEVICE_OWNERS = (
    (AIR_QUALITY, "refAirQuality"),
    (NOISE_LEVEL, "refNoiseLevel"),
    (WEATHER, "refWeather"),
    (TRAFFIC_FLOW, "refTrafficFlow"),
    (PARKING_SPOT, "refParkingSpot"),
)

_SHORT = {
    STREETLIGHT: "streetlight", AIR_QUALITY: "airquality", CROWD_FLOW: "crowdflow",
    TRAFFIC_FLOW: "trafficflow", NOISE_LEVEL: "noise", WEATHER: "weather",
}


def _p(name: str, kind: str = "float", *values: str) -> Property:
    return Property(name, Schema("enum", values) if values else Schema(kind))


def _service(handler: str) -> ServiceSettings:
    return ServiceSettings(handler=handler, cpu=0.1, memory=64 * 1024**2, autoscale=AutoscalePolicy(5, 0, 18))


def smart_city_interfaces() -> list[TwinInterface]:
    """The default 12 entity types plus an abstract observation parent."""
    ref_pole = RelationshipDef("refPole", POLE, "one", "pole the sensor is mounted on")
    aqi_cmd = CommandDef("updateairqualityindex", {"aqi": "integer"}, "report an air quality index")
    no_store = RoutingSettings(persist_real_directly=False, persist_store_events=False)
    direct = RoutingSettings(persist_real_directly=True, persist_store_events=False)
    return [
        TwinInterface(NEIGHBORHOOD, (_p("name", "string"), _p("district", "string")), commands=(aqi_cmd,),
                      service=_service("neighborhood"), description="city neighborhood"),
        TwinInterface(POLE, (_p("address", "string"), _p("height")),
                      (RelationshipDef("refNeighborhood", NEIGHBORHOOD, "one"),), (aqi_cmd,),
                      service=_service("smart-pole"), routing=no_store, description="smart pole"),
        TwinInterface(OBSERVATION, (_p("dateObserved"),), (ref_pole,), description="abstract pole-mounted sensor"),
        TwinInterface(STREETLIGHT, (_p("powerState", "string", "on", "off"),), (ref_pole,), service=_service("passthrough")),
        TwinInterface(AIR_QUALITY, (_p("co2"), _p("co"), _p("so2"), _p("aqi", "integer")),
                      parent=OBSERVATION, service=_service("air-quality")),
        TwinInterface(CROWD_FLOW, (_p("peopleCount", "integer"), _p("occupancy"), _p("congested", "boolean")),
                      parent=OBSERVATION, service=_service("passthrough")),
        TwinInterface(TRAFFIC_FLOW, (_p("intensity", "integer"), _p("averageVehicleSpeed"), _p("congested", "boolean")),
                      parent=OBSERVATION, service=_service("passthrough")),
        TwinInterface(NOISE_LEVEL, (_p("LAeq"), _p("LAmax")), parent=OBSERVATION, routing=direct),
        TwinInterface(WEATHER, tuple(_p(n) for n in (
            "temperature", "humidity", "pressure", "precipitation", "snowHeight", "windDirection", "windSpeed",
        )), parent=OBSERVATION, service=_service("weather")),
        TwinInterface(EV_STATION, (_p("capacity", "integer"), _p("availableCapacity", "integer"),
                                   _p("status", "string", "working", "outOfService")),
                      (ref_pole,), routing=direct),
        TwinInterface(PARKING, (_p("totalSpotNumber", "integer"), _p("availableSpotNumber", "integer")),
                      (RelationshipDef("refNeighborhood", NEIGHBORHOOD, "one"),),
                      (CommandDef("updatevehiclecount", {"spot": "string", "status": "string"}),),
                      service=_service("offstreet-parking")),
        TwinInterface(PARKING_SPOT, (_p("status", "string", "free", "occupied", "closed"),),
                      (RelationshipDef("refParentParking", PARKING, "one"),),
                      service=_service("parking-spot"), routing=no_store),
        TwinInterface(DEVICE, (_p("batteryLevel"), _p("deviceState", "string", "ok", "lowPower")),
                      tuple(RelationshipDef(rel, owner, "one") for owner, rel in DEVICE_OWNERS),
                      service=_service("device")),
    ]


def _ref(name: str, interface: str, target: str) -> tuple[RelationshipRef, ...]:
    return (RelationshipRef(name, interface, (target,)),)


def build_city(n: int, interfaces: list[TwinInterface] | None = None) -> tuple[list[TwinInterface], list[TwinInstance]]:
    if not isinstance(n, int) or n < 1:
        raise ConfigError("the city needs at least one neighborhood")
    interfaces = list(interfaces) if interfaces is not None else smart_city_interfaces()
    out: list[TwinInstance] = []
    for nb in range(1, n + 1):
        tag = f"{nb:02d}"
        hood = f"neighborhood-{tag}"
        out.append(TwinInstance(hood, NEIGHBORHOOD, {"name": hood, "district": f"district-{(nb - 1) // 5 + 1}"}))
        owned: list[tuple[str, str]] = []
        first_pole = None
        for i in range(1, POLES_PER_NEIGHBORHOOD + 1):
            pole = f"pole-{tag}-{i:03d}"
            first_pole = first_pole or pole
            out.append(TwinInstance(pole, POLE, {"address": f"street {i}", "height": 9.5},
                                    _ref("refNeighborhood", NEIGHBORHOOD, hood)))
            for iface, short in _SHORT.items():
                name = f"{short}-{tag}-{i:03d}"
                out.append(TwinInstance(name, iface, {}, _ref("refPole", POLE, pole)))
                if any(iface == owner for owner, _ in DEVICE_OWNERS):
                    owned.append((iface, name))
        out.append(TwinInstance(f"evstation-{tag}", EV_STATION, {"capacity": 8}, _ref("refPole", POLE, first_pole)))
        parking = f"parking-{tag}"
        out.append(TwinInstance(parking, PARKING, {"totalSpotNumber": SPOTS_PER_PARKING},
                                _ref("refNeighborhood", NEIGHBORHOOD, hood)))
        for j in range(1, SPOTS_PER_PARKING + 1):
            spot = f"spot-{tag}-{j:02d}"
            out.append(TwinInstance(spot, PARKING_SPOT, {}, _ref("refParentParking", PARKING, parking)))
            owned.append((PARKING_SPOT, spot))
        rel_of = dict(DEVICE_OWNERS)
        for k, (iface, owner) in enumerate(owned, start=1):
            out.append(TwinInstance(f"device-{tag}-{k:03d}", DEVICE, {}, _ref(rel_of[iface], iface, owner)))
    return interfaces, out


@lru_cache(maxsize=8)
def city_graph(n: int) -> TwinGraph:
    return resolve_graph(*build_city(n))


# -- configuration --------------------------------------------------------


@dataclass(frozen=True)
class IntervalSpec:
    """Per-window publish interval: a number (jittered) or a ``(lo, hi)`` range."""

    windows: tuple[tuple[float, float], ...]

    @classmethod
    def parse(cls, value: Any, nwindows: int, where: str) -> "IntervalSpec":
        if isinstance(value, Mapping):
            extra = set(value) - {"windows"}
            if extra or "windows" not in value:
                raise ConfigError(f"{where}: expected a 'windows' list")
            items = list(value["windows"])
            if len(items) != nwindows:
                raise ConfigError(f"{where}: need {nwindows} window entries, got {len(items)}")
            return cls(tuple(_window_range(v, where) for v in items))
        if isinstance(value, (list, tuple)):
            lo, hi = _pair(value, where)
            return cls(tuple(_third(lo, hi, w, nwindows) for w in range(nwindows)))
        lo, hi = _window_range(value, where)
        return cls(tuple((lo, hi) for _ in range(nwindows)))

    def bounds(self, window: int) -> tuple[float, float]:
        return self.windows[min(window, len(self.windows) - 1)]

    def mean(self) -> float:
        return sum((lo + hi) / 2 for lo, hi in self.windows) / len(self.windows)


def _pair(value: Any, where: str) -> tuple[float, float]:
    if len(value) != 2:
        raise ConfigError(f"{where}: a range needs exactly two bounds")
    lo, hi = float(value[0]), float(value[1])
    if not 0 < lo <= hi:
        raise ConfigError(f"{where}: invalid interval range {value!r}")
    return lo, hi


def _window_range(value: Any, where: str) -> tuple[float, float]:
    if isinstance(value, (list, tuple)):
        return _pair(value, where)
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: interval must be a number or a range") from None
    if v <= 0:
        raise ConfigError(f"{where}: intervals must be positive")
    return 0.9 * v, 1.1 * v


# Windows 0 and 5 are night (slow end of a range), 2 and 4 the peaks (fast
# end); 1 and 3 sit in between. Other window counts cycle the same pattern.
_THIRD_OF_WINDOW = (2, 1, 0, 1, 0, 2)


def _third(lo: float, hi: float, window: int, nwindows: int) -> tuple[float, float]:
    third = _THIRD_OF_WINDOW[window % 6]
    step = (hi - lo) / 3
    return lo + third * step, lo + (third + 1) * step


DEFAULT_SCHEDULE: dict[str, Any] = {
    AIR_QUALITY: 10,
    NOISE_LEVEL: 10,
    WEATHER: 10,
    CROWD_FLOW: [5, 30],
    TRAFFIC_FLOW: [5, 10],
    STREETLIGHT: 720,
    EV_STATION: [10, 80],
    PARKING_SPOT: [5, 80],
    DEVICE: 460,
}


@dataclass(frozen=True)
class ServiceTime:
    median: float
    sigma: float

    def __post_init__(self):
        if self.median <= 0 or self.sigma < 0:
            raise ConfigError("service time needs median > 0 and sigma >= 0")


STORE_SERVICE = "event-store"

DEFAULT_DISPATCHER_RATES = {MQTT_DISPATCHER: 1800.0, CLOUDEVENT_DISPATCHER: 350.0, EVENT_STORE_DISPATCHER: 350.0}


@dataclass(frozen=True)
class ScenarioConfig:
    neighborhoods: int = 1
    duration: float = 1440.0
    windows: int = 6
    compression: float = 60.0
    seed: int = 1
    mode: str = "auto"
    fixed_per_service: int = 14
    fixed_store: int = 20
    # None keeps each interface's own autoscale settings.
    target: int | None = None
    min_replicas: int | None = None
    max_replicas: int | None = None
    store_target: int = 5
    store_min_replicas: int = 1
    store_max_replicas: int = 25
    container_concurrency: int = 10
    store_container_concurrency: int = 20
    stable_window: float = 60.0
    tick: float = 2.0
    idle_window: float = 30.0
    cold_start: tuple[float, float] = (1.0, 2.0)
    dispatcher_rates: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_DISPATCHER_RATES))
    service_time: ServiceTime = ServiceTime(0.005, 0.5)
    store_service_time: ServiceTime = ServiceTime(1.5, 0.5)
    handler_service_times: Mapping[str, ServiceTime] = field(default_factory=dict)
    schedule: Mapping[str, Any] = field(default_factory=lambda: dict(DEFAULT_SCHEDULE))
    startup_burst: bool = True
    device_subscriptions: bool = True
    battery_threshold: float = 20.0
    drain_limit: float = 3600.0
    tail: float = 0.0

    def __post_init__(self):
        if not isinstance(self.neighborhoods, int) or self.neighborhoods < 1:
            raise ConfigError("neighborhoods must be a positive integer")
        if self.duration < 0:
            raise ConfigError("duration must be non-negative")
        if self.windows < 1:
            raise ConfigError("at least one window is required")
        if self.mode not in ("auto", "fixed"):
            raise ConfigError(f"unknown provisioning mode {self.mode!r}")
        if self.mode == "fixed" and (self.fixed_per_service < 1 or self.fixed_store < 1):
            raise ConfigError("fixed provisioning needs at least one replica per service")
        lo, hi = self.cold_start
        if not 0 <= lo <= hi:
            raise ConfigError("cold start bounds must satisfy 0 <= lo <= hi")
        if self.tick <= 0 or self.stable_window <= 0 or self.idle_window < 0:
            raise ConfigError("scaler periods must be positive")
        if self.container_concurrency < 1 or self.store_container_concurrency < 1:
            raise ConfigError("container concurrency must be >= 1")
        for name, rate in self.dispatcher_rates.items():
            if name not in DEFAULT_DISPATCHER_RATES or rate <= 0:
                raise ConfigError(f"invalid dispatcher rate for {name!r}")
        # Validate the schedule eagerly so errors surface before t=0.
        self.interval_specs()
        self.policy_for(AutoscalePolicy())
        AutoscalePolicy(self.store_target, self.store_min_replicas, self.store_max_replicas)

    def policy_for(self, base: AutoscalePolicy) -> AutoscalePolicy:
        """Effective policy of a twin service given its declared one."""
        if self.mode == "fixed":
            return AutoscalePolicy(base.target, self.fixed_per_service, self.fixed_per_service)
        try:
            return AutoscalePolicy(
                self.target if self.target is not None else base.target,
                self.min_replicas if self.min_replicas is not None else base.min_replicas,
                self.max_replicas if self.max_replicas is not None else base.max_replicas,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def store_policy(self) -> AutoscalePolicy:
        if self.mode == "fixed":
            return AutoscalePolicy(self.store_target, self.fixed_store, self.fixed_store)
        return AutoscalePolicy(self.store_target, self.store_min_replicas, self.store_max_replicas)

    @property
    def window_length(self) -> float:
        return self.duration / self.windows

    def interval_specs(self) -> dict[str, IntervalSpec]:
        return {k: IntervalSpec.parse(v, self.windows, f"schedule.{k}") for k, v in self.schedule.items()}

    def replace(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cold_start"] = list(self.cold_start)
        d["dispatcher_rates"] = dict(self.dispatcher_rates)
        d["schedule"] = {k: v for k, v in self.schedule.items()}
        d["handler_service_times"] = {k: asdict(v) for k, v in self.handler_service_times.items()}
        return d


PRESETS = {
    "auto": {"mode": "auto"},
    "under": {"mode": "fixed", "fixed_per_service": 1, "fixed_store": 3},
    "over": {"mode": "fixed", "fixed_per_service": 14, "fixed_store": 20},
}


def _service_time(value: Any, where: str) -> ServiceTime:
    if not isinstance(value, Mapping) or set(value) - {"median", "sigma"}:
        raise ConfigError(f"{where}: expected a mapping with median and sigma")
    try:
        return ServiceTime(float(value.get("median", 0.005)), float(value.get("sigma", 0.5)))
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: median and sigma must be numbers") from None


_SIMPLE = {
    "neighborhoods": int, "duration": float, "windows": int, "compression": float, "seed": int,
    "startup_burst": bool, "device_subscriptions": bool, "battery_threshold": float, "drain_limit": float, "tail": float,
}
_AUTOSCALE = {
    "target": ("target", int), "min_replicas": ("min_replicas", int), "max_replicas": ("max_replicas", int),
    "container_concurrency": ("container_concurrency", int), "stable_window": ("stable_window", float),
    "tick": ("tick", float), "idle_window": ("idle_window", float),
}


def config_from_mapping(data: Mapping[str, Any] | None) -> ScenarioConfig:
    """Build a config from the YAML layout documented in the README."""
    data = dict(data or {})
    kw: dict[str, Any] = {}
    unknown = set(data) - set(_SIMPLE) - {"provisioning", "autoscale", "dispatchers", "service_time", "schedule"}
    if unknown:
        raise ConfigError(f"unknown scenario fields: {', '.join(sorted(unknown))}")
    try:
        for key, cast in _SIMPLE.items():
            if key in data:
                kw[key] = cast(data[key])
        prov = data.get("provisioning") or {}
        if isinstance(prov, str):
            prov = {"preset": prov}
        if set(prov) - {"preset", "mode", "per_service", "store"}:
            raise ConfigError("provisioning accepts preset, mode, per_service, store")
        if "preset" in prov:
            if prov["preset"] not in PRESETS:
                raise ConfigError(f"unknown provisioning preset {prov['preset']!r}")
            kw.update(PRESETS[prov["preset"]])
        if "mode" in prov:
            kw["mode"] = str(prov["mode"])
        if "per_service" in prov:
            kw["fixed_per_service"] = int(prov["per_service"])
        if "store" in prov:
            kw["fixed_store"] = int(prov["store"])
        auto = dict(data.get("autoscale") or {})
        store = dict(auto.pop("store", None) or {})
        if "container_concurrency" in store:
            kw["store_container_concurrency"] = int(store.pop("container_concurrency"))
        if "cold_start" in auto:
            lo, hi = auto.pop("cold_start")
            kw["cold_start"] = (float(lo), float(hi))
        for key, value in auto.items():
            if key not in _AUTOSCALE:
                raise ConfigError(f"unknown autoscale field {key!r}")
            name, cast = _AUTOSCALE[key]
            kw[name] = cast(value)
        if set(store) - {"target", "min_replicas", "max_replicas"}:
            raise ConfigError("autoscale.store accepts target, min_replicas and max_replicas")
        if "target" in store:
            kw["store_target"] = int(store["target"])
        if "min_replicas" in store:
            kw["store_min_replicas"] = int(store["min_replicas"])
        if "max_replicas" in store:
            kw["store_max_replicas"] = int(store["max_replicas"])
        if "dispatchers" in data:
            rates = dict(DEFAULT_DISPATCHER_RATES)
            rates.update({str(k): float(v) for k, v in (data["dispatchers"] or {}).items()})
            kw["dispatcher_rates"] = rates
        st = dict(data.get("service_time") or {})
        if "default" in st:
            kw["service_time"] = _service_time(st.pop("default"), "service_time.default")
        if STORE_SERVICE in st:
            kw["store_service_time"] = _service_time(st.pop(STORE_SERVICE), f"service_time.{STORE_SERVICE}")
        handlers = st.pop("handlers", None) or {}
        if st:
            raise ConfigError(f"unknown service_time fields: {', '.join(sorted(st))}")
        kw["handler_service_times"] = {k: _service_time(v, f"service_time.handlers.{k}") for k, v in handlers.items()}
        if "schedule" in data:
            schedule = dict(DEFAULT_SCHEDULE)
            schedule.update(data["schedule"] or {})
            kw["schedule"] = schedule
        return ScenarioConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is not None and not isinstance(data, Mapping):
        raise ConfigError(f"{path}: scenario file must contain a mapping")
    return config_from_mapping(data)


# -- workload -------------------------------------------------------------


def stream_seed(seed: int, name: str) -> int:
    return int.from_bytes(hashlib.sha256(f"{seed}:{name}".encode()).digest()[:8], "little")


def _aq(rng: random.Random, st: dict, t: float) -> dict:
    base = st.setdefault("base", rng.uniform(0.6, 1.6))
    return {
        "co2": round(rng.lognormvariate(math.log(480 * base), 0.25), 2),
        "co": round(rng.lognormvariate(math.log(2.5 * base), 0.8), 3),
        "so2": round(rng.lognormvariate(math.log(18 * base), 0.9), 2),
        "dateObserved": round(t, 3),
    }


def _noise(rng, st, t):
    laeq = rng.gauss(58, 7)
    return {"LAeq": round(laeq, 1), "LAmax": round(laeq + abs(rng.gauss(8, 4)), 1), "dateObserved": round(t, 3)}


def _weather(rng, st, t):
    p = st.get("pressure", rng.uniform(1000, 1025)) + rng.gauss(0, 0.3)
    st["pressure"] = p
    day = math.sin(2 * math.pi * (t / 1440.0 - 0.3))
    temp = 12 + 9 * day + rng.gauss(0, 1.5)
    rain = max(0.0, rng.gauss(-1, 1.5))
    return {
        "temperature": round(temp, 2), "humidity": round(min(100.0, max(5.0, rng.gauss(65, 15))), 1),
        "pressure": round(p, 2), "precipitation": round(rain, 2), "snowHeight": 0.0 if temp > 0 else round(rain, 2),
        "windDirection": round(rng.uniform(0, 360), 1), "windSpeed": round(abs(rng.gauss(12, 8)), 1),
        "dateObserved": round(t, 3),
    }


def _crowd(rng, st, t):
    n = int(rng.expovariate(1 / 40))
    return {"peopleCount": n, "occupancy": round(min(1.0, n / 150), 3), "congested": n > 120, "dateObserved": round(t, 3)}


def _traffic(rng, st, t):
    n = int(rng.expovariate(1 / 25))
    speed = max(3.0, 50 - n * 0.4 + rng.gauss(0, 5))
    return {"intensity": n, "averageVehicleSpeed": round(speed, 1), "congested": speed < 15, "dateObserved": round(t, 3)}


def _streetlight(rng, st, t):
    hour = (t / 60.0) % 24
    return {"powerState": "on" if hour < 6 or hour >= 19 else "off", "dateObserved": round(t, 3)}


def _ev(rng, st, t):
    cap = 8
    return {"capacity": cap, "availableCapacity": rng.randint(0, cap),
            "status": "outOfService" if rng.random() < 0.02 else "working"}


def _spot(rng, st, t):
    u = rng.random()
    return {"status": "free" if u < 0.5 else "occupied" if u < 0.95 else "closed"}


def _device(rng, st, t):
    level = st.get("battery")
    if level is None:
        level = rng.uniform(5, 100)
    elif level < 8:
        level = rng.uniform(90, 100)  # recharged or swapped
    else:
        level -= rng.uniform(0, 8)
    level = max(0.0, level)
    st["battery"] = level
    return {"batteryLevel": round(level, 2), "deviceState": "ok"}


PAYLOADS: dict[str, Callable[[random.Random, dict, float], dict]] = {
    AIR_QUALITY: _aq, NOISE_LEVEL: _noise, WEATHER: _weather, CROWD_FLOW: _crowd,
    TRAFFIC_FLOW: _traffic, STREETLIGHT: _streetlight, EV_STATION: _ev, PARKING_SPOT: _spot, DEVICE: _device,
}


class DeviceStream:
    """Publish schedule and payload state of one emitting instance."""

    __slots__ = ("interface", "instance", "topic", "rng", "spec", "state", "make", "count")

    def __init__(self, interface: str, instance: str, seed: int, spec: IntervalSpec):
        self.interface = interface
        self.instance = instance
        self.topic = f"ktwin.real.{interface}.{instance}"
        self.rng = random.Random(stream_seed(seed, instance))
        self.spec = spec
        self.state: dict = {}
        self.make = PAYLOADS.get(interface, lambda rng, st, t: {"dateObserved": round(t, 3)})
        self.count = 0

    def first_time(self, burst: bool) -> float:
        if burst:
            return 0.0
        lo, hi = self.spec.bounds(0)
        return self.rng.uniform(0, hi)

    def next_time(self, now: float, window_length: float) -> float:
        w = int(now // window_length) if window_length > 0 else 0
        lo, hi = self.spec.bounds(w)
        return now + self.rng.uniform(lo, hi)

    def payload(self, now: float) -> dict:
        self.count += 1
        return self.make(self.rng, self.state, now)


def device_streams(config: ScenarioConfig, graph: TwinGraph) -> list[DeviceStream]:
    specs = config.interval_specs()
    streams = []
    for iface in sorted(specs):
        if iface not in graph.interfaces:
            raise ConfigError(f"schedule names unknown interface {iface!r}")
        for inst in graph.instances_of(iface):
            streams.append(DeviceStream(iface, inst, config.seed, specs[iface]))
    return streams


def generate_workload(config: ScenarioConfig, graph: TwinGraph):
    """Yield ``(time, interface, instance, payload)`` device publishes in time order."""
    streams = device_streams(config, graph)
    heap = []
    for k, s in enumerate(streams):
        t = s.first_time(config.startup_burst)
        if t < config.duration:
            heap.append((t, k))
    heapq.heapify(heap)
    wl = config.window_length
    while heap:
        t, k = heapq.heappop(heap)
        s = streams[k]
        yield t, s.interface, s.instance, s.payload(t)
        nxt = s.next_time(t, wl)
        if nxt < config.duration:
            heapq.heappush(heap, (nxt, k))
