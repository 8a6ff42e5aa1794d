"""Handler SDK and the built-in Smart City twin services.

A handler is a function ``handler(ctx, event) -> None`` that reads the
incoming :class:`TwinEvent`, consults ``ctx`` (subgraph, latest stored
state) and emits events through ``ctx.emit_*``. Routing identity of
every emission comes from the context, so handlers cannot forge sources.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from .definitions import Subgraph, TwinGraph, TwinInterface
from .routing import EventCategory, event_type, split_event_type


class HandlerError(RuntimeError):
    """A handler could not process an event; the event counts as failed."""


# -- SDK ------------------------------------------------------------------


@dataclass(frozen=True)
class Emission:
    category: EventCategory
    interface: str
    instance: str
    payload: Any
    command: str | None = None

    @property
    def type(self) -> str:
        return event_type(self.category, self.interface, self.command)


@dataclass(frozen=True)
class TwinEvent:
    """A decoded event as seen by a handler."""

    category: EventCategory
    interface: str
    instance: str
    command: str | None
    time: float
    data: Any
    raw: Any

    @classmethod
    def from_cloudevent(cls, type_: str, source: str, payload: Any, time: float) -> "TwinEvent":
        """``payload`` is JSON bytes from the wire or an already-decoded value."""
        category, interface, command = _split_type(type_)
        if isinstance(payload, (bytes, bytearray, str)):
            try:
                data = json.loads(payload) if payload else None
            except ValueError as exc:
                raise HandlerError(f"undecodable payload: {exc}") from None
        else:
            data = payload
        return cls(category, interface, source, command, time, data, payload)


_ENCODE = json.JSONEncoder(separators=(",", ":")).encode


def encode_payload(data: Any) -> bytes:
    """Compact JSON; key order follows insertion order, which is deterministic."""
    return _ENCODE(data).encode()


_TYPES: dict[str, tuple[EventCategory, str, str | None]] = {}


def _split_type(type_: str) -> tuple[EventCategory, str, str | None]:
    parts = _TYPES.get(type_)
    if parts is None:
        parts = _TYPES[type_] = split_event_type(type_)
    return parts


class HandlerContext:
    def __init__(
        self,
        graph: TwinGraph,
        interface: str,
        instance: str,
        now: float,
        latest: Callable[[str, str], Any] | None = None,
        params: "HandlerParams | None" = None,
    ):
        self.graph = graph
        self.params = params or PARAMS
        self.interface = interface
        self.instance = instance
        self.now = now
        self._latest = latest
        self.emissions: list[Emission] = []
        self.suppressed = 0

    @property
    def spec(self) -> TwinInterface:
        return self.graph.interfaces[self.interface]

    @property
    def subgraph(self) -> Subgraph:
        return self.graph.subgraph(self.interface)

    def related(self, relationship: str | None = None) -> list[tuple[str, str]]:
        return self.subgraph.targets(self.instance, relationship)

    def latest_state(self, interface: str | None = None, instance: str | None = None) -> Any:
        """Most recent stored payload for a twin (default: this one), decoded."""
        if self._latest is None:
            return None
        event = self._latest(interface or self.interface, instance or self.instance)
        if event is None:
            return None
        return json.loads(event.payload)

    def emit_store(self, data: Any) -> None:
        if not self.spec.routing.persist_store_events:
            self.suppressed += 1
            return
        self.emissions.append(Emission(EventCategory.STORE, self.interface, self.instance, data))

    def emit_virtual(self, data: Any) -> None:
        self.emissions.append(Emission(EventCategory.VIRTUAL, self.interface, self.instance, data))

    def emit_command(self, relationship: str, command: str, data: Any) -> list[str]:
        """Send ``command`` to every twin reached through ``relationship``."""
        targets = self.related(relationship)
        if not targets:
            raise HandlerError(f"{self.instance}: no {relationship!r} relationship to command")
        sent = []
        for target_iface, target in targets:
            spec = self.graph.interfaces[target_iface]
            if spec.command(command) is None:
                raise HandlerError(f"{target_iface!r} does not declare command {command!r}")
            body = dict(data)
            body["emitter"] = self.instance
            self.emissions.append(Emission(EventCategory.COMMAND, target_iface, target, body, command))
            sent.append(target)
        return sent


Handler = Callable[[HandlerContext, TwinEvent], None]

REGISTRY: dict[str, Handler] = {}


def register(name: str) -> Callable[[Handler], Handler]:
    def deco(fn: Handler) -> Handler:
        REGISTRY[name] = fn
        return fn

    return deco


def handle(
    graph: TwinGraph,
    interface: str,
    event: TwinEvent,
    now: float,
    latest: Callable[[str, str], Any] | None = None,
    registry: Mapping[str, Handler] = REGISTRY,
    params: "HandlerParams | None" = None,
) -> list[Emission]:
    """Run the interface's handler; direct-to-store interfaces persist only."""
    spec = graph.interfaces[interface]
    ctx = HandlerContext(graph, interface, event.instance, now, latest, params)
    if spec.service is None or spec.service.handler not in registry:
        if spec.routing.persist_real_directly and event.category is EventCategory.REAL:
            return [Emission(EventCategory.STORE, interface, event.instance, event.raw)]
        raise HandlerError(f"no handler registered for {interface!r}")
    try:
        registry[spec.service.handler](ctx, event)
    except HandlerError:
        raise
    except Exception as exc:  # noqa: BLE001
        raise HandlerError(f"{interface} handler failed: {exc!r}") from exc
    return ctx.emissions


# -- air quality ----------------------------------------------------------

AQI_BANDS = (
    (0, 50, "Good"),
    (51, 100, "Moderate"),
    (101, 150, "Unhealthy for Sensitive Groups"),
    (151, 200, "Unhealthy"),
    (201, 300, "Very Unhealthy"),
    (301, 500, "Hazardous"),
)

# (concentration lo, hi, index lo, hi). CO in ppm (8 h), SO2 in ppb (1 h),
# following the AirNow tables. CO2 (ppm) has no official index; its bands
# are synthetic.
DEFAULT_BREAKPOINTS: dict[str, tuple[tuple[float, float, int, int], ...]] = {
    "co": (
        (0.0, 4.4, 0, 50),
        (4.5, 9.4, 51, 100),
        (9.5, 12.4, 101, 150),
        (12.5, 15.4, 151, 200),
        (15.5, 30.4, 201, 300),
        (30.5, 50.4, 301, 500),
    ),
    "so2": (
        (0.0, 35.0, 0, 50),
        (36.0, 75.0, 51, 100),
        (76.0, 185.0, 101, 150),
        (186.0, 304.0, 151, 200),
        (305.0, 604.0, 201, 300),
        (605.0, 1004.0, 301, 500),
    ),
    "co2": (
        (0.0, 600.0, 0, 50),
        (601.0, 1000.0, 51, 100),
        (1001.0, 1500.0, 101, 150),
        (1501.0, 2000.0, 151, 200),
        (2001.0, 5000.0, 201, 300),
        (5001.0, 40000.0, 301, 500),
    ),
}


@dataclass(frozen=True)
class AqiReading:
    co2: float
    co: float
    so2: float

    def __post_init__(self):
        if min(self.co2, self.co, self.so2) < 0:
            raise ValueError("pollutant densities must be non-negative")


@dataclass(frozen=True)
class AqiResult:
    index: int
    category: str
    sub_indices: Mapping[str, int]
    clamped: bool = False


def aqi_category(index: int) -> str:
    for lo, hi, name in AQI_BANDS:
        if index <= hi:
            return name
    return AQI_BANDS[-1][2]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sub_index(concentration: float, rows: Sequence[tuple[float, float, int, int]]) -> tuple[int, bool]:
    """Piecewise-linear index for one pollutant.

    A concentration falling in the gap between two rows stays at the lower
    row's top index. Above the table the index clamps to 500.
    """
    if concentration > rows[-1][1]:
        return 500, True
    chosen = rows[0]
    for row in rows:
        if concentration >= row[0]:
            chosen = row
        else:
            break
    c_lo, c_hi, i_lo, i_hi = chosen
    value = (i_hi - i_lo) / (c_hi - c_lo) * (concentration - c_lo) + i_lo
    return min(i_hi, _round_half_up(value)), False


def classify_aqi(reading: AqiReading, breakpoints: Mapping[str, Sequence] = DEFAULT_BREAKPOINTS) -> AqiResult:
    subs = {}
    clamped = False
    for pollutant in ("co2", "co", "so2"):
        if pollutant not in breakpoints:
            continue
        idx, flag = sub_index(getattr(reading, pollutant), breakpoints[pollutant])
        subs[pollutant] = idx
        clamped |= flag
    index = max(subs.values())
    return AqiResult(index, aqi_category(index), subs, clamped)


# -- weather --------------------------------------------------------------

MAGNUS_B = 17.62
MAGNUS_C = 243.12


@dataclass(frozen=True)
class WeatherReading:
    temperature: float
    humidity: float
    pressure: float
    precipitation: float = 0.0
    snow_height: float = 0.0
    wind_direction: float = 0.0
    wind_speed: float = 0.0  # km/h

    def __post_init__(self):
        if not 0 <= self.humidity <= 100:
            raise ValueError("humidity must be within [0, 100]")
        if self.pressure <= 0:
            raise ValueError("pressure must be positive")


def dew_point(temperature: float, humidity: float) -> float | None:
    """Magnus approximation; ``None`` when humidity is zero."""
    if humidity <= 0:
        return None
    gamma = math.log(humidity / 100.0) + MAGNUS_B * temperature / (MAGNUS_C + temperature)
    return MAGNUS_C * gamma / (MAGNUS_B - gamma)


def wind_chill(temperature: float, wind_speed: float) -> float:
    v = wind_speed**0.16
    return 13.12 + 0.6215 * temperature - 11.37 * v + 0.3965 * temperature * v


def heat_index(temperature: float, humidity: float) -> float:
    # Rothfusz regression, evaluated in Fahrenheit.
    t = temperature * 9 / 5 + 32
    r = humidity
    hi = (
        -42.379
        + 2.04901523 * t
        + 10.14333127 * r
        - 0.22475541 * t * r
        - 6.83783e-3 * t * t
        - 5.481717e-2 * r * r
        + 1.22874e-3 * t * t * r
        + 8.5282e-4 * t * r * r
        - 1.99e-6 * t * t * r * r
    )
    return (hi - 32) * 5 / 9


def feels_like(temperature: float, humidity: float, wind_speed: float) -> float:
    if temperature < 10 and wind_speed > 4.8:
        return wind_chill(temperature, wind_speed)
    if temperature > 27 and humidity > 40:
        return heat_index(temperature, humidity)
    return temperature


def pressure_tendency(samples: Sequence[tuple[float, float]], hour: float = 60.0, dead_band: float = 0.1) -> str:
    """Sign of the least-squares slope (hPa per ``hour`` seconds)."""
    if len(samples) < 2:
        return "steady"
    n = len(samples)
    mt = sum(t for t, _ in samples) / n
    mp = sum(p for _, p in samples) / n
    sxx = sum((t - mt) ** 2 for t, _ in samples)
    if sxx == 0:
        return "steady"
    slope = sum((t - mt) * (p - mp) for t, p in samples) / sxx * hour
    if slope > dead_band:
        return "rising"
    if slope < -dead_band:
        return "falling"
    return "steady"


def enrich_weather(
    reading: WeatherReading,
    previous: Sequence[tuple[float, float]] = (),
    now: float | None = None,
    window: float = 180.0,
    hour: float = 60.0,
) -> dict:
    samples = [(t, p) for t, p in previous if now is None or t >= now - window]
    if now is not None:
        samples.append((round(now, 3), reading.pressure))
    return {
        "dewPoint": dew_point(reading.temperature, reading.humidity),
        "feelsLike": feels_like(reading.temperature, reading.humidity, reading.wind_speed),
        "pressureTendency": pressure_tendency(samples, hour=hour),
        "pressureHistory": samples,
    }


# -- parking / neighborhood / device --------------------------------------

SPOT_STATES = ("free", "occupied", "closed")


def available_spots(statuses: Mapping[str, str], total: int) -> int:
    occupied = sum(1 for s in statuses.values() if s == "occupied")
    closed = sum(1 for s in statuses.values() if s == "closed")
    return total - occupied - closed


def neighborhood_window(entries: Sequence[Sequence[float]], index: int, now: float, window: float = 60.0) -> dict:
    """Add a pole report and summarize the worst index inside the window.

    ``entries`` is a monotone queue of ``[index, time]`` pairs (indices
    strictly decreasing), so its head is the in-window maximum. Reports
    dominated by a later, worse one can never become the maximum again and
    are dropped.
    """
    live = [[int(i), float(t)] for i, t in entries if t >= now - window]
    while live and live[-1][0] <= index:
        live.pop()
    live.append([int(index), now])
    worst = live[0][0]
    return {"window": live, "aqi": worst, "category": aqi_category(worst), "warning": worst >= 151}


@dataclass
class HandlerParams:
    neighborhood_window: float = 60.0
    battery_threshold: float = 20.0
    weather_window: float = 180.0
    hour: float = 60.0
    breakpoints: Mapping[str, Sequence] = field(default_factory=lambda: DEFAULT_BREAKPOINTS)


PARAMS = HandlerParams()


@register("air-quality")
def _air_quality(ctx: HandlerContext, event: TwinEvent) -> None:
    d = event.data
    result = classify_aqi(AqiReading(d["co2"], d["co"], d["so2"]), ctx.params.breakpoints)
    ctx.emit_store({**d, "aqi": result.index, "category": result.category, "clamped": result.clamped})
    ctx.emit_command("refPole", "updateairqualityindex", {"aqi": result.index, "observed": event.time})


@register("smart-pole")
def _smart_pole(ctx: HandlerContext, event: TwinEvent) -> None:
    if event.category is not EventCategory.COMMAND or event.command != "updateairqualityindex":
        ctx.emit_store(event.data)
        return
    ctx.emit_command("refNeighborhood", "updateairqualityindex", {"aqi": event.data["aqi"], "pole": ctx.instance})


@register("neighborhood")
def _neighborhood(ctx: HandlerContext, event: TwinEvent) -> None:
    if event.category is not EventCategory.COMMAND:
        return
    state = ctx.latest_state() or {}
    entries = state.get("window") or ()
    ctx.emit_store(neighborhood_window(entries, int(event.data["aqi"]), ctx.now, ctx.params.neighborhood_window))


@register("weather")
def _weather(ctx: HandlerContext, event: TwinEvent) -> None:
    d = event.data
    reading = WeatherReading(
        d["temperature"], d["humidity"], d["pressure"], d.get("precipitation", 0.0),
        d.get("snowHeight", 0.0), d.get("windDirection", 0.0), d.get("windSpeed", 0.0),
    )
    state = ctx.latest_state() or {}
    # History is kept as integer milliseconds and hundredths of hPa.
    previous = [(t / 1000.0, p / 100.0) for t, p in state.get("pressureHistory", ())]
    extra = enrich_weather(reading, previous, ctx.now, ctx.params.weather_window, ctx.params.hour)
    extra["pressureHistory"] = [[round(t * 1000), round(p * 100)] for t, p in extra["pressureHistory"]]
    for key in ("dewPoint", "feelsLike"):
        if extra[key] is not None:
            extra[key] = round(extra[key], 3)
    ctx.emit_store({**d, **extra})


@register("parking-spot")
def _parking_spot(ctx: HandlerContext, event: TwinEvent) -> None:
    status = event.data.get("status")
    if status not in SPOT_STATES:
        raise HandlerError(f"invalid spot status {status!r}")
    ctx.emit_command("refParentParking", "updatevehiclecount", {"spot": ctx.instance, "status": status})


@register("offstreet-parking")
def _offstreet_parking(ctx: HandlerContext, event: TwinEvent) -> None:
    if event.category is not EventCategory.COMMAND:
        return
    state = ctx.latest_state() or {}
    statuses = dict(state.get("spots") or {})
    statuses[event.data["spot"]] = event.data["status"]
    props = ctx.graph.instances[ctx.instance].properties
    total = int(props.get("totalSpotNumber") or state.get("total") or _count_spots(ctx))
    ctx.emit_store({"spots": statuses, "total": total, "available": available_spots(statuses, total)})


def _count_spots(ctx: HandlerContext) -> int:
    # Spots point at their parking; count the reverse edges once.
    count = 0
    for iface in ctx.graph.interfaces.values():
        for rel in iface.relationships:
            if rel.target == ctx.interface:
                sub = ctx.graph.subgraph(iface.name)
                count += sum(1 for name in sub.instances if (ctx.interface, ctx.instance) in sub.targets(name, rel.name))
    return count


@register("device")
def _device(ctx: HandlerContext, event: TwinEvent) -> None:
    level = event.data.get("batteryLevel")
    if not isinstance(level, (int, float)) or not 0 <= level <= 100:
        raise HandlerError(f"battery level out of range: {level!r}")
    ctx.emit_store(event.data)
    if level < ctx.params.battery_threshold:
        ctx.emit_virtual({"action": "low-power", "batteryLevel": level})


@register("passthrough")
def _passthrough(ctx: HandlerContext, event: TwinEvent) -> None:
    ctx.emit_store({**(event.data or {}), "processedAt": round(ctx.now, 3)})
