"""Concurrency-target autoscaler with scale-to-zero and activator buffering.

One :class:`ScalerState` per service. The simulation loop calls
:func:`admit` for each arriving request, :func:`complete` when a request
finishes, :func:`tick` on every scaling period and :func:`reconcile` to
move the replica set toward :func:`desired_replicas`.

Observed concurrency counts in-flight requests plus requests buffered in
the activator, averaged over the stable window.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any

from .definitions import AutoscalePolicy

COLD_STARTING = "cold-starting"
READY = "ready"
TERMINATING = "terminating"


@dataclass(frozen=True)
class ScalerSettings:
    stable_window: float = 60.0
    tick: float = 2.0
    idle_window: float = 30.0
    cold_start: tuple[float, float] = (1.0, 2.0)
    utilization_floor: float = 0.05


class PodReplica:
    __slots__ = ("id", "state", "started_at", "ready_at", "in_flight", "capacity", "cpu", "memory")

    def __init__(self, id: str, started_at: float, ready_at: float, capacity: int, cpu: float, memory: int):
        self.id = id
        self.state = COLD_STARTING if ready_at > started_at else READY
        self.started_at = started_at
        self.ready_at = ready_at
        self.in_flight = 0
        self.capacity = capacity
        self.cpu = cpu
        self.memory = memory

    def __repr__(self) -> str:
        return f"PodReplica({self.id!r}, {self.state}, in_flight={self.in_flight})"


@dataclass
class ScalerState:
    service: str
    policy: AutoscalePolicy
    capacity: int
    cpu: float
    memory: int
    settings: ScalerSettings = field(default_factory=ScalerSettings)
    rng: random.Random = field(default_factory=random.Random)

    replicas: list[PodReplica] = field(default_factory=list)
    buffer: deque = field(default_factory=deque)
    samples: deque = field(default_factory=deque)

    created: int = 0
    terminated: int = 0
    max_seen: int = 0

    def __post_init__(self):
        self._in_flight = 0
        self._since = 0.0
        self._conc_area = 0.0
        self._busy_area = 0.0
        self._tick_start = 0.0
        self._window_area = 0.0
        self._window_span = 0.0
        self._idle_since = 0.0
        self._last_busy_avg = 0.0

    @property
    def fixed(self) -> bool:
        return self.policy.min_replicas == self.policy.max_replicas

    @property
    def concurrency(self) -> int:
        return self._in_flight + len(self.buffer)

    @property
    def in_flight(self) -> int:
        return self._in_flight

    def ready_replicas(self) -> list[PodReplica]:
        return [r for r in self.replicas if r.state == READY]

    def counts(self) -> tuple[int, int]:
        ready = sum(1 for r in self.replicas if r.state == READY)
        return ready, len(self.replicas) - ready

    def _touch(self, now: float) -> None:
        dt = now - self._since
        if dt > 0:
            self._conc_area += (self._in_flight + len(self.buffer)) * dt
            self._busy_area += self._in_flight * dt
            self._since = now

    def _after_change(self, now: float) -> None:
        if self._in_flight == 0 and not self.buffer:
            self._idle_since = now

    def observed_concurrency(self, now: float) -> float:
        """Time-weighted concurrency over the stable window ending at ``now``."""
        self._touch(now)
        span = self._window_span + (now - self._tick_start)
        area = self._window_area + self._conc_area
        if span <= 1e-12:
            return float(self.concurrency)
        return area / span


def new_scaler(
    service: str,
    policy: AutoscalePolicy,
    *,
    capacity: int | None = None,
    cpu: float = 0.1,
    memory: int = 64 * 1024**2,
    settings: ScalerSettings | None = None,
    rng: random.Random | None = None,
    now: float = 0.0,
) -> ScalerState:
    """Create a scaler with ``policy.min_replicas`` warm replicas."""
    state = ScalerState(
        service=service,
        policy=policy,
        capacity=capacity or policy.target,
        cpu=cpu,
        memory=memory,
        settings=settings or ScalerSettings(),
        rng=rng or random.Random(0),
    )
    state._since = state._tick_start = state._idle_since = now
    for _ in range(policy.min_replicas):
        _spawn(state, now, warm=True)
    return state


def _spawn(state: ScalerState, now: float, warm: bool = False) -> PodReplica:
    lo, hi = state.settings.cold_start
    ready_at = now if warm else now + state.rng.uniform(lo, hi)
    replica = PodReplica(f"{state.service}-{state.created:05d}", now, ready_at, state.capacity, state.cpu, state.memory)
    state.created += 1
    state.replicas.append(replica)
    state.max_seen = max(state.max_seen, len(state.replicas))
    return replica


def desired_replicas(state: ScalerState, now: float) -> int:
    policy = state.policy
    if state.fixed:
        return policy.min_replicas
    busy = state.concurrency > 0
    if not busy and now - state._idle_since >= state.settings.idle_window:
        return policy.min_replicas
    avg = state.observed_concurrency(now)
    want = math.ceil(avg / policy.target - 1e-9) if avg > 0 else 0
    if busy:
        want = max(want, 1)
    return max(policy.min_replicas, min(policy.max_replicas, want))


def _place(state: ScalerState, replica: PodReplica, now: float) -> None:
    state._touch(now)
    replica.in_flight += 1
    state._in_flight += 1


def _pick(state: ScalerState) -> PodReplica | None:
    best = None
    for r in state.replicas:
        if r.state == READY and r.in_flight < r.capacity and (best is None or r.in_flight < best.in_flight):
            best = r
    return best


def admit(state: ScalerState, item: Any, now: float) -> PodReplica | None:
    """Place ``item`` on the least-loaded ready replica, or buffer it.

    Returns the replica, or ``None`` when the item went to the activator
    buffer. Buffering triggers a scale-up evaluation; the caller should
    schedule readiness for any replicas created by :func:`reconcile`.
    """
    if not state.buffer:
        replica = _pick(state)
        if replica is not None:
            _place(state, replica, now)
            return replica
    state._touch(now)
    state.buffer.append(item)
    return None


def complete(state: ScalerState, replica: PodReplica, now: float) -> None:
    state._touch(now)
    replica.in_flight -= 1
    state._in_flight -= 1
    state._after_change(now)


def drain(state: ScalerState, now: float) -> list[tuple[Any, PodReplica]]:
    """Move buffered items onto free capacity, FIFO."""
    placed = []
    while state.buffer:
        replica = _pick(state)
        if replica is None:
            break
        state._touch(now)
        item = state.buffer.popleft()
        replica.in_flight += 1
        state._in_flight += 1
        placed.append((item, replica))
    if placed:
        state._after_change(now)
    return placed


def mark_ready(state: ScalerState, replica: PodReplica, now: float) -> bool:
    """Replica finished cold start. False if it was terminated meanwhile."""
    if replica not in state.replicas or replica.state != COLD_STARTING:
        return False
    replica.state = READY
    return True


def reconcile(state: ScalerState, now: float, *, scale_down: bool = True) -> list[tuple[str, PodReplica]]:
    """Create or remove replicas toward the desired count.

    Surplus cold-starting replicas go first, then idle ready ones; busy
    replicas are never terminated and the count never drops below min.
    """
    desired = desired_replicas(state, now)
    current = len(state.replicas)
    actions: list[tuple[str, PodReplica]] = []
    if desired > current:
        for _ in range(desired - current):
            actions.append(("create", _spawn(state, now)))
    elif desired < current and scale_down:
        surplus = current - max(desired, state.policy.min_replicas)
        victims = [r for r in reversed(state.replicas) if r.state == COLD_STARTING]
        victims += [r for r in reversed(state.replicas) if r.state == READY and r.in_flight == 0]
        for r in victims[:surplus]:
            r.state = TERMINATING
            state.replicas.remove(r)
            state.terminated += 1
            actions.append(("terminate", r))
    return actions


def tick(state: ScalerState, now: float) -> dict:
    """Close the current observation interval and record a window sample.

    Returns the interval's averages, used for resource accounting.
    """
    state._touch(now)
    dt = now - state._tick_start
    conc_area, busy_area = state._conc_area, state._busy_area
    if dt > 0:
        state.samples.append((now, conc_area, dt))
        state._window_area += conc_area
        state._window_span += dt
    horizon = now - state.settings.stable_window
    while state.samples and state.samples[0][0] - state.samples[0][2] < horizon - 1e-9:
        _, area, span = state.samples.popleft()
        state._window_area -= area
        state._window_span -= span
    state._conc_area = 0.0
    state._busy_area = 0.0
    state._tick_start = now
    return {
        "avg_concurrency": conc_area / dt if dt > 0 else float(state.concurrency),
        "avg_in_flight": busy_area / dt if dt > 0 else float(state.in_flight),
    }


def utilization(avg_in_flight: float, ready_capacity: int, floor: float = 0.05) -> float:
    if ready_capacity <= 0:
        return 0.0
    return min(1.0, max(floor, avg_in_flight / ready_capacity))


def resource_series(snapshots: list[dict]) -> dict[str, list]:
    """Aggregate per-tick scaler snapshots into cluster-level series.

    Each snapshot holds ``time`` and a ``services`` mapping of
    ``{replicas, ready, cpu, memory, avg_in_flight, capacity}``.
    """
    out = {"time": [], "replicas": [], "requested_cpu": [], "requested_memory": [], "used_cpu_fraction": [], "used_memory_fraction": []}
    for snap in snapshots:
        replicas = req_cpu = req_mem = used_cpu = 0.0
        for s in snap["services"].values():
            replicas += s["replicas"]
            c = s["replicas"] * s["cpu"]
            m = s["replicas"] * s["memory"]
            u = utilization(s["avg_in_flight"], s["ready"] * s["capacity"])
            req_cpu += c
            req_mem += m
            used_cpu += c * u
        frac = used_cpu / req_cpu if req_cpu > 0 else 0.0
        out["time"].append(snap["time"])
        out["replicas"].append(int(replicas))
        out["requested_cpu"].append(req_cpu)
        out["requested_memory"].append(req_mem)
        out["used_cpu_fraction"].append(frac)
        out["used_memory_fraction"].append(frac)
    return out
