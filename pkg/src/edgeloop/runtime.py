"""In-process module runtime: lifecycle, named channels, timers.

Modules communicate only via named, typed channels (publisher-subscriber).
Each module owns an executor thread that serializes all of its callbacks;
cross-module delivery is asynchronous through per-module queues. `post` is
safe to call from any thread.

Time is virtual: a runtime's clock starts at a configured epoch and advances
`time_scale` milliseconds per real millisecond once the runtime starts, so a
24-hour protocol compresses into minutes. Periodic timers fire on a fixed
grid anchored at the epoch and never skip a grid point: if dispatch falls
behind, missed points fire in order as catch-up, which keeps per-hour tick
counts exact.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import logging
import queue
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Callable, Optional

from .errors import (
    DuplicateInstanceName,
    EmptyInstanceId,
    InvalidTimerSpec,
    PayloadTypeMismatch,
    TypeConflict,
    UnknownModuleClass,
)
from .wire import WireValue, type_name_of

log = logging.getLogger(__name__)

# 2023-01-01T00:00:00Z
DEFAULT_EPOCH_MS = 1_672_531_200_000


class VirtualClock:
    """Scaled clock: virtual = epoch + time_scale * (real elapsed).

    Reads return the epoch until `start` is called, which lets a runtime
    finish wiring modules before any time passes.
    """

    def __init__(self, time_scale: float, epoch_ms: int = DEFAULT_EPOCH_MS):
        if time_scale <= 0:
            raise ValueError("time_scale must be positive")
        self.time_scale = float(time_scale)
        self.epoch_ms = int(epoch_ms)
        self._origin: Optional[float] = None

    def start(self) -> None:
        if self._origin is None:
            self._origin = time.monotonic()

    def now_ms(self) -> int:
        if self._origin is None:
            return self.epoch_ms
        return self.epoch_ms + int((time.monotonic() - self._origin) * 1000.0 * self.time_scale)

    def real_seconds_until(self, virtual_ms: int) -> float:
        return (virtual_ms - self.now_ms()) / 1000.0 / self.time_scale

    def now_datetime(self) -> datetime:
        return datetime.fromtimestamp(self.now_ms() / 1000.0, tz=timezone.utc)


class _Executor:
    """One worker thread with a task queue; serializes a module's callbacks."""

    _STOP = object()

    def __init__(self, name: str):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._run, name=f"mod-{name}", daemon=True)
        self._name = name

    def start(self) -> None:
        if not self._thread.is_alive():
            self._thread.start()

    def submit(self, fn: Callable[[], None]) -> None:
        self._queue.put(fn)

    def drain(self) -> None:
        self._queue.join()

    def stop(self, timeout: float = 5.0) -> None:
        if not self._thread.is_alive():
            return
        self._queue.put(self._STOP)
        self._thread.join(timeout=timeout)

    def _run(self) -> None:
        while True:
            task = self._queue.get()
            if task is self._STOP:
                self._queue.task_done()
                return
            try:
                task()
            except Exception:
                log.exception("unhandled error in module %s", self._name)
            finally:
                self._queue.task_done()


class ModuleState(enum.Enum):
    CREATED = "Created"
    INITIALIZED = "Initialized"
    RUNNING = "Running"
    STOPPED = "Stopped"


@dataclass
class ModuleHandle:
    instance_name: str
    class_name: str
    state: ModuleState
    properties: dict
    module: "Module"


@dataclass
class Envelope:
    """One published datum as it travels between modules."""

    channel: str
    payload: WireValue
    type_name: str
    sequence: int
    timestamp_ms: int
    origin_instance: str


class Publisher:
    def __init__(self, runtime: "Runtime", module: "Module", channel: "_Channel"):
        self._runtime = runtime
        self._module = module
        self._channel = channel
        self._sequence = 0
        self._lock = threading.Lock()

    @property
    def channel(self) -> str:
        return self._channel.name

    @property
    def sequence(self) -> int:
        return self._sequence

    def post(self, value: WireValue) -> Envelope:
        actual = type_name_of(value)
        if actual != self._channel.type_name:
            raise PayloadTypeMismatch(
                f"channel {self._channel.name!r} carries {self._channel.type_name!r}, "
                f"got {actual!r}"
            )
        # Lock spans sequence assignment and fan-out so per-publisher
        # delivery order matches sequence order.
        with self._lock:
            envelope = Envelope(
                channel=self._channel.name,
                payload=value,
                type_name=self._channel.type_name,
                sequence=self._sequence,
                timestamp_ms=self._runtime.clock.now_ms(),
                origin_instance=self._runtime.instance_id,
            )
            self._sequence += 1
            self._runtime._dispatch(envelope)
        return envelope


class Subscriber:
    def __init__(self, module: "Module", channel: str, callback: Callable[[WireValue], None]):
        self.module = module
        self.channel = channel
        self.callback = callback


class _Channel:
    def __init__(self, name: str, type_name: str):
        self.name = name
        self.type_name = type_name
        self.publishers: list[Publisher] = []
        self.subscribers: list[Subscriber] = []


@dataclass
class _Timer:
    module: "Module"
    callback: Callable[[], None]
    period_ms: Optional[int]  # None for daily timers
    daily: Optional[tuple[int, int, int]]
    next_virtual_ms: int
    timer_id: int
    cancelled: bool = False
    pending: int = 0  # fires queued but not yet executed


class _TimerService:
    # A timer may run this far ahead of its consumer before the service
    # pauses it. Grid points are only delayed, never skipped, so counts stay
    # exact; this keeps fast virtual clocks from flooding executor queues.
    MAX_PENDING = 512

    def __init__(self, clock: VirtualClock):
        self._clock = clock
        self._cond = threading.Condition()
        self._heap: list[tuple[int, int, _Timer]] = []
        self._counter = itertools.count()
        self._thread = threading.Thread(target=self._run, name="timers", daemon=True)
        self._stopped = False

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify()
        if self._thread.is_alive():
            self._thread.join(timeout=5.0)

    def add(self, timer: _Timer) -> None:
        with self._cond:
            heapq.heappush(self._heap, (timer.next_virtual_ms, next(self._counter), timer))
            self._cond.notify()

    def cancel(self, timer: _Timer) -> None:
        timer.cancelled = True

    def _reschedule(self, timer: _Timer) -> None:
        if timer.period_ms is not None:
            timer.next_virtual_ms += timer.period_ms
        else:
            timer.next_virtual_ms += 86_400_000
        heapq.heappush(self._heap, (timer.next_virtual_ms, next(self._counter), timer))

    def _submit(self, timer: _Timer) -> None:
        def run_fire():
            try:
                timer.callback()
            finally:
                with self._cond:
                    timer.pending -= 1
                    self._cond.notify()

        timer.module._executor.submit(run_fire)

    def _run(self) -> None:
        while True:
            with self._cond:
                if self._stopped:
                    return
                now = self._clock.now_ms()
                fired = []
                while self._heap and self._heap[0][0] <= now:
                    timer = self._heap[0][2]
                    if timer.cancelled:
                        heapq.heappop(self._heap)
                        continue
                    if timer.pending >= self.MAX_PENDING:
                        break  # consumer is behind; retry after a short wait
                    heapq.heappop(self._heap)
                    timer.pending += 1
                    fired.append(timer)
                    self._reschedule(timer)
                if not fired:
                    if self._heap:
                        wait_s = self._clock.real_seconds_until(self._heap[0][0])
                        self._cond.wait(timeout=max(min(wait_s, 0.2), 0.0005))
                    else:
                        self._cond.wait(timeout=0.2)
            for timer in fired:
                self._submit(timer)

    def fire_due(self, until_virtual_ms: int) -> int:
        """Synchronously dispatch every grid point strictly before the cutoff.

        Used when draining a run: guarantees all nominal tick times inside
        the experiment span have fired even if the wall clock raced ahead.
        """
        fired = 0
        while True:
            with self._cond:
                if not self._heap or self._heap[0][0] >= until_virtual_ms:
                    return fired
                _, _, timer = heapq.heappop(self._heap)
                if timer.cancelled:
                    continue
                timer.pending += 1
                self._reschedule(timer)
            self._submit(timer)
            fired += 1


class Module:
    """Base class for processing units wired together via channels.

    Subclasses override `initialize` (and optionally `terminate`); both run
    on the module's executor. Properties are assigned before `initialize`.
    """

    def __init__(self):
        self._runtime: Optional[Runtime] = None
        self._executor: Optional[_Executor] = None
        self.instance_name: str = ""
        self.class_name: str = type(self).__name__
        self.properties: dict = {}

    # -- lifecycle hooks --

    def initialize(self) -> None:
        pass

    def terminate(self) -> None:
        pass

    # -- channel and timer API --

    @property
    def runtime(self) -> "Runtime":
        assert self._runtime is not None
        return self._runtime

    @property
    def clock(self) -> VirtualClock:
        return self.runtime.clock

    def publish(self, channel: str, type_name: str) -> Publisher:
        return self.runtime._register_publisher(self, channel, type_name)

    def subscribe(self, channel: str, type_name: str,
                  callback: Callable[[WireValue], None]) -> Subscriber:
        return self.runtime._register_subscriber(self, channel, type_name, callback)

    def register_periodic(self, period_ms: int, callback: Callable[[], None]) -> _Timer:
        return self.runtime._register_periodic(self, period_ms, callback)

    def register_scheduled(self, hour: int, minute: int, second: int,
                           callback: Callable[[], None]) -> _Timer:
        return self.runtime._register_scheduled(self, hour, minute, second, callback)

    def prop(self, name: str, default=None):
        return self.properties.get(name, default)


class Runtime:
    """One runtime instance: module registry, channel registry, timers."""

    def __init__(self, instance_id: str, time_scale: float = 1.0,
                 epoch_ms: int = DEFAULT_EPOCH_MS,
                 module_registry: Optional[dict[str, type]] = None):
        if not instance_id:
            raise EmptyInstanceId("instance_id must be non-empty")
        if time_scale <= 0:
            raise ValueError("time_scale must be positive")
        self.instance_id = instance_id
        self.clock = VirtualClock(time_scale, epoch_ms)
        self.module_registry = module_registry if module_registry is not None else {}
        self._modules: dict[str, ModuleHandle] = {}
        self._module_order: list[ModuleHandle] = []
        self._channels: dict[str, _Channel] = {}
        self._registry_lock = threading.RLock()
        self._timers = _TimerService(self.clock)
        self._started = False
        self._stopped = False
        # Set by the network layer; observes posts and table changes.
        self.router = None
        # Cross-module services (e.g. the link controller) register here.
        self.extensions: dict = {}

    # -- module management --

    def register_module(self, class_name: str, instance_name: str,
                        properties: Optional[dict] = None) -> ModuleHandle:
        cls = self.module_registry.get(class_name)
        if cls is None:
            raise UnknownModuleClass(f"module class {class_name!r} is not registered")
        module = cls()
        module.class_name = class_name
        return self.add_module(module, instance_name, properties)

    def add_module(self, module: Module, instance_name: str,
                   properties: Optional[dict] = None) -> ModuleHandle:
        if not instance_name:
            raise EmptyInstanceId("instance_name must be non-empty")
        with self._registry_lock:
            if instance_name in self._modules:
                raise DuplicateInstanceName(f"instance {instance_name!r} already registered")
            handle = ModuleHandle(
                instance_name=instance_name,
                class_name=module.class_name,
                state=ModuleState.CREATED,
                properties=dict(properties or {}),
                module=module,
            )
            module._runtime = self
            module.instance_name = instance_name
            module.properties = handle.properties
            module._executor = _Executor(instance_name)
            self._modules[instance_name] = handle
            self._module_order.append(handle)
        if self._started:
            self._initialize_module(handle)
        return handle

    def module(self, instance_name: str) -> Module:
        return self._modules[instance_name].module

    def handles(self) -> list[ModuleHandle]:
        return list(self._module_order)

    def _initialize_module(self, handle: ModuleHandle) -> None:
        done = threading.Event()
        failure: list[BaseException] = []

        def run_init():
            try:
                handle.module.initialize()
                handle.state = ModuleState.INITIALIZED
            except BaseException as exc:  # surfaced to the caller below
                failure.append(exc)
            finally:
                done.set()

        handle.module._executor.start()
        handle.module._executor.submit(run_init)
        done.wait(timeout=30.0)
        if not done.is_set():
            raise TimeoutError(f"initialize of {handle.instance_name!r} did not finish")
        if failure:
            raise failure[0]
        handle.state = ModuleState.RUNNING

    def start(self) -> None:
        """Initialize all modules in registration order, then start time."""
        if self._started:
            return
        self._started = True
        for handle in list(self._module_order):
            self._initialize_module(handle)
        self.clock.start()
        self._timers.start()

    def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        self._timers.stop()
        for handle in self._module_order:
            handle.module._executor.submit(handle.module.terminate)
        for handle in self._module_order:
            handle.module._executor.stop()
            handle.state = ModuleState.STOPPED
        if self.router is not None:
            self.router.shutdown()

    def drain(self) -> None:
        """Wait until every module's task queue is empty.

        Tasks may enqueue follow-up work on other modules, so draining
        repeats until a full pass finds all queues quiet.
        """
        for _ in range(len(self._module_order) + 2):
            busy = False
            for handle in self._module_order:
                if handle.module._executor._queue.unfinished_tasks:
                    busy = True
                handle.module._executor.drain()
            if not busy:
                return

    def fire_due_timers(self, until_virtual_ms: int) -> int:
        return self._timers.fire_due(until_virtual_ms)

    # -- channels --

    def _channel_for(self, name: str, type_name: str) -> _Channel:
        if not name:
            raise ValueError("channel name must be non-empty")
        chan = self._channels.get(name)
        if chan is None:
            chan = _Channel(name, type_name)
            self._channels[name] = chan
        elif chan.type_name != type_name:
            raise TypeConflict(
                f"channel {name!r} already carries {chan.type_name!r}, requested {type_name!r}"
            )
        return chan

    def _register_publisher(self, module: Module, name: str, type_name: str) -> Publisher:
        with self._registry_lock:
            chan = self._channel_for(name, type_name)
            publisher = Publisher(self, module, chan)
            chan.publishers.append(publisher)
        self._table_changed()
        return publisher

    def _register_subscriber(self, module: Module, name: str, type_name: str,
                             callback: Callable[[WireValue], None]) -> Subscriber:
        with self._registry_lock:
            chan = self._channel_for(name, type_name)
            subscriber = Subscriber(module, name, callback)
            chan.subscribers.append(subscriber)
        self._table_changed()
        return subscriber

    def _table_changed(self) -> None:
        if self.router is not None:
            self.router.on_table_change()

    def channel_table(self) -> list[tuple[str, bool, bool, str]]:
        """Local channel presence: (name, has_publisher, has_subscriber, type)."""
        with self._registry_lock:
            return [
                (c.name, bool(c.publishers), bool(c.subscribers), c.type_name)
                for c in self._channels.values()
                if c.publishers or c.subscribers
            ]

    def channel_type(self, name: str) -> Optional[str]:
        chan = self._channels.get(name)
        return chan.type_name if chan else None

    def has_local_subscriber(self, name: str) -> bool:
        chan = self._channels.get(name)
        return bool(chan and chan.subscribers)

    def has_any_subscriber(self, name: str) -> bool:
        if self.has_local_subscriber(name):
            return True
        return self.router is not None and self.router.peer_wants(name)

    def has_any_publisher(self, name: str) -> bool:
        chan = self._channels.get(name)
        if chan is not None and chan.publishers:
            return True
        return self.router is not None and self.router.peer_publishes(name)

    # -- delivery --

    def _dispatch(self, envelope: Envelope) -> None:
        self._deliver_local(envelope)
        if self.router is not None:
            self.router.on_local_post(envelope)

    def _deliver_local(self, envelope: Envelope) -> None:
        chan = self._channels.get(envelope.channel)
        if chan is None:
            return
        with self._registry_lock:
            subscribers = list(chan.subscribers)
        for sub in subscribers:
            payload = envelope.payload
            cb = sub.callback
            sub.module._executor.submit(lambda cb=cb, payload=payload: cb(payload))

    def inject_remote(self, envelope: Envelope) -> bool:
        """Deliver an envelope received from a peer to local subscribers.

        Returns False when the channel is unknown or carries another type
        (the caller logs and drops the frame). Remote envelopes are never
        forwarded to further peers.
        """
        chan = self._channels.get(envelope.channel)
        if chan is None or chan.type_name != envelope.type_name:
            return False
        self._deliver_local(envelope)
        return True

    # -- timers --

    def _grid_anchor_next(self, period_ms: int) -> int:
        now = self.clock.now_ms()
        epoch = self.clock.epoch_ms
        if now <= epoch:
            return epoch
        steps = -((epoch - now) // period_ms)  # ceil((now-epoch)/period)
        return epoch + steps * period_ms

    def _register_periodic(self, module: Module, period_ms: int,
                           callback: Callable[[], None]) -> _Timer:
        if not isinstance(period_ms, int) or period_ms < 1:
            raise InvalidTimerSpec(f"period_ms must be >= 1, got {period_ms!r}")
        timer = _Timer(
            module=module,
            callback=callback,
            period_ms=period_ms,
            daily=None,
            next_virtual_ms=self._grid_anchor_next(period_ms),
            timer_id=id(callback),
        )
        self._timers.add(timer)
        return timer

    def _register_scheduled(self, module: Module, hour: int, minute: int, second: int,
                            callback: Callable[[], None]) -> _Timer:
        if not (0 <= hour < 24 and 0 <= minute < 60 and 0 <= second < 60):
            raise InvalidTimerSpec(f"invalid daily time {hour}:{minute}:{second}")
        now_dt = self.clock.now_datetime()
        candidate = now_dt.replace(hour=hour, minute=minute, second=second, microsecond=0)
        if candidate <= now_dt:
            candidate += timedelta(days=1)
        timer = _Timer(
            module=module,
            callback=callback,
            period_ms=None,
            daily=(hour, minute, second),
            next_virtual_ms=int(candidate.timestamp() * 1000),
            timer_id=id(callback),
        )
        self._timers.add(timer)
        return timer

    def cancel_timer(self, timer: _Timer) -> None:
        self._timers.cancel(timer)


def create_runtime(instance_id: str, time_scale: float = 1.0,
                   epoch_ms: int = DEFAULT_EPOCH_MS,
                   module_registry: Optional[dict[str, type]] = None) -> Runtime:
    """Create a runtime instance with an empty channel registry."""
    return Runtime(instance_id, time_scale, epoch_ms, module_registry)
