"""Randomized pipeline builder for the location-transparency property.

A pipeline is 3..6 modules: seeded generators post fixed sequences on their
own channels, transforms wrap and re-post 1:1, sinks record the encoded
payload bytes per channel. Every channel has exactly one publisher, so each
(sink, channel) byte sequence is deterministic, and running the pipeline in
one instance must equal running it split across two connected instances.
"""
from __future__ import annotations

import random
import time
from dataclasses import dataclass

from edgeloop.network import NetworkClientModule, NetworkServerModule
from edgeloop.runtime import Module, create_runtime
from edgeloop.wire import WFloat, WInt, WString, WStruct, encode


@dataclass
class GeneratorSpec:
    name: str
    channel: str
    count: int
    seed: int
    payload: str  # Int | Float | String | Struct


@dataclass
class TransformSpec:
    name: str
    input_channel: str
    output_channel: str


@dataclass
class SinkSpec:
    name: str
    channels: list[str]


@dataclass
class PipelineSpec:
    modules: list  # Generator/Transform/Sink specs in registration order

    def expected_counts(self) -> dict[str, int]:
        counts = {}
        for spec in self.modules:
            if isinstance(spec, GeneratorSpec):
                counts[spec.channel] = spec.count
        for spec in self.modules:
            if isinstance(spec, TransformSpec):
                counts[spec.output_channel] = counts[spec.input_channel]
        return counts

    def subscribed_channels(self) -> set[str]:
        channels = set()
        for spec in self.modules:
            if isinstance(spec, TransformSpec):
                channels.add(spec.input_channel)
            elif isinstance(spec, SinkSpec):
                channels.update(spec.channels)
        return channels


def _channel_type(payload: str) -> str:
    return {"Int": "Int", "Float": "Float", "String": "String", "Struct": "Reading"}[payload]


def _make_value(payload: str, rng: random.Random, index: int):
    if payload == "Int":
        return WInt(rng.randint(-10**9, 10**9))
    if payload == "Float":
        return WFloat(rng.uniform(-1e6, 1e6))
    if payload == "String":
        return WString(f"v{index}-{rng.randint(0, 10**6)}")
    return WStruct("Reading", {
        "n": WInt(index),
        "x": WFloat(rng.gauss(0.0, 2.0)),
        "tag": WString(rng.choice("abcdef")),
    })


class GeneratorModule(Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec

    def initialize(self):
        self._pub = self.publish(self.spec.channel, _channel_type(self.spec.payload))

    def emit_all(self):
        def run():
            rng = random.Random(self.spec.seed)
            for index in range(self.spec.count):
                self._pub.post(_make_value(self.spec.payload, rng, index))
        self._executor.submit(run)


class TransformModule(Module):
    def __init__(self, spec: TransformSpec, input_type: str):
        super().__init__()
        self.spec = spec
        self._input_type = input_type
        self._count = 0

    def initialize(self):
        self._pub = self.publish(self.spec.output_channel, "Wrapped")
        self.subscribe(self.spec.input_channel, self._input_type, self._on_value)

    def _on_value(self, value):
        wrapped = WStruct("Wrapped", {"seq": WInt(self._count), "inner": value})
        self._count += 1
        self._pub.post(wrapped)


class SinkModule(Module):
    def __init__(self, spec: SinkSpec, channel_types: dict[str, str]):
        super().__init__()
        self.spec = spec
        self._types = channel_types
        self.received: dict[str, list[bytes]] = {c: [] for c in spec.channels}

    def initialize(self):
        for channel in self.spec.channels:
            self.subscribe(channel, self._types[channel],
                           lambda value, c=channel: self.received[c].append(encode(value)))


def random_pipeline(rng: random.Random) -> PipelineSpec:
    n_modules = rng.randint(3, 6)
    modules: list = []
    channels: list[tuple[str, str]] = []  # (channel, type)
    sinks = 0
    for index in range(n_modules):
        last = index == n_modules - 1
        if index == 0:
            kind = "generator"
        elif last and sinks == 0:
            kind = "sink"
        else:
            kind = rng.choice(["generator", "transform", "sink", "sink"])
        if kind == "generator":
            payload = rng.choice(["Int", "Float", "String", "Struct"])
            spec = GeneratorSpec(
                name=f"gen{index}",
                channel=f"ch{index}",
                count=rng.randint(8, 24),
                seed=rng.randint(0, 2**31),
                payload=payload,
            )
            channels.append((spec.channel, _channel_type(payload)))
            modules.append(spec)
        elif kind == "transform":
            source = rng.choice(channels)[0]
            spec = TransformSpec(
                name=f"tr{index}",
                input_channel=source,
                output_channel=f"ch{index}",
            )
            channels.append((spec.output_channel, "Wrapped"))
            modules.append(spec)
        else:
            count = rng.randint(1, min(3, len(channels)))
            picked = rng.sample([c for c, _ in channels], count)
            modules.append(SinkSpec(name=f"sink{index}", channels=picked))
            sinks += 1
    return PipelineSpec(modules)


def _instantiate(spec, channel_types: dict[str, str]) -> Module:
    if isinstance(spec, GeneratorSpec):
        return GeneratorModule(spec)
    if isinstance(spec, TransformSpec):
        return TransformModule(spec, channel_types[spec.input_channel])
    return SinkModule(spec, channel_types)


def _channel_types(pipeline: PipelineSpec) -> dict[str, str]:
    types = {}
    for spec in pipeline.modules:
        if isinstance(spec, GeneratorSpec):
            types[spec.channel] = _channel_type(spec.payload)
        elif isinstance(spec, TransformSpec):
            types[spec.output_channel] = "Wrapped"
    return types


def run_pipeline(pipeline: PipelineSpec, split_to_b: set[str] | None,
                 timeout_s: float = 30.0) -> dict[tuple[str, str], list[bytes]]:
    """Run the pipeline; `split_to_b` names modules placed on a second,
    TCP-connected instance (None = single instance). Returns the byte
    sequences every sink saw, keyed by (sink name, channel)."""
    channel_types = _channel_types(pipeline)
    runtimes = []
    rt_a = create_runtime("alpha", 1.0)
    runtimes.append(rt_a)
    client = None
    if split_to_b is not None:
        rt_b = create_runtime("beta", 1.0)
        runtimes.append(rt_b)
        server = NetworkServerModule()
        rt_a.add_module(server, "net_server", {"Port": 0})
        rt_a.start()
        client = NetworkClientModule()
        rt_b.add_module(client, "net_client", {
            "ConnectTo": f"127.0.0.1:{server.port}", "RetryIntervalMs": 50})
    try:
        generators = []
        sinks = []
        for spec in pipeline.modules:
            module = _instantiate(spec, channel_types)
            target = rt_a
            if split_to_b is not None and spec.name in split_to_b:
                target = runtimes[1]
            target.add_module(module, spec.name)
            if isinstance(spec, GeneratorSpec):
                generators.append(module)
            elif isinstance(spec, SinkSpec):
                sinks.append(module)
        for rt in runtimes:
            rt.start()
        if client is not None:
            assert client.wait_connected(10)

        # Cross-boundary visibility: wherever a channel's producer and one of
        # its consumers sit on different instances, the producer's side must
        # have seen the peer's table advertising that subscriber. A local
        # subscriber on the producer's side must not mask this.
        def side_of(name: str) -> int:
            return 1 if (split_to_b is not None and name in split_to_b) else 0

        producer_side: dict[str, int] = {}
        consumer_sides: dict[str, set[int]] = {}
        for spec in pipeline.modules:
            if isinstance(spec, GeneratorSpec):
                producer_side[spec.channel] = side_of(spec.name)
            elif isinstance(spec, TransformSpec):
                producer_side[spec.output_channel] = side_of(spec.name)
                consumer_sides.setdefault(spec.input_channel, set()).add(side_of(spec.name))
            else:
                for channel in spec.channels:
                    consumer_sides.setdefault(channel, set()).add(side_of(spec.name))

        def tables_ready() -> bool:
            for channel, sides in consumer_sides.items():
                producer = producer_side[channel]
                if any(side != producer for side in sides):
                    router = runtimes[producer].router
                    if router is None or not router.peer_wants(channel):
                        return False
            return True

        deadline = time.monotonic() + timeout_s
        while not tables_ready() and time.monotonic() < deadline:
            time.sleep(0.01)
        assert tables_ready(), "peer tables did not settle"

        for generator in generators:
            generator.emit_all()

        expected = pipeline.expected_counts()
        def complete():
            for sink in sinks:
                for channel in sink.spec.channels:
                    if len(sink.received[channel]) < expected[channel]:
                        return False
            return True
        deadline = time.monotonic() + timeout_s
        while not complete() and time.monotonic() < deadline:
            time.sleep(0.01)
        assert complete(), "pipeline did not deliver everything in time"

        out = {}
        for sink in sinks:
            for channel in sink.spec.channels:
                out[(sink.spec.name, channel)] = list(sink.received[channel])
        return out
    finally:
        for rt in runtimes:
            rt.stop()


def random_split(pipeline: PipelineSpec, rng: random.Random) -> set[str]:
    names = [spec.name for spec in pipeline.modules]
    split = {name for name in names if rng.random() < 0.5}
    if len(split) == len(names):  # keep at least one module on each side
        split.pop()
    return split


def transparency_trial(seed: int) -> bool:
    """One randomized trial; True when both placements saw identical bytes."""
    rng = random.Random(seed)
    pipeline = random_pipeline(rng)
    single = run_pipeline(pipeline, None)
    split = run_pipeline(pipeline, random_split(pipeline, rng))
    return single == split
