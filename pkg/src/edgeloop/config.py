"""XML module configuration: parse files, instantiate and wire modules.

A config is a sequence of `<Module class="...">` elements, either as a bare
fragment or under a single root element. Child elements become string
properties; elements with children become nested maps; repeated names become
lists. Values are delivered verbatim (including duration strings like "6s");
each module parses its own property values.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import (
    DuplicateInstanceName,
    InvalidProperty,
    MalformedXml,
    MissingClassAttribute,
    UnknownModuleClass,
)
from .runtime import ModuleHandle, Runtime

_DURATION_UNITS = {"ms": 1, "s": 1000, "m": 60_000, "h": 3_600_000}


def parse_duration_ms(text: str) -> int:
    """Parse strings like "500ms", "6s", "5m", "2h" into milliseconds."""
    text = str(text).strip()
    for unit in ("ms", "h", "m", "s"):
        if text.endswith(unit):
            number = text[: -len(unit)].strip()
            if number.isdigit():
                return int(number) * _DURATION_UNITS[unit]
            break
    if text.isdigit():  # bare integers are milliseconds
        return int(text)
    raise InvalidProperty(f"not a duration: {text!r} (expected integer + ms|s|m|h)")


def parse_rate_hz(text: str) -> Fraction:
    """Parse a sampling rate: "20", "0.05", or a fraction like "1/60"."""
    text = str(text).strip()
    try:
        if "/" in text:
            num, den = text.split("/", 1)
            return Fraction(int(num), int(den))
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise InvalidProperty(f"not a rate: {text!r}") from None


@dataclass
class ModuleConfig:
    class_name: str
    instance_name: str
    properties: dict


@dataclass
class HostConfig:
    modules: list[ModuleConfig] = field(default_factory=list)


def _element_value(element: ET.Element):
    children = list(element)
    if not children:
        return (element.text or "").strip()
    nested: dict = {}
    for child in children:
        value = _element_value(child)
        if child.tag in nested:
            existing = nested[child.tag]
            if isinstance(existing, list):
                existing.append(value)
            else:
                nested[child.tag] = [existing, value]
        else:
            nested[child.tag] = value
    return nested


def _parse_module_element(element: ET.Element, index: int) -> ModuleConfig:
    class_name = element.get("class")
    if not class_name:
        raise MissingClassAttribute(f"Module element #{index} has no class attribute")
    instance_name = element.get("id") or f"{class_name}{index}"
    properties = _element_value(element)
    if isinstance(properties, str):  # childless module element
        properties = {}
    return ModuleConfig(class_name=class_name, instance_name=instance_name,
                        properties=properties)


def parse_config(xml_text: str) -> HostConfig:
    """Parse a config document or fragment into a HostConfig."""
    root = None
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as first_error:
        try:
            root = ET.fromstring(f"<Host>{xml_text}</Host>")
        except ET.ParseError:
            raise MalformedXml(str(first_error)) from None
    if root.tag == "Module":
        elements = [root]
    else:
        elements = list(root)
    config = HostConfig()
    seen = set()
    for index, element in enumerate(elements):
        if element.tag != "Module":
            raise MalformedXml(f"unexpected top-level element <{element.tag}>")
        module = _parse_module_element(element, index)
        if module.instance_name in seen:
            raise DuplicateInstanceName(
                f"instance name {module.instance_name!r} used twice in config")
        seen.add(module.instance_name)
        config.modules.append(module)
    return config


def load_config_file(path: str) -> HostConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def load_modules(runtime: Runtime, config: HostConfig,
                 factory_registry: dict[str, type] | None = None) -> list[ModuleHandle]:
    """Instantiate all configured modules in file order.

    Fails before constructing anything if any class is unknown, so a broken
    config never starts a partial pipeline.
    """
    registry = factory_registry if factory_registry is not None else runtime.module_registry
    missing = [m.class_name for m in config.modules if m.class_name not in registry]
    if missing:
        raise UnknownModuleClass(f"unknown module class(es): {', '.join(sorted(set(missing)))}")
    handles = []
    for module_config in config.modules:
        cls = registry[module_config.class_name]
        module = cls()
        module.class_name = module_config.class_name
        handles.append(runtime.add_module(module, module_config.instance_name,
                                          module_config.properties))
    return handles


def default_module_registry() -> dict[str, type]:
    """All module classes this package ships, keyed by config class name."""
    from .network import NetworkClientModule, NetworkServerModule
    from .sensing.saver import DataSaverModule
    from .sensing.schedule import ConnectivityControllerModule
    from .sensing.sensors import (
        AccelerometerCollector,
        BatteryCollector,
        ConnectivityCollector,
        HeartRateCollector,
        LocationCollector,
        MicrophoneCollector,
        TemperatureCollector,
    )
    from .sensing.sync import DataReceiverModule, DataSyncModule
    from .mlloop.modules import CoughEnsembleModule, CoughReportModule, EvaluatorModule

    return {
        "AccelerometerCollector": AccelerometerCollector,
        "BatteryCollector": BatteryCollector,
        "ConnectivityCollector": ConnectivityCollector,
        "LocationCollector": LocationCollector,
        "MicrophoneCollector": MicrophoneCollector,
        "HeartRateCollector": HeartRateCollector,
        "TemperatureCollector": TemperatureCollector,
        "DataSaverModule": DataSaverModule,
        "DataSyncModule": DataSyncModule,
        "DataReceiverModule": DataReceiverModule,
        "NetworkServerModule": NetworkServerModule,
        "NetworkClientModule": NetworkClientModule,
        "ConnectivityControllerModule": ConnectivityControllerModule,
        "CoughEnsembleModule": CoughEnsembleModule,
        "CoughReportModule": CoughReportModule,
        "EvaluatorModule": EvaluatorModule,
    }
