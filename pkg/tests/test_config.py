"""Config parsing and module loading."""
import pytest

from edgeloop.config import (
    HostConfig,
    ModuleConfig,
    load_modules,
    parse_config,
    parse_duration_ms,
    parse_rate_hz,
)
from edgeloop.errors import (
    DuplicateInstanceName,
    InvalidProperty,
    MalformedXml,
    MissingClassAttribute,
    UnknownModuleClass,
)
from edgeloop.runtime import Module, create_runtime
from fractions import Fraction

COLLECTION_FRAGMENT = """
<Module class="MicrophoneCollector">
    <SamplingRate>16000</SamplingRate>
    <Encoding>PCM_FLOAT</Encoding>
    <EncodingBitrate>32</EncodingBitrate>
    <Channels>MONO</Channels>
    <ContinuousChunks>6s</ContinuousChunks>
    <StartRecording>Immediately</StartRecording>
    <Output>AudioData</Output>
</Module>

<Module class="DataSaverModule">
    <save>
        <What>AudioData</What>
        <FileFormat>WAV</FileFormat>
        <StoragePath>
        <!-- files will automatically be named by each Minute -->
            /sdcard/AudioData/audio_file_
        </StoragePath>
    </save>
</Module>

<Module class="DataSyncModule">
    <FilePath>/sdcard/AudioData</FilePath>
    <UserIdentifier>User01</UserIdentifier>
</Module>

<Module class="NetworkClientModule">
    <ConnectTo>127.0.0.1:4000</ConnectTo>
</Module>
"""

DEPLOYMENT_FRAGMENT = """
<Module class="MicrophoneCollector">
    <SamplingRate>16000</SamplingRate>
    <ContinuousChunks>6s</ContinuousChunks>
    <Output>AudioData</Output>
</Module>

<Module class="CoughEnsembleModule">
    <Model>CoughDetector.model</Model>
    <Input>AudioData</Input>
    <Output>DetectedCoughs</Output>
</Module>

<Module class="CoughReportModule">
    <Input>DetectedCoughs</Input>
    <OutputPath>counts.csv</OutputPath>
</Module>
"""


def test_collection_fragment_parses():
    config = parse_config(COLLECTION_FRAGMENT)
    assert [m.class_name for m in config.modules] == [
        "MicrophoneCollector", "DataSaverModule", "DataSyncModule", "NetworkClientModule"]
    mic = config.modules[0]
    assert mic.properties == {
        "SamplingRate": "16000",
        "Encoding": "PCM_FLOAT",
        "EncodingBitrate": "32",
        "Channels": "MONO",
        "ContinuousChunks": "6s",
        "StartRecording": "Immediately",
        "Output": "AudioData",
    }
    saver = config.modules[1]
    assert saver.properties["save"]["What"] == "AudioData"
    assert saver.properties["save"]["StoragePath"] == "/sdcard/AudioData/audio_file_"
    sync = config.modules[2]
    assert sync.properties == {"FilePath": "/sdcard/AudioData", "UserIdentifier": "User01"}


def test_deployment_fragment_parses():
    config = parse_config(DEPLOYMENT_FRAGMENT)
    model = config.modules[1]
    assert model.class_name == "CoughEnsembleModule"
    assert model.properties["Model"] == "CoughDetector.model"
    assert model.properties["Input"] == "AudioData"
    assert model.properties["Output"] == "DetectedCoughs"


def test_rooted_document_parses():
    config = parse_config("<Host><Module class='A'/><Module class='B'/></Host>")
    assert [m.class_name for m in config.modules] == ["A", "B"]
    # default instance names are class + index
    assert [m.instance_name for m in config.modules] == ["A0", "B1"]


def test_repeated_save_blocks_become_list():
    config = parse_config("""
    <Module class="DataSaverModule">
        <save><What>A</What><StoragePath>/x</StoragePath></save>
        <save><What>B</What><StoragePath>/y</StoragePath></save>
    </Module>
    """)
    saves = config.modules[0].properties["save"]
    assert isinstance(saves, list)
    assert [s["What"] for s in saves] == ["A", "B"]


def test_missing_class_attribute():
    with pytest.raises(MissingClassAttribute):
        parse_config("<Module><X>1</X></Module>")


def test_malformed_xml():
    with pytest.raises(MalformedXml):
        parse_config("<Module class='A'><Unclosed></Module>")


def test_unexpected_top_level_element():
    with pytest.raises(MalformedXml):
        parse_config("<Host><NotAModule/></Host>")


def test_duplicate_instance_names_in_config():
    with pytest.raises(DuplicateInstanceName):
        parse_config("<Host><Module class='A' id='x'/><Module class='B' id='x'/></Host>")


def test_duration_grammar():
    assert parse_duration_ms("500ms") == 500
    assert parse_duration_ms("6s") == 6000
    assert parse_duration_ms("5m") == 300_000
    assert parse_duration_ms("2h") == 7_200_000
    assert parse_duration_ms("250") == 250
    with pytest.raises(InvalidProperty):
        parse_duration_ms("6 seconds")


def test_rate_grammar():
    assert parse_rate_hz("20") == Fraction(20)
    assert parse_rate_hz("1/60") == Fraction(1, 60)
    assert parse_rate_hz("0.05") == Fraction(1, 20)
    with pytest.raises(InvalidProperty):
        parse_rate_hz("fast")


class Recorder(Module):
    instances = []

    def __init__(self):
        super().__init__()
        Recorder.instances.append(self)
        self.initialized = False

    def initialize(self):
        self.initialized = True


def test_load_modules_in_order_with_properties():
    Recorder.instances = []
    rt = create_runtime("edge", 1.0)
    config = parse_config(
        "<Host><Module class='R' id='one'><K>v1</K></Module>"
        "<Module class='R' id='two'><K>v2</K></Module></Host>")
    handles = load_modules(rt, config, {"R": Recorder})
    assert [h.instance_name for h in handles] == ["one", "two"]
    rt.start()
    assert all(m.initialized for m in Recorder.instances)
    assert Recorder.instances[0].prop("K") == "v1"
    rt.stop()


def test_module_rejects_bad_property_value():
    from edgeloop.sensing.sensors import MicrophoneCollector
    rt = create_runtime("edge", 1.0)
    config = parse_config(
        "<Module class='MicrophoneCollector' id='mic'>"
        "<ContinuousChunks>6 seconds</ContinuousChunks></Module>")
    load_modules(rt, config, {"MicrophoneCollector": MicrophoneCollector})
    with pytest.raises(InvalidProperty):
        rt.start()
    rt.stop()


def test_load_modules_fails_fast_on_unknown_class():
    Recorder.instances = []
    rt = create_runtime("edge", 1.0)
    config = parse_config(
        "<Host><Module class='R'/><Module class='Mystery'/></Host>")
    with pytest.raises(UnknownModuleClass) as err:
        load_modules(rt, config, {"R": Recorder})
    assert "Mystery" in str(err.value)
    # nothing was constructed
    assert Recorder.instances == []
    rt.stop()
