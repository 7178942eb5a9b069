# -*- coding: utf-8 -*-

import logging
import shutil
from pathlib import Path
from typing import Callable, Dict, Generator, List, Optional

import pytest
import requests

from ah_detect.annotations import TimeInterval
from ah_detect.chat_api import ChatSession
from ah_detect.inference import ModelEndpoint
from ah_detect.media import ClipRecord, MediaToolchain
from ah_detect.segmenter import ClipSpec

from .mock_server import ScenarioServer

HAS_FFMPEG = shutil.which("ffmpeg") is not None and shutil.which("ffprobe") is not None


def pytest_runtest_setup(item) -> None:
    if item.get_closest_marker("media") and not HAS_FFMPEG:
        pytest.skip("ffmpeg/ffprobe not available")


@pytest.fixture(autouse=True)
def restore_package_logger() -> Generator[None, None, None]:
    """`configure_logging` detaches the package logger; undo it after each test."""
    logger = logging.getLogger("ah_detect")
    handlers, level, propagate = list(logger.handlers), logger.level, logger.propagate
    yield
    logger.handlers[:] = handlers
    logger.setLevel(level)
    logger.propagate = propagate


@pytest.fixture
def mock_scenario_server(request) -> Generator[ScenarioServer, None, None]:
    """
    Use together with `pytest.mark.scenario` marker to pass a scenario
    (and optionally `delay_s`) to the mock chat-completions server
    """
    marker = request.node.get_closest_marker("scenario")
    if marker is None:
        scenario: Dict[str, str] = {}
        delay_s = 0.0
    else:
        scenario = marker.args[0]
        delay_s = marker.kwargs.get("delay_s", 0.0)
    with ScenarioServer(scenario, delay_s=delay_s) as server:
        yield server


@pytest.fixture
def scenario_servers() -> Generator[Callable[..., ScenarioServer], None, None]:
    """Starts any number of mock servers, all stopped at teardown."""
    started: List[ScenarioServer] = []

    def start(scenario: Dict[str, str], delay_s: float = 0.0) -> ScenarioServer:
        server = ScenarioServer(scenario, delay_s=delay_s).start()
        started.append(server)
        return server

    yield start
    for server in started:
        server.stop()


@pytest.fixture
def endpoint_for() -> Callable[..., ModelEndpoint]:
    def make(
        server: ScenarioServer, model_id: str = "mock-omni", **kwargs
    ) -> ModelEndpoint:
        kwargs.setdefault("max_retries", 3)
        kwargs.setdefault("backoff_base_s", 0.01)
        kwargs.setdefault("timeout_s", 5.0)
        return ModelEndpoint(model_id=model_id, base_url=server.base_url, **kwargs)

    return make


@pytest.fixture
def clip_factory(tmp_path) -> Callable[..., ClipRecord]:
    """
    Writes placeholder media files and returns a `ClipRecord` pointing at
    them. Endpoint mocks never decode the media.
    """

    def make(
        video_id: str = "vid_01",
        start_ms: int = 0,
        end_ms: int = 5000,
        label: Optional[int] = None,
        with_audio: bool = True,
    ) -> ClipRecord:
        spec = ClipSpec(video_id, TimeInterval(start_ms, end_ms), label)
        folder = tmp_path / "clips" / video_id
        folder.mkdir(parents=True, exist_ok=True)
        video = folder / f"{spec.clip_id}.mp4"
        video.write_bytes(b"\x00\x00\x00\x18ftypmp42 fake video")
        audio = None
        if with_audio:
            audio_path = folder / f"{spec.clip_id}.wav"
            audio_path.write_bytes(b"RIFF fake audio")
            audio = str(audio_path)
        return ClipRecord(spec=spec, video_path=str(video), audio_path=audio)

    return make


@pytest.fixture
def write_manifest(tmp_path) -> Callable[..., Path]:
    def write(lines: List[str], name: str = "manifest.jsonl") -> Path:
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return write


@pytest.fixture
def toolchain() -> MediaToolchain:
    return MediaToolchain()


@pytest.fixture(scope="session")
def fixture_video(tmp_path_factory) -> Path:
    """A 12 s test-pattern video with a tone; only for `media` tests."""
    if not HAS_FFMPEG:
        pytest.skip("ffmpeg/ffprobe not available")
    out = tmp_path_factory.mktemp("fixtures") / "pattern_12s.mp4"
    MediaToolchain().gen_fixture(12, True, out)
    return out


class MockHTTPSessionResponse(requests.Response):
    def __init__(self, http_code) -> None:
        self.status_code = http_code
        self.reason = "'foo'"
        self.url = "http://localhost:8000/v1/chat/completions"
        self._content = b"spam"


@pytest.fixture
def mock_session_response(request, monkeypatch) -> None:
    """
    Use together with `pytest.mark.http_code` marker to pass
    specific HTTP code to be returned by `requests.Session.send`
    """
    marker = request.node.get_closest_marker("http_code")
    if marker is None:
        http_code = 200
    else:
        http_code = marker.args[0]

    def mock_api_response(*args, http_code=http_code, **kwargs):
        return MockHTTPSessionResponse(http_code=http_code)

    monkeypatch.setattr(requests.Session, "send", mock_api_response)


class MockTimeout:
    def __init__(self, *args, **kwargs) -> None:
        raise requests.exceptions.Timeout


class MockConnectionError:
    def __init__(self, *args, **kwargs) -> None:
        raise requests.exceptions.ConnectionError


class MockRetryError:
    def __init__(self, *args, **kwargs) -> None:
        raise requests.exceptions.RetryError


class MockUnexpectedException:
    def __init__(self, *args, **kwargs) -> None:
        raise Exception


@pytest.fixture
def mock_timeout(monkeypatch) -> None:
    monkeypatch.setattr("requests.Session.send", MockTimeout)


@pytest.fixture
def mock_connection_error(monkeypatch) -> None:
    monkeypatch.setattr("requests.Session.send", MockConnectionError)


@pytest.fixture
def mock_retry_error(monkeypatch) -> None:
    monkeypatch.setattr("requests.Session.send", MockRetryError)


@pytest.fixture
def mock_unexpected_error(monkeypatch) -> None:
    monkeypatch.setattr("requests.Session.send", MockUnexpectedException)


@pytest.fixture
def stub_session() -> Generator[ChatSession, None, None]:
    with ChatSession("http://localhost:8000/v1") as session:
        yield session


@pytest.fixture
def stub_retry_session() -> Generator[ChatSession, None, None]:
    with ChatSession(
        "http://127.0.0.1:9/v1",
        timeout=0.5,
        totalRetries=2,
        backoffFactor=0.01,
    ) as session:
        yield session
