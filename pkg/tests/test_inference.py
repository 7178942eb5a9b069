# -*- coding: utf-8 -*-

import base64
import json
import os

import pytest

from ah_detect.chat_api import ChatSession
from ah_detect.dataset import get_prompt
from ah_detect.errors import DomainError, EndpointError, TransportError
from ah_detect.inference import (
    MODEL_INDEX,
    ClipFailure,
    ClipPrediction,
    ModelEndpoint,
    PredictionSet,
    Verdict,
    build_messages,
    model_filename,
    model_id_from_filename,
    model_ids_in,
    parse_answer,
    predict_clip,
    read_predictions,
    run_batch,
    write_model_index,
    write_predictions,
)

from .mock_server import ScenarioServer

PROMPT = get_prompt("v1")


class TestParseAnswer:
    @pytest.mark.parametrize(
        "text,expectation",
        [
            ("<answer>Yes</answer>", Verdict.POSITIVE),
            ("<answer>No</answer>", Verdict.NEGATIVE),
            ("<ANSWER> yes </ANSWER>", Verdict.POSITIVE),
            ("<answer>\nNO\n</answer>", Verdict.NEGATIVE),
            ("I think <answer>Yes</answer> because of the pause.", Verdict.POSITIVE),
            ("<answer>No</answer><answer>Yes</answer>", Verdict.NEGATIVE),
            ("<answer>Maybe</answer>", Verdict.ABSTAIN),
            ("<answer>Yes, mostly</answer>", Verdict.ABSTAIN),
            ("<answer></answer>", Verdict.ABSTAIN),
            ("Yes", Verdict.ABSTAIN),
            ("<answer>Yes", Verdict.ABSTAIN),
            ("", Verdict.ABSTAIN),
            (None, Verdict.ABSTAIN),
        ],
    )
    def test_parse_answer(self, text, expectation):
        assert parse_answer(text) is expectation

    @pytest.mark.parametrize("verdict", [Verdict.POSITIVE, Verdict.NEGATIVE])
    def test_render_parses_back(self, verdict):
        assert parse_answer(verdict.render()) is verdict

    def test_abstain_renders_empty(self):
        assert Verdict.ABSTAIN.render() == ""
        assert parse_answer(Verdict.ABSTAIN.render()) is Verdict.ABSTAIN


class TestModelEndpoint:
    @pytest.mark.parametrize(
        "kwargs,msg",
        [
            ({"model_id": ""}, "Endpoint 'model_id' cannot be empty."),
            ({"max_retries": -1}, "Endpoint 'max_retries' must be 0 or greater."),
            ({"media_mode": "s3"}, "Endpoint 'media_mode' must be one of"),
        ],
    )
    def test_invalid(self, kwargs, msg):
        params = {"model_id": "omni", "base_url": "http://localhost:8000/v1"}
        params.update(kwargs)
        with pytest.raises(DomainError) as exc:
            ModelEndpoint(**params)
        assert msg in str(exc.value)

    def test_open_session(self, monkeypatch):
        monkeypatch.setenv("OMNI_TOKEN", "secret")
        endpoint = ModelEndpoint(
            "omni",
            "http://localhost:8000/v1/",
            auth_token_env="OMNI_TOKEN",
            timeout_s=7.5,
            max_retries=2,
        )
        with endpoint.open_session(pool_size=3) as session:
            assert session.base_url == "http://localhost:8000/v1"
            assert session.timeout == 7.5
            assert session.headers["Authorization"] == "Bearer secret"
            adapter = session.get_adapter("http://localhost:8000/v1")
            assert adapter.max_retries.total == 2


class TestBuildMessages:
    def test_inline(self, clip_factory):
        clip = clip_factory()
        messages = build_messages(clip, PROMPT, "inline")
        assert len(messages) == 1
        parts = messages[0]["content"]
        assert [p["type"] for p in parts] == ["video_url", "audio_url", "text"]
        prefix = "data:video/mp4;base64,"
        url = parts[0]["video_url"]["url"]
        assert url.startswith(prefix)
        with open(clip.video_path, "rb") as fh:
            assert base64.b64decode(url[len(prefix) :]) == fh.read()
        assert parts[1]["audio_url"]["url"].startswith("data:audio/wav;base64,")
        assert parts[2]["text"] == PROMPT.text

    def test_url_without_audio(self, clip_factory):
        clip = clip_factory(with_audio=False)
        parts = build_messages(clip, PROMPT, "url")[0]["content"]
        assert [p["type"] for p in parts] == ["video_url", "text"]
        assert parts[0]["video_url"]["url"].startswith("file:///")

    def test_missing_media(self, clip_factory, tmp_path):
        clip = clip_factory()
        (tmp_path / "clips" / clip.video_id / f"{clip.clip_id}.wav").unlink()
        with pytest.raises(FileNotFoundError):
            build_messages(clip, PROMPT)


class TestPredictClip:
    @pytest.mark.scenario({"vid_01:0-5000": "fail(2) <answer>Yes</answer>"})
    def test_transient_failures(
        self, mock_scenario_server, endpoint_for, clip_factory
    ):
        prediction = predict_clip(
            endpoint_for(mock_scenario_server), clip_factory(), PROMPT
        )
        assert prediction.verdict is Verdict.POSITIVE
        assert prediction.raw_text == "<answer>Yes</answer>"
        assert prediction.model_id == "mock-omni"
        assert prediction.latency_ms >= 0
        assert mock_scenario_server.hits["vid_01:0-5000"] == 3

    @pytest.mark.scenario({"*": "maybe"})
    def test_abstain(self, mock_scenario_server, endpoint_for, clip_factory, caplog):
        caplog.set_level("INFO", logger="ah_detect")
        prediction = predict_clip(
            endpoint_for(mock_scenario_server), clip_factory(), PROMPT
        )
        assert prediction.verdict is Verdict.ABSTAIN
        assert prediction.raw_text == "maybe"
        assert "no well-formed answer" in caplog.text

    @pytest.mark.scenario({"*": "fail(*)"})
    def test_retries_exhausted(
        self, mock_scenario_server, endpoint_for, clip_factory
    ):
        endpoint = endpoint_for(mock_scenario_server, max_retries=2)
        with pytest.raises(TransportError) as exc:
            predict_clip(endpoint, clip_factory(), PROMPT)
        assert "Retries exhausted" in str(exc.value)
        assert mock_scenario_server.hits["vid_01:0-5000"] == 3

    def test_scenario_file(self, endpoint_for, clip_factory, tmp_path):
        scenario_file = tmp_path / "scenario.json"
        scenario_file.write_text(
            json.dumps({"vid_01:0-5000": "fail(1) <answer>Yes</answer>"}),
            encoding="utf-8",
        )
        with ScenarioServer.from_file(scenario_file) as server:
            yes = predict_clip(endpoint_for(server), clip_factory(), PROMPT)
            no = predict_clip(
                endpoint_for(server), clip_factory(start_ms=5000, end_ms=10000), PROMPT
            )
        assert yes.verdict is Verdict.POSITIVE
        assert no.verdict is Verdict.NEGATIVE
        assert server.hits["vid_01:0-5000"] == 2

    def test_invalid_scenario_file(self, tmp_path):
        scenario_file = tmp_path / "scenario.json"
        scenario_file.write_text(json.dumps({"vid_01:0-5000": 1}), encoding="utf-8")
        with pytest.raises(ValueError) as exc:
            ScenarioServer.from_file(scenario_file)
        assert "must map clip ids to strings" in str(exc.value)

    @pytest.mark.scenario({"*": "<answer>No</answer>"})
    def test_request_body(self, mock_scenario_server, endpoint_for, clip_factory):
        endpoint = endpoint_for(mock_scenario_server, max_tokens=4)
        predict_clip(endpoint, clip_factory(with_audio=False), PROMPT)
        body = mock_scenario_server.requests[0]["body"]
        assert body["model"] == "mock-omni"
        assert body["temperature"] == 0.0
        assert body["max_tokens"] == 4

    @pytest.mark.parametrize(
        "body",
        [
            {"choices": []},
            {"choices": [{"message": None}]},
            {"choices": [{"message": "Yes"}]},
            {"choices": None},
            [],
        ],
    )
    def test_malformed_response(self, body, mocker, clip_factory, stub_session):
        response = mocker.Mock(status_code=200)
        response.json.return_value = body
        mocker.patch.object(stub_session, "chat_completion", return_value=response)
        endpoint = ModelEndpoint("omni", stub_session.base_url)
        with pytest.raises(EndpointError) as exc:
            predict_clip(endpoint, clip_factory(), PROMPT, session=stub_session)
        assert "Malformed chat completion response." in str(exc.value)

    def test_list_content(self, mocker, clip_factory, stub_session):
        response = mocker.Mock(status_code=200)
        response.json.return_value = {
            "choices": [
                {
                    "message": {
                        "content": [
                            {"type": "text", "text": "<answer>"},
                            {"type": "text", "text": "Yes</answer>"},
                        ]
                    }
                }
            ]
        }
        mocker.patch.object(stub_session, "chat_completion", return_value=response)
        endpoint = ModelEndpoint("omni", stub_session.base_url)
        prediction = predict_clip(endpoint, clip_factory(), PROMPT, stub_session)
        assert prediction.verdict is Verdict.POSITIVE


class TestRunBatch:
    @staticmethod
    def clips(clip_factory, count=4):
        return [
            clip_factory(f"vid_{i:02d}", 0, 5000 if i % 2 else 4290)
            for i in range(count)
        ]

    @pytest.mark.scenario({"*": "<answer>Yes</answer>"})
    def test_single_endpoint(
        self, mock_scenario_server, endpoint_for, clip_factory
    ):
        clips = self.clips(clip_factory)
        result = run_batch(clips, [endpoint_for(mock_scenario_server)], PROMPT)
        assert result.prediction_count == 4
        assert result.failures == []
        assert set(result.predictions["mock-omni"]) == {c.clip_id for c in clips}
        assert all(
            p.verdict is Verdict.POSITIVE
            for p in result.predictions["mock-omni"].values()
        )

    def test_three_endpoints(self, scenario_servers, endpoint_for, clip_factory):
        clips = self.clips(clip_factory)
        endpoints = [
            endpoint_for(scenario_servers({"*": text}), model_id=name)
            for name, text in [
                ("model-a", "<answer>Yes</answer>"),
                ("model-b", "<answer>No</answer>"),
                ("org/model-c", "<answer>Yes</answer>"),
            ]
        ]
        result = run_batch(clips, endpoints, PROMPT, max_in_flight=2)
        assert result.prediction_count == 12
        assert sorted(result.predictions) == ["model-a", "model-b", "org/model-c"]
        assert {
            p.verdict for p in result.predictions["model-b"].values()
        } == {Verdict.NEGATIVE}

    def test_permanent_failure_recorded(
        self, scenario_servers, endpoint_for, clip_factory
    ):
        clips = self.clips(clip_factory)
        server = scenario_servers({clips[2].clip_id: "fail(*)"})
        endpoint = endpoint_for(server, max_retries=1)
        result = run_batch(clips, [endpoint], PROMPT)
        assert result.prediction_count == 3
        assert clips[2].clip_id not in result.predictions["mock-omni"]
        assert len(result.failures) == 1
        failure = result.failures[0]
        assert (failure.clip_id, failure.model_id) == (clips[2].clip_id, "mock-omni")

    def test_missing_media_recorded(
        self, scenario_servers, endpoint_for, clip_factory
    ):
        clip = clip_factory()
        os.remove(clip.video_path)
        result = run_batch([clip], [endpoint_for(scenario_servers({}))], PROMPT)
        assert result.prediction_count == 0
        assert result.failures[0].error == "FileNotFoundError"

    def test_malformed_response_recorded(self, mocker, clip_factory):
        response = mocker.Mock(status_code=200)
        response.json.return_value = {"choices": [{"message": None}]}
        mocker.patch.object(ChatSession, "chat_completion", return_value=response)
        clips = self.clips(clip_factory, count=2)
        endpoint = ModelEndpoint("omni", "http://localhost:8000/v1")
        result = run_batch(clips, [endpoint], PROMPT)
        assert result.prediction_count == 0
        assert [f.error for f in result.failures] == ["EndpointError"] * 2

    def test_unexpected_error_recorded(self, mocker, clip_factory, caplog):
        mocker.patch.object(
            ChatSession, "chat_completion", side_effect=RuntimeError("boom")
        )
        clips = self.clips(clip_factory, count=3)
        endpoints = [
            ModelEndpoint("model-a", "http://localhost:8000/v1"),
            ModelEndpoint("model-b", "http://localhost:8001/v1"),
        ]
        result = run_batch(clips, endpoints, PROMPT)
        assert result.prediction_count == 0
        assert len(result.failures) == 6
        assert all(f.error == "RuntimeError" for f in result.failures)
        assert all(f.detail == "boom" for f in result.failures)
        assert "Traceback" in caplog.text

    def test_backpressure(self, scenario_servers, endpoint_for, clip_factory):
        server = scenario_servers({}, delay_s=0.1)
        clips = [clip_factory("vid_bp", i * 1000, (i + 1) * 1000) for i in range(10)]
        result = run_batch(clips, [endpoint_for(server)], PROMPT, max_in_flight=3)
        assert result.prediction_count == 10
        assert 1 <= server.peak_in_flight <= 3

    @pytest.mark.parametrize("max_in_flight", [0, -2])
    def test_invalid_max_in_flight(self, max_in_flight, clip_factory):
        with pytest.raises(DomainError):
            run_batch([clip_factory()], [], PROMPT, max_in_flight=max_in_flight)

    def test_duplicate_clip_ids(self, clip_factory):
        clip = clip_factory()
        with pytest.raises(DomainError) as exc:
            run_batch([clip, clip], [], PROMPT)
        assert "Clip ids in a batch must be unique." in str(exc.value)

    def test_duplicate_model_ids(self, clip_factory):
        endpoint = ModelEndpoint("omni", "http://localhost:8000/v1")
        with pytest.raises(DomainError):
            run_batch([clip_factory()], [endpoint, endpoint], PROMPT)

    def test_model_ids_sharing_a_file_name(self, clip_factory):
        endpoints = [
            ModelEndpoint("org/omni", "http://localhost:8000/v1"),
            ModelEndpoint("org__omni", "http://localhost:8001/v1"),
        ]
        with pytest.raises(DomainError) as exc:
            run_batch([clip_factory()], endpoints, PROMPT)
        assert "distinct file names" in str(exc.value)


class TestPredictionFiles:
    @pytest.mark.parametrize(
        "model_id,stem",
        [("omni", "omni"), ("Qwen/Qwen2.5-Omni-7B", "Qwen__Qwen2.5-Omni-7B")],
    )
    def test_model_filename(self, model_id, stem):
        assert model_filename(model_id) == stem
        assert model_id_from_filename(stem) == model_id

    def test_write_and_read(self, tmp_path):
        prediction_set = PredictionSet(
            predictions={
                "org/omni": {
                    "v:5000-10000": ClipPrediction(
                        "v:5000-10000", "org/omni", Verdict.ABSTAIN, "hmm", 12
                    ),
                    "v:0-5000": ClipPrediction(
                        "v:0-5000",
                        "org/omni",
                        Verdict.POSITIVE,
                        "<answer>Yes</answer>",
                        9,
                    ),
                }
            },
            failures=[ClipFailure("w:0-5000", "org/omni", "TransportError", "down")],
        )
        write_predictions(prediction_set, tmp_path)

        written = (tmp_path / "org__omni.jsonl").read_text(encoding="utf-8")
        lines = written.splitlines()
        assert [line.split(",")[0] for line in lines] == [
            '{"clip_id": "v:0-5000"',
            '{"clip_id": "v:5000-10000"',
        ]
        assert read_predictions(tmp_path, ["org/omni"]) == prediction_set

    def test_read_without_failures(self, tmp_path):
        write_predictions(PredictionSet(predictions={"omni": {}}), tmp_path)
        (tmp_path / "failures.jsonl").unlink()
        result = read_predictions(tmp_path, ["omni"])
        assert result.predictions == {"omni": {}}
        assert result.failures == []

    def test_model_index(self, tmp_path):
        prediction_set = PredictionSet(predictions={"team__omni": {}, "org/omni": {}})
        write_predictions(prediction_set, tmp_path)
        assert model_ids_in(tmp_path, exclude=["failures"]) == {
            "org__omni": "org/omni",
            "team__omni": "team__omni",
        }

    def test_model_ids_without_index(self, tmp_path):
        (tmp_path / "org__omni.jsonl").write_text("", encoding="utf-8")
        assert model_ids_in(tmp_path) == {"org__omni": "org/omni"}

    def test_model_index_collision(self, tmp_path):
        with pytest.raises(DomainError) as exc:
            write_model_index(["org/omni", "org__omni"], tmp_path)
        assert "share the file name 'org__omni.jsonl'" in str(exc.value)
        assert not (tmp_path / MODEL_INDEX).exists()
