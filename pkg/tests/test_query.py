# -*- coding: utf-8 -*-
from contextlib import nullcontext as does_not_raise

import pytest

from requests import Request

from ah_detect.errors import EndpointError, TransportError
from ah_detect.query import Query


def test_query_not_prepared_request(stub_session):
    with pytest.raises(TypeError) as exc:
        req = Request("POST", "http://localhost:8000/v1/chat/completions")
        Query(stub_session, req, timeout=2)
    assert "Invalid type for argument 'prepared_request'." in str(exc.value)


@pytest.mark.http_code(200)
def test_query_http_200_response(stub_session, mock_session_response):
    with does_not_raise():
        req = Request("POST", "http://localhost:8000/v1/chat/completions")
        prepped = stub_session.prepare_request(req)
        query = Query(stub_session, prepped)
        assert query.response.status_code == 200


@pytest.mark.http_code(400)
def test_query_http_400_response(stub_session, mock_session_response):
    req = Request("POST", "http://localhost:8000/v1/chat/completions")
    prepped = stub_session.prepare_request(req)

    with pytest.raises(EndpointError) as exc:
        Query(stub_session, prepped)

    assert (
        "400 Client Error: 'foo' for url: http://localhost:8000/v1/chat/completions. "
        "Server response: spam" in str(exc.value)
    )
    assert exc.value.status_code == 400


@pytest.mark.http_code(503)
def test_query_http_503_response(stub_session, mock_session_response):
    req = Request("POST", "http://localhost:8000/v1/chat/completions")
    prepped = stub_session.prepare_request(req)
    with pytest.raises(EndpointError) as exc:
        Query(stub_session, prepped)

    assert "503 Server Error" in str(exc.value)
    assert exc.value.status_code == 503


def test_query_timeout_exception(stub_session, mock_timeout):
    req = Request("POST", "http://localhost:8000/v1/chat/completions")
    prepped = stub_session.prepare_request(req)
    with pytest.raises(TransportError) as exc:
        Query(stub_session, prepped)

    assert "Connection Error: <class 'requests.exceptions.Timeout'>" in str(exc.value)


def test_query_connection_exception(stub_session, mock_connection_error):
    req = Request("POST", "http://localhost:8000/v1/chat/completions")
    prepped = stub_session.prepare_request(req)
    with pytest.raises(TransportError) as exc:
        Query(stub_session, prepped)

    assert "Connection Error: <class 'requests.exceptions.ConnectionError'>" in str(
        exc.value
    )


def test_query_retry_exception(stub_session, mock_retry_error):
    req = Request("POST", "http://localhost:8000/v1/chat/completions")
    prepped = stub_session.prepare_request(req)
    with pytest.raises(TransportError) as exc:
        Query(stub_session, prepped)

    assert "Retries exhausted" in str(exc.value)


def test_query_unexpected_exception(stub_session, mock_unexpected_error):
    req = Request("POST", "http://localhost:8000/v1/chat/completions")
    prepped = stub_session.prepare_request(req)
    with pytest.raises(TransportError) as exc:
        Query(stub_session, prepped)

    assert "Unexpected request error: <class 'Exception'>" in str(exc.value)


def test_query_connection_refused_with_retries(stub_retry_session, caplog):
    req = Request("POST", f"{stub_retry_session.base_url}/chat/completions")
    prepped = stub_retry_session.prepare_request(req)
    with pytest.raises(TransportError):
        Query(stub_retry_session, prepped, timeout=0.5)

    retry_logs = [r.message for r in caplog.records if "Retry(total=" in r.message]
    assert len(retry_logs) == 2
