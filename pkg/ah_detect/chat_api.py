# -*- coding: utf-8 -*-

"""Chat-completions session for multimodal model endpoints."""

from typing import Any, Callable, Dict, List, Optional

from requests import Request, Response

from ._session import EndpointSession
from .query import Query


class ChatSession(EndpointSession):
    """
    The `ChatSession` class talks to an OpenAI-compatible chat-completions
    API that accepts video and audio content parts (vLLM and similar serving
    stacks).

    `ChatSession` inherits attributes and methods from `requests.Session`
    and `EndpointSession`.
    """

    def _url_chat_completions(self) -> str:
        return f"{self.base_url}/chat/completions"

    def chat_completion(
        self,
        model: str,
        messages: List[Dict[str, Any]],
        temperature: float = 0.0,
        max_tokens: int = 16,
        requestId: Optional[str] = None,
        hooks: Optional[Dict[str, Callable]] = None,
    ) -> Response:
        """
        Send a POST request for one chat completion.

        Uses /chat/completions endpoint.

        Args:
            model:
                Model name as known to the serving API.
            messages:
                Chat messages with text and media content parts.
            temperature:
                Sampling temperature; 0 keeps answers deterministic.
            max_tokens:
                Cap on generated tokens.
            requestId:
                Value for the `X-Clip-Id` header, so server logs and scripted
                mocks can tell clips apart.
            hooks:
                Requests library hook system that can be used for signal event
                handling. For more information see the [Requests docs](https://requests.
                readthedocs.io/en/master/user/advanced/#event-hooks)

        Returns:
            `requests.Response` instance
        """
        url = self._url_chat_completions()
        header = {"Accept": "application/json"}
        if requestId:
            header["X-Clip-Id"] = requestId
        body = {
            "model": model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        }

        # prep request
        req = Request("POST", url, json=body, headers=header, hooks=hooks)
        prepared_request = self.prepare_request(req)

        # send request
        query = Query(self, prepared_request, timeout=self.timeout)

        return query.response

