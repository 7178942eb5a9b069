# -*- coding: utf-8 -*-

"""Sends requests to model endpoints and unifies exceptions."""

from typing import Union, Tuple
import sys

import requests
from requests import PreparedRequest
from requests.exceptions import ConnectionError, HTTPError, Timeout, RetryError

from .errors import EndpointError, TransportError


class Query:
    """Sends a request to a model endpoint and unifies exceptions.

    `Query.response` attribute is a
    [`requests.Response`](https://requests.readthedocs.io/en/latest/api/#requests.Response)
    instance; retries configured on the session happen before it is set.
    """

    def __init__(
        self,
        session: requests.Session,
        prepared_request: PreparedRequest,
        timeout: Union[int, float, Tuple[int, int], Tuple[float, float], None] = 60,
    ) -> None:
        """Initializes Query object.

        Args:
            session:
                `requests.Session` instance, usually an `EndpointSession`.
            prepared_request:
                `requests.PreparedRequest` instance.
            timeout:
                How long to wait for server to send data before giving up. Accepts
                separate values for connect and read timeouts or a single value.

        Raises:
            EndpointError:
                If the endpoint answers with an HTTP error status.
            TransportError:
                If the endpoint cannot be reached or retries are exhausted.
            TypeError:
                If `prepared_request` arg is passed anything other than a
                `requests.PreparedRequest` object.
        """
        if not isinstance(prepared_request, PreparedRequest):
            raise TypeError("Invalid type for argument 'prepared_request'.")

        try:
            self.response = session.send(prepared_request, timeout=timeout)
            self.response.raise_for_status()

        except HTTPError as exc:
            raise EndpointError(
                f"{exc}. Server response: "
                f"{self.response.content.decode('utf-8', errors='replace')[:500]}",
                status_code=self.response.status_code,
            )
        except RetryError as exc:
            raise TransportError(f"Retries exhausted: {exc}")
        except (Timeout, ConnectionError):
            raise TransportError(f"Connection Error: {sys.exc_info()[0]}")

        except Exception:
            raise TransportError(f"Unexpected request error: {sys.exc_info()[0]}")
