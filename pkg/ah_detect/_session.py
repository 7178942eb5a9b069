# -*- coding: utf-8 -*-

"""
Base session bound to one model endpoint.
"""

import os
import random
from itertools import takewhile
from typing import List, Optional, Union

import requests
from urllib3.util import Retry

from . import __title__, __version__
from .errors import ConfigError

# statuses treated as transient and retried with backoff
RETRY_STATUSES = [429, 500, 502, 503, 504]


class JitteredRetry(Retry):
    """
    `urllib3` retry policy with full-jitter exponential backoff.

    The n-th retry sleeps a uniform random time in
    `[0, backoff_factor * 2 ** (n - 1)]`, capped by `backoff_max`.
    """

    def get_backoff_time(self) -> float:
        errors = len(
            list(
                takewhile(lambda x: x.redirect_location is None, reversed(self.history))
            )
        )
        if errors == 0 or self.backoff_factor == 0:
            return 0.0
        ceiling = min(
            getattr(self, "backoff_max", 120.0),
            self.backoff_factor * (2 ** (errors - 1)),
        )
        return random.uniform(0, ceiling)


class EndpointSession(requests.Session):
    """Base class for model endpoint sessions. Inherits all `requests.Session` methods."""

    def __init__(
        self,
        base_url: str,
        auth_token_env: Optional[str] = None,
        agent: Optional[str] = None,
        timeout: float = 60.0,
        totalRetries: int = 0,
        backoffFactor: float = 0.5,
        statusForcelist: Optional[List[int]] = None,
        poolSize: int = 10,
    ) -> None:
        """
        Args:
            base_url:
                Root URL of the serving API, e.g. `http://localhost:8000/v1`.
            auth_token_env:
                Name of the environment variable holding a bearer token. No
                `Authorization` header is sent when not given.
            agent:
                `User-agent` parameter to attached to each request in the session.
            timeout:
                How long to wait for server to send data before giving up.
            totalRetries:
                Number of times to retry a request that failed on the
                transport or with a transient status.
            backoffFactor:
                Base of the full-jitter exponential backoff, in seconds.
            statusForcelist:
                HTTP status codes to retry on. Defaults to 429, 500, 502, 503
                and 504.
            poolSize:
                Connection pool size; should match the number of concurrent
                requests the session serves.
        """
        super().__init__()
        if not isinstance(base_url, str) or not base_url.strip():
            raise ValueError("Argument 'base_url' must be a non-empty string.")
        self.base_url = base_url.rstrip("/")

        if agent is None:
            self.headers.update({"User-Agent": f"{__title__}/{__version__}"})
        elif agent and isinstance(agent, str):
            self.headers.update({"User-Agent": agent})
        else:
            raise ValueError("Argument 'agent' must be a string.")

        if totalRetries < 0:
            raise ValueError("Argument 'totalRetries' must be 0 or greater.")

        if statusForcelist is None:
            statusForcelist = RETRY_STATUSES
        elif not (
            isinstance(statusForcelist, list)
            and all(isinstance(x, int) for x in statusForcelist)
            and len(statusForcelist) > 0
        ):
            raise ValueError("Argument 'statusForcelist' must be a list of integers.")

        self.timeout = timeout

        # without retries a transient status surfaces as a plain HTTP error
        retries: Union[int, Retry] = 0
        if totalRetries != 0:
            retries = JitteredRetry(
                total=totalRetries,
                backoff_factor=backoffFactor,
                status_forcelist=statusForcelist,
                allowed_methods=None,
                raise_on_status=True,
            )
        adapter = requests.adapters.HTTPAdapter(
            max_retries=retries, pool_connections=1, pool_maxsize=poolSize
        )
        self.mount("http://", adapter)
        self.mount("https://", adapter)

        self._update_authorization(auth_token_env)

    def _update_authorization(self, auth_token_env: Optional[str]) -> None:
        if not auth_token_env:
            return
        token = os.environ.get(auth_token_env)
        if not token:
            raise ConfigError(
                f"Environment variable '{auth_token_env}' with the endpoint "
                "token is not set."
            )
        self.headers.update({"Authorization": f"Bearer {token}"})
