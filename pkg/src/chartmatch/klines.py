"""Historical kline downloader for the exchange REST API.

Pages through the public GET kline endpoint (1000 bars per request),
retries transport failures and rate-limit responses with exponential
backoff, and assembles the rows into a validated CandleSeries.

The base URL can be overridden with the CHARTMATCH_KLINES_BASE_URL
environment variable (used by the tests to point at a local mock server).
"""

from __future__ import annotations

import logging
import os
import time
from typing import Callable

import requests

from .errors import RemoteError, SeriesError, TransportError
from .market_data import Candle, CandleSeries

logger = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://api.binance.com"
BASE_URL_ENV = "CHARTMATCH_KLINES_BASE_URL"
KLINES_PATH = "/api/v3/klines"

MAX_BARS_PER_REQUEST = 1000

# Exchange interval tokens by bar length in ms.
INTERVAL_TOKENS = {
    60_000: "1m", 180_000: "3m", 300_000: "5m", 900_000: "15m", 1_800_000: "30m",
    3_600_000: "1h", 7_200_000: "2h", 14_400_000: "4h", 21_600_000: "6h",
    28_800_000: "8h", 43_200_000: "12h", 86_400_000: "1d",
}

RETRYABLE_STATUS = {418, 429, 500, 502, 503, 504}


def base_url() -> str:
    return os.environ.get(BASE_URL_ENV, DEFAULT_BASE_URL).rstrip("/")


def fetch_klines(symbol: str, interval_ms: int, start: int, end: int,
                 gap_policy: str = "error", max_retries: int = 5,
                 timeout: float = 30.0, session: requests.Session | None = None,
                 sleep: Callable[[float], None] = time.sleep,
                 now_ms: Callable[[], int] | None = None) -> CandleSeries:
    """Download the complete series of bars with open time in [start, end).

    A still-open final bar (its interval not yet elapsed) is dropped.
    Raises TransportError after exhausting retries, RemoteError on an
    exchange error payload, SeriesError if the assembled rows do not form
    a valid series under ``gap_policy``.
    """
    if start >= end:
        raise ValueError(f"empty fetch range: start {start} >= end {end}")
    if interval_ms not in INTERVAL_TOKENS:
        raise ValueError(f"unsupported interval {interval_ms} ms")
    token = INTERVAL_TOKENS[interval_ms]
    own_session = session is None
    session = session or requests.Session()
    now = now_ms or (lambda: int(time.time() * 1000))

    candles: list[Candle] = []
    cursor = start
    requests_made = 0
    try:
        while cursor < end:
            rows = _request_page(session, symbol, token, cursor, end - 1, max_retries,
                                 timeout, sleep)
            requests_made += 1
            if not rows:
                break
            for row in rows:
                open_time = int(row[0])
                if open_time >= end:
                    break
                candles.append(Candle(open_time, float(row[1]), float(row[2]),
                                      float(row[3]), float(row[4]), float(row[5])))
            last_open = int(rows[-1][0])
            next_cursor = last_open + interval_ms
            if next_cursor <= cursor:
                raise RemoteError(f"kline page did not advance past {cursor}")
            cursor = next_cursor
            if len(rows) < MAX_BARS_PER_REQUEST:
                break
    finally:
        if own_session:
            session.close()
    logger.info("fetched %d bars of %s %s in %d request(s)",
                len(candles), symbol, token, requests_made)

    # Drop a final bar whose interval has not elapsed yet.
    while candles and candles[-1].open_time + interval_ms > now():
        candles.pop()
    return CandleSeries(candles, interval_ms=interval_ms, gap_policy=gap_policy)


def _request_page(session: requests.Session, symbol: str, token: str, start: int,
                  end_inclusive: int, max_retries: int, timeout: float,
                  sleep: Callable[[float], None]) -> list:
    params = {
        "symbol": symbol,
        "interval": token,
        "startTime": start,
        "endTime": end_inclusive,
        "limit": MAX_BARS_PER_REQUEST,
    }
    url = base_url() + KLINES_PATH
    last_failure = "no attempt made"
    for attempt in range(max_retries + 1):
        if attempt:
            sleep(min(0.5 * 2 ** (attempt - 1), 8.0))
        try:
            response = session.get(url, params=params, timeout=timeout)
        except requests.RequestException as exc:
            last_failure = f"transport failure: {exc}"
            logger.warning("kline request failed (attempt %d/%d): %s",
                           attempt + 1, max_retries + 1, exc)
            continue
        if response.status_code in RETRYABLE_STATUS:
            last_failure = f"HTTP {response.status_code}"
            retry_after = response.headers.get("Retry-After")
            if retry_after:
                try:
                    sleep(min(float(retry_after), 30.0))
                except ValueError:
                    pass
            continue
        payload = _decode_payload(response)
        if isinstance(payload, dict):
            # Exchange error payloads are objects with code/msg.
            raise RemoteError(f"exchange error {payload.get('code')}: {payload.get('msg')}")
        if not isinstance(payload, list):
            raise RemoteError(f"unexpected kline payload type {type(payload).__name__}")
        return payload
    raise TransportError(f"kline request failed after {max_retries + 1} attempts "
                         f"({last_failure})")


def _decode_payload(response: requests.Response):
    try:
        payload = response.json()
    except ValueError as exc:
        raise RemoteError(f"undecodable kline response (HTTP {response.status_code})") from exc
    if response.status_code >= 400 and not isinstance(payload, dict):
        raise RemoteError(f"HTTP {response.status_code}")
    return payload


def expected_bar_count(start: int, end: int, interval_ms: int) -> int:
    """Number of grid slots in [start, end); actual history may have holes."""
    if start >= end:
        return 0
    return (end - start + interval_ms - 1) // interval_ms
