import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np
import pytest

from chartmatch.market_data import INTERVAL_4H_MS, Candle, CandleSeries

BASE_TS = 1_599_998_400_000  # multiple of 4h so the mock server grid lines up


def make_series(n, start=BASE_TS, interval=INTERVAL_4H_MS, seed=0, base_price=20000.0):
    """Random-walk series with realistic OHLC relationships."""
    rng = np.random.default_rng(seed)
    candles = []
    close = base_price
    for i in range(n):
        opn = close
        close = opn * float(np.exp(rng.normal(0, 0.01)))
        hi = max(opn, close) * float(1 + abs(rng.normal(0, 0.004)))
        lo = min(opn, close) * float(1 - abs(rng.normal(0, 0.004)))
        vol = float(rng.uniform(50, 500))
        candles.append(Candle(start + i * interval, opn, hi, lo, close, vol))
    return CandleSeries(candles, interval_ms=interval)


def synthetic_kline_row(open_time, interval_ms, seed=0):
    """Deterministic kline row (array-of-arrays schema) for the mock server."""
    rng = np.random.default_rng(seed + open_time // interval_ms)
    opn = 20000 + 100 * float(np.sin(open_time / 1e9))
    close = opn * float(1 + rng.normal(0, 0.005))
    hi = max(opn, close) * 1.002
    lo = min(opn, close) * 0.998
    vol = float(rng.uniform(10, 100))
    close_time = open_time + interval_ms - 1
    return [open_time, f"{opn:.2f}", f"{hi:.2f}", f"{lo:.2f}", f"{close:.2f}",
            f"{vol:.4f}", close_time, "0", 0, "0", "0", "0"]


class MockKlineServer:
    """Tiny in-process stand-in for the exchange kline endpoint."""

    def __init__(self):
        self.request_log = []
        self.fail_next = []       # queue of status codes to serve before real data
        self.missing_open_times = set()
        self.interval_ms = INTERVAL_4H_MS
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                parsed = urlparse(self.path)
                if parsed.path != "/api/v3/klines":
                    self.send_response(404)
                    self.end_headers()
                    return
                qs = {k: v[0] for k, v in parse_qs(parsed.query).items()}
                outer.request_log.append(qs)
                if outer.fail_next:
                    status = outer.fail_next.pop(0)
                    body = json.dumps({"code": -1003, "msg": "try later"}).encode()
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.end_headers()
                    self.wfile.write(body)
                    return
                if qs.get("symbol") == "NOPE":
                    body = json.dumps({"code": -1121, "msg": "Invalid symbol."}).encode()
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.end_headers()
                    self.wfile.write(body)
                    return
                start = int(qs["startTime"])
                end = int(qs["endTime"])
                limit = int(qs.get("limit", 500))
                step = outer.interval_ms
                first = ((start + step - 1) // step) * step
                rows = []
                t = first
                while t <= end and len(rows) < limit:
                    if t not in outer.missing_open_times:
                        rows.append(synthetic_kline_row(t, step))
                    t += step
                body = json.dumps(rows).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.end_headers()
                self.wfile.write(body)

        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def kline_server(monkeypatch):
    server = MockKlineServer()
    monkeypatch.setenv("CHARTMATCH_KLINES_BASE_URL", server.url)
    yield server
    server.stop()
