"""Sender side of inter-function data passing.

While the platform scales the target up, the source node's sidecar waits
for the scheduler to name the target's host and pushes the payload straight
into that host's buffer, so the bytes are there by the time the function
finishes its cold start.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional

from truffle import wire
from truffle.errors import GatewayTimeout, SchedulingTimeout, TransportError, TruffleError
from truffle.watcher import Watcher

log = logging.getLogger(__name__)


@dataclass
class TransferReport:
    target_function: str
    reference_key: str
    host: Optional[str] = None
    wait_ms: float = 0.0
    transfer_ms: float = 0.0
    bytes: int = 0
    attempts: int = 0
    ok: bool = False
    error: str = ""


class PeerRejected(TruffleError):
    def __init__(self, response: wire.Response):
        super().__init__(f"peer answered {response.status} {response.error or ''}".strip())
        self.response = response


class ColdStartPass:
    def __init__(
        self,
        watcher: Watcher,
        transport: wire.Transport,
        schedule_timeout_ms: float = 120_000,
        transfer_timeout_ms: Optional[float] = None,
    ):
        self.watcher = watcher
        self.transport = transport
        self.schedule_timeout_ms = schedule_timeout_ms
        self.transfer_timeout_ms = transfer_timeout_ms

    def call_target_host_truffle(self, host_address: str, reference_key: str, payload: bytes) -> wire.Response:
        resp = self.transport.request(
            host_address,
            "POST",
            f"/truffle/transfer/{wire.path_segment(reference_key)}",
            {"Content-Type": "application/octet-stream"},
            payload,
            self.transfer_timeout_ms,
        )
        if not resp.ok:
            raise PeerRejected(resp)
        return resp

    def initiate_pass(self, target_function: str, reference_key: str, payload: bytes,
                      host: Optional[str] = None) -> TransferReport:
        """Wait for the target's host, then ship ``payload`` to its buffer.

        One retry on a failed transfer. Never raises; the report says what happened.
        """
        report = TransferReport(target_function, reference_key, bytes=len(payload))
        started = time.monotonic()
        if host is None:
            try:
                host = self.watcher.wait_for_host(target_function, self.schedule_timeout_ms)
            except SchedulingTimeout as exc:
                report.wait_ms = (time.monotonic() - started) * 1000
                report.error = str(exc)
                log.warning("pass %s aborted: %s", reference_key, exc)
                return report
        report.host = host
        report.wait_ms = (time.monotonic() - started) * 1000

        sent = time.monotonic()
        for attempt in (1, 2):
            report.attempts = attempt
            try:
                self.call_target_host_truffle(host, reference_key, payload)
                report.ok = True
                report.error = ""
                break
            except (PeerRejected, TransportError, GatewayTimeout) as exc:
                report.error = str(exc)
                log.info("transfer %s to %s failed (attempt %d): %s", reference_key, host, attempt, exc)
        report.transfer_ms = (time.monotonic() - sent) * 1000
        return report
