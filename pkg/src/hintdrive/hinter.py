"""Pluggable hint providers.

A provider turns a HintContext into raw (unvalidated) attribute weights. The
deterministic rule-based mock is the hermetic default and the test oracle;
the fault injector corrupts its output to exercise the downstream guard; the
remote client speaks a newline-delimited JSON protocol over a stream socket
and maps every failure mode to "no response" (None), never to a crash.

Remote protocol (version 1), one JSON object per line:
  request:  {"v": 1, "query": str, "fragments": [str], "digest": [13 floats],
             "deadline_ms": float}
  response: {"v": 1, "weights": [w_safety, w_efficiency, w_comfort]}
"""

from __future__ import annotations

import json
import logging
import os
import socket
import time
from dataclasses import dataclass

from .anchor import N_ATTRIBUTES, HintContext

log = logging.getLogger(__name__)

ENDPOINT_ENV = "HINTDRIVE_REMOTE_ENDPOINT"
PROTOCOL_VERSION = 1
DEFAULT_DEADLINE_MS = 1000.0

RULE_TABLE = {
    "hazard": (0.70, 0.15, 0.15),
    "merge_conflict": (0.50, 0.35, 0.15),
    "lead_vehicle": (0.45, 0.40, 0.15),
    "cruise": (0.25, 0.55, 0.20),
}
PEDESTRIAN_SAFETY_BUMP = 0.10

FAULT_KINDS = ("nan", "negative", "overscale", "timeout")


@dataclass(frozen=True)
class HintRequest:
    context: HintContext
    deadline_ms: float = DEFAULT_DEADLINE_MS

    def __post_init__(self):
        if not self.deadline_ms > 0:
            raise ValueError("deadline_ms must be positive")


@dataclass(frozen=True)
class HintResponse:
    raw_weights: tuple[float, ...]
    provider: str
    latency_ms: float


class MockHinter:
    """Deterministic rule table over the digest's scenario category."""

    name = "mock"

    def hint(self, request: HintRequest) -> HintResponse | None:
        ctx = request.context
        weights = list(RULE_TABLE[ctx.digest.category])
        if ctx.digest.pedestrian_present and any("pedestrian" in f for f in ctx.fragments):
            weights[0] += PEDESTRIAN_SAFETY_BUMP
        return HintResponse(tuple(weights), "mock", 0.0)


class FaultyHinter:
    """Wraps a base provider and injects one named corruption."""

    name = "faulty"

    def __init__(self, fault: str, base=None):
        if fault not in FAULT_KINDS:
            raise ValueError(f"unknown fault {fault!r}; expected one of {FAULT_KINDS}")
        self.fault = fault
        self.base = base if base is not None else MockHinter()

    def hint(self, request: HintRequest) -> HintResponse | None:
        if self.fault == "timeout":
            return None
        response = self.base.hint(request)
        weights = list(response.raw_weights)
        if self.fault == "nan":
            weights[0] = float("nan")
        elif self.fault == "negative":
            weights[0] = -weights[0]
        elif self.fault == "overscale":
            weights = [w * 10.0 for w in weights]
        return HintResponse(tuple(weights), response.provider, response.latency_ms)


class RemoteHinter:
    """Line-delimited JSON client; disabled unless an endpoint is configured."""

    name = "remote"

    def __init__(self, endpoint: str | None = None):
        self.endpoint = endpoint if endpoint is not None else os.environ.get(ENDPOINT_ENV)

    def hint(self, request: HintRequest) -> HintResponse | None:
        if not self.endpoint:
            return None
        budget = max(request.deadline_ms / 1000.0, 1e-3)
        start = time.monotonic()
        try:
            host, _, port = self.endpoint.rpartition(":")
            payload = {
                "v": PROTOCOL_VERSION,
                "query": request.context.query_text,
                "fragments": list(request.context.fragments),
                "digest": [float(x) for x in request.context.digest.vector],
                "deadline_ms": request.deadline_ms,
            }
            with socket.create_connection((host, int(port)), timeout=budget) as sock:
                sock.sendall((json.dumps(payload) + "\n").encode("utf-8"))
                remaining = budget - (time.monotonic() - start)
                if remaining <= 0:
                    return None
                sock.settimeout(remaining)
                with sock.makefile("r", encoding="utf-8") as fh:
                    line = fh.readline()
            message = json.loads(line)
            weights = message["weights"]
            if not isinstance(weights, list) or len(weights) != N_ATTRIBUTES:
                return None
            if any(isinstance(w, bool) or not isinstance(w, (int, float)) for w in weights):
                return None
            latency_ms = (time.monotonic() - start) * 1000.0
            if latency_ms > request.deadline_ms:
                return None
            return HintResponse(tuple(float(w) for w in weights), "remote", latency_ms)
        except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
            log.debug("remote hint failed: %s", exc)
            return None


def make_provider(hint_mode: str):
    """Map a harness hint_mode string to a provider (None = uniform ablation)."""
    if hint_mode == "mock":
        return MockHinter()
    if hint_mode.startswith("faulty:"):
        return FaultyHinter(hint_mode.split(":", 1)[1])
    if hint_mode == "remote":
        return RemoteHinter()
    if hint_mode == "none-uniform":
        return None
    raise ValueError(f"unknown hint mode {hint_mode!r}")


def response_arity_ok(response: HintResponse | None) -> bool:
    return response is not None and len(response.raw_weights) == N_ATTRIBUTES
