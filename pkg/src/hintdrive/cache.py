"""Semantic cache: memory bank plus the fixed-frequency hint scheduler.

The bank stores validated (query embedding, weights) pairs with FIFO
eviction at 4096 entries and exact nearest-neighbor lookup. The scheduler
decouples low-frequency hinting (one request per 20-tick window) from the
high-frequency control loop: fresh provider output wins, the nearest cached
entry is the fallback, uniform weights are the last resort. Weights are held
constant within a window.

Sync test mode invokes the provider inline at window boundaries with
tick-based deadlines (fully deterministic). Live mode runs the provider on a
worker thread behind a single-producer/single-consumer pair of queues; the
control loop never blocks on it, and an in-flight request that misses its
one-window deadline is discarded when it eventually completes.
"""

from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass

import numpy as np

from .anchor import N_ATTRIBUTES, KnowledgeDoc, make_context, validate_weights
from .hinter import HintRequest, response_arity_ok

log = logging.getLogger(__name__)

BANK_CAPACITY = 4096
HINT_WINDOW_TICKS = 20
DEADLINE_MS = 1000.0

UNIFORM_WEIGHTS = np.full(N_ATTRIBUTES, 1.0 / N_ATTRIBUTES)


@dataclass(frozen=True)
class MemoryEntry:
    key: np.ndarray
    weights: np.ndarray
    tick: int
    scenario: str


@dataclass(frozen=True)
class WeightSource:
    weights: np.ndarray
    source: str  # fresh | cached | default


class MemoryBank:
    """FIFO ring of MemoryEntry with exact cosine nearest-neighbor lookup."""

    def __init__(self, capacity: int = BANK_CAPACITY):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._entries: list[MemoryEntry] = []
        self._keys: np.ndarray | None = None
        self._order: list[int] = []
        self._next = 0
        self._write = 0

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> list[MemoryEntry]:
        return list(self._entries)

    def insert(self, entry: MemoryEntry) -> None:
        if self._keys is None:
            dim = entry.key.shape[0]
            self._keys = np.zeros((self.capacity, dim))
        if len(self._entries) < self.capacity:
            self._entries.append(entry)
            self._order.append(self._next)
            self._keys[len(self._entries) - 1] = entry.key
        else:
            self._entries[self._write] = entry
            self._order[self._write] = self._next
            self._keys[self._write] = entry.key
            self._write = (self._write + 1) % self.capacity
        self._next += 1

    def lookup_nearest(self, query: np.ndarray) -> MemoryEntry | None:
        n = len(self._entries)
        if n == 0:
            return None
        sims = self._keys[:n] @ query
        best = float(sims.max())
        # Ties break toward the most recent tick, then insertion order.
        candidates = np.flatnonzero(sims == best)
        pick = max(candidates, key=lambda i: (self._entries[i].tick, self._order[i]))
        return self._entries[int(pick)]


class HintScheduler:
    """Per-run weight source resolver called once per control tick."""

    def __init__(
        self,
        provider,
        corpus: list[KnowledgeDoc],
        *,
        scenario: str,
        density: str,
        bank: MemoryBank | None = None,
        window_ticks: int = HINT_WINDOW_TICKS,
        deadline_ms: float = DEADLINE_MS,
        sync_mode: bool = True,
    ):
        self.provider = provider
        self.corpus = corpus
        self.scenario = scenario
        self.density = density
        self.bank = bank if bank is not None else MemoryBank()
        self.window_ticks = int(window_ticks)
        self.deadline_ms = float(deadline_ms)
        self.sync_mode = bool(sync_mode)
        self.rows: list[tuple] = []
        self._held: WeightSource | None = None
        self._window_start: int | None = None

        self._worker: threading.Thread | None = None
        self._requests: queue.Queue | None = None
        self._results: queue.Queue | None = None
        self._inflight_tick: int | None = None
        if not self.sync_mode and provider is not None:
            self._requests = queue.Queue(maxsize=1)
            self._results = queue.Queue()
            self._worker = threading.Thread(target=self._serve, daemon=True)
            self._worker.start()

    # -- public API ---------------------------------------------------------

    def current_weights(self, tick: int, digest) -> WeightSource:
        boundary = tick % self.window_ticks == 0 and tick != self._window_start
        if self._held is None or boundary:
            self._begin_window(tick, digest)
        return self._held

    def close(self) -> None:
        if self._requests is not None:
            self._requests.put(None)
            self._worker.join(timeout=5.0)

    # -- internals ------------------------------------------------------------

    def _begin_window(self, tick: int, digest) -> None:
        self._window_start = tick
        ctx, query_vec = make_context(digest, digest.category, self.density, self.corpus)
        request = HintRequest(ctx, self.deadline_ms)

        fresh = None  # (response, query embedding of the issuing window)
        if self.provider is not None:
            if self.sync_mode:
                fresh = (self.provider.hint(request), query_vec)
            else:
                fresh = self._harvest(tick)
                self._issue(tick, request, query_vec)

        held = None
        if fresh is not None:
            resp, resp_query = fresh
            if response_arity_ok(resp):
                weights = validate_weights(resp.raw_weights)
                self.bank.insert(MemoryEntry(resp_query, weights, tick, self.scenario))
                held = WeightSource(weights, "fresh")
        if held is None:
            entry = self.bank.lookup_nearest(query_vec)
            if entry is not None:
                held = WeightSource(entry.weights, "cached")
            else:
                held = WeightSource(UNIFORM_WEIGHTS.copy(), "default")
        self._held = held
        self.rows.append((tick, held.source, *[float(w) for w in held.weights]))

    def _issue(self, tick: int, request: HintRequest, query_vec: np.ndarray) -> None:
        if self._inflight_tick is not None:
            return  # previous request still in flight; skip this window
        try:
            self._requests.put_nowait((tick, request, query_vec))
            self._inflight_tick = tick
        except queue.Full:  # pragma: no cover - guarded by _inflight_tick
            pass

    def _harvest(self, now_tick: int):
        """Latest completed in-flight response, or None.

        A response is only honored if it belongs to the most recent request
        and arrives by the next window boundary (= one-window deadline);
        anything later is discarded as expired.
        """
        fresh = None
        while True:
            try:
                issued_tick, resp, resp_query = self._results.get_nowait()
            except queue.Empty:
                break
            if issued_tick == self._inflight_tick:
                self._inflight_tick = None
                if resp is not None and now_tick - issued_tick <= self.window_ticks:
                    fresh = (resp, resp_query)
        return fresh

    def _serve(self) -> None:
        while True:
            item = self._requests.get()
            if item is None:
                return
            tick, request, query_vec = item
            try:
                resp = self.provider.hint(request)
            except Exception:  # provider bugs must not kill the worker
                log.exception("hint provider raised; treating as no response")
                resp = None
            self._results.put((tick, resp, query_vec))
