"""Multi-lane neighborhood evaluation.

One evaluation round freezes its inputs (instance, permutation, tabu
snapshot, incumbent), splits the move-index range into equal contiguous
slices, and scans each slice on its own lane. Lanes are separate
processes holding a private copy of the context, so rounds run without
shared mutable state; the instance itself is shipped once per pool, at
lane startup. Each lane raises a result event when its slice is done
and the global best move is reduced in the caller once the last result
arrives. A lane failure is reported as an error event and its slice is
re-scanned on the calling context before the round returns.

``evaluate_blocks`` is the deadline-aware variant used by the worker
daemon: the range is scanned as a sequence of small contiguous blocks
so that, when the deadline passes, the evaluated portion can be reduced
to an exact contiguous prefix of the requested range (results beyond
the first gap are discarded and left for redispatch).
"""

from __future__ import annotations

import os
import time
from concurrent.futures import FIRST_COMPLETED, CancelledError, ProcessPoolExecutor, wait
from dataclasses import dataclass

from .instance import ProblemInstance
from .neighborhood import NeighborhoodSlice, neighborhood_size
from .tabu import EvalContext, SliceResult, merge_slice_results, scan_slice

PROGRESS = "progress"
ERROR = "error"
RESULT = "result"


@dataclass(frozen=True)
class EvalEvent:
    kind: str  # progress | error | result
    lane: int
    payload: object


class EvaluationError(RuntimeError):
    """A lane failed and re-evaluation on the calling context failed too."""


def detected_lane_count() -> int:
    """Physical core count when detectable, logical count otherwise."""
    try:
        import psutil

        cores = psutil.cpu_count(logical=False)
        if cores:
            return cores
    except ImportError:
        pass
    return os.cpu_count() or 1


def partition_equal(total: int, lanes: int) -> list[NeighborhoodSlice]:
    """Split [0, total) into ``lanes`` contiguous slices whose sizes differ by at most 1."""
    if lanes < 1:
        raise ValueError(f"lanes must be >= 1, got {lanes}")
    if total < 0:
        raise ValueError(f"total must be >= 0, got {total}")
    base, extra = divmod(total, lanes)
    slices = []
    begin = 0
    for lane in range(lanes):
        size = base + (1 if lane < extra else 0)
        slices.append(NeighborhoodSlice(begin, begin + size))
        begin += size
    return slices


# Per-lane state, installed once by the pool initializer.
_LANE_INSTANCE: ProblemInstance | None = None
_LANE_SCAN = None


def _lane_init(instance: ProblemInstance, scan_fn):
    global _LANE_INSTANCE, _LANE_SCAN
    _LANE_INSTANCE = instance
    _LANE_SCAN = scan_fn


def _lane_task(order, tabu_entries, incumbent, begin, end, deadline, per_move_delay):
    t0 = time.perf_counter()
    best_idx, best_ms, evaluated = _LANE_SCAN(
        _LANE_INSTANCE, order, tabu_entries, incumbent, begin, end, deadline, per_move_delay
    )
    return begin, end, best_idx, best_ms, evaluated, time.perf_counter() - t0


class LaneEvaluator:
    """Pool of evaluation lanes bound to one problem instance.

    Keep one evaluator alive for a whole search run; per-round inputs
    are cheap to ship, the instance is not re-sent. ``lanes=1`` runs
    inline with no pool.
    """

    def __init__(self, instance: ProblemInstance, lanes: int | None = None, scan_fn=None):
        self.instance = instance
        self.lanes = lanes if lanes is not None else detected_lane_count()
        if self.lanes < 1:
            raise ValueError(f"lanes must be >= 1, got {self.lanes}")
        self._scan = scan_fn if scan_fn is not None else scan_slice
        self._pool = None
        if self.lanes > 1:
            self._pool = ProcessPoolExecutor(
                max_workers=self.lanes, initializer=_lane_init, initargs=(instance, self._scan)
            )

    # -- lifecycle ---------------------------------------------------------

    def close(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True, cancel_futures=True)
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    # -- full-round evaluation ----------------------------------------------

    def evaluate(self, ctx: EvalContext, event_sink=None) -> SliceResult:
        """Evaluate the full neighborhood of the context's permutation."""
        total = neighborhood_size(len(ctx.order))
        return self.evaluate_range(ctx, NeighborhoodSlice(0, total), event_sink)

    def evaluate_range(self, ctx: EvalContext, nslice: NeighborhoodSlice, event_sink=None) -> SliceResult:
        """Evaluate [begin, end) split equally across the lanes.

        Equivalent to a single evaluate_slice over the range: same best
        index, same makespan, for any lane count.
        """
        t0 = time.perf_counter()
        if self._pool is None:
            result = self._scan_local(ctx, nslice.begin, nslice.end)
            if event_sink is not None and nslice:
                event_sink(EvalEvent(PROGRESS, 0, 1.0))
                event_sink(EvalEvent(RESULT, 0, result))
            return SliceResult(result.best_index, result.best_makespan, result.moves_evaluated,
                               time.perf_counter() - t0)

        parts = partition_equal(len(nslice), self.lanes)
        futures = {}
        for lane, part in enumerate(parts):
            if not part:
                continue
            begin = nslice.begin + part.begin
            end = nslice.begin + part.end
            fut = self._pool.submit(_lane_task, ctx.order, ctx.tabu.entries, ctx.incumbent,
                                    begin, end, None, 0.0)
            futures[fut] = (lane, begin, end)

        results = []
        done, _ = wait(futures)
        for fut in done:
            lane, begin, end = futures[fut]
            exc = fut.exception()
            if exc is not None:
                if event_sink is not None:
                    event_sink(EvalEvent(ERROR, lane, f"lane {lane} failed: {exc}"))
                lane_result = self._retry_local(ctx, begin, end, lane, event_sink)
            else:
                _, _, best_idx, best_ms, evaluated, lane_elapsed = fut.result()
                lane_result = SliceResult(best_idx, best_ms, evaluated, lane_elapsed)
            if event_sink is not None:
                event_sink(EvalEvent(PROGRESS, lane, 1.0))
                event_sink(EvalEvent(RESULT, lane, lane_result))
            results.append(lane_result)
        return merge_slice_results(results, elapsed=time.perf_counter() - t0)

    def _scan_local(self, ctx: EvalContext, begin: int, end: int) -> SliceResult:
        t0 = time.perf_counter()
        best_idx, best_ms, evaluated = self._scan(
            self.instance, ctx.order, ctx.tabu.entries, ctx.incumbent, begin, end, None, 0.0
        )
        return SliceResult(best_idx, best_ms, evaluated, time.perf_counter() - t0)

    def _retry_local(self, ctx, begin, end, lane, event_sink) -> SliceResult:
        try:
            return self._scan_local(ctx, begin, end)
        except Exception as exc:
            if event_sink is not None:
                event_sink(EvalEvent(ERROR, lane, f"retry for lane {lane} failed: {exc}"))
            raise EvaluationError(f"slice [{begin}, {end}) failed on lane {lane} and on retry") from exc

    # -- deadline-bounded evaluation -----------------------------------------

    def evaluate_blocks(
        self,
        ctx: EvalContext,
        nslice: NeighborhoodSlice,
        deadline: float | None,
        per_move_delay: float = 0.0,
        progress=None,
    ) -> tuple[SliceResult, int]:
        """Evaluate as much of [begin, end) as the deadline allows.

        Returns (result over the evaluated prefix, prefix end). The
        evaluated portion is always contiguous from ``nslice.begin``;
        with lanes > 1, completed blocks beyond the first unfinished one
        are dropped so the prefix guarantee holds. ``deadline`` is an
        absolute time.monotonic() value shared across lanes.
        """
        t0 = time.perf_counter()
        if not nslice:
            return SliceResult(None, None, 0, 0.0), nslice.begin

        if self._pool is None:
            scanned = self._scan(self.instance, ctx.order, ctx.tabu.entries, ctx.incumbent,
                                 nslice.begin, nslice.end, deadline, per_move_delay)
            best_idx, best_ms, evaluated = scanned
            if progress is not None and len(nslice):
                progress(evaluated / len(nslice))
            return (SliceResult(best_idx, best_ms, evaluated, time.perf_counter() - t0),
                    nslice.begin + evaluated)

        block = max(1, -(-len(nslice) // (self.lanes * 8)))
        futures = {}
        begin = nslice.begin
        while begin < nslice.end:
            end = min(begin + block, nslice.end)
            fut = self._pool.submit(_lane_task, ctx.order, ctx.tabu.entries, ctx.incumbent,
                                    begin, end, deadline, per_move_delay)
            futures[fut] = (begin, end)
            begin = end

        outcomes: dict[int, tuple[int, int, int | None, int | None]] = {}
        pending = set(futures)
        completed_moves = 0
        while pending:
            done, pending = wait(pending, return_when=FIRST_COMPLETED)
            for fut in done:
                begin, end = futures[fut]
                try:
                    _, _, best_idx, best_ms, evaluated, _ = fut.result()
                except CancelledError:
                    continue
                outcomes[begin] = (end, evaluated, best_idx, best_ms)
                completed_moves += evaluated
            if progress is not None:
                progress(completed_moves / len(nslice))
            if deadline is not None and time.monotonic() >= deadline:
                for fut in pending:
                    fut.cancel()

        # contiguous frontier: merge the fully ordered prefix, drop anything past a gap
        frontier = nslice.begin
        best_idx = None
        best_ms = None
        moves = 0
        for begin in sorted(outcomes):
            if begin != frontier:
                break
            end, evaluated, b_idx, b_ms = outcomes[begin]
            moves += evaluated
            frontier = begin + evaluated
            if b_idx is not None and (best_ms is None or (b_ms, b_idx) < (best_ms, best_idx)):
                best_idx, best_ms = b_idx, b_ms
            if evaluated < end - begin:
                break
        return SliceResult(best_idx, best_ms, moves, time.perf_counter() - t0), frontier


def evaluate_parallel(ctx: EvalContext, lanes: int | None = None, event_sink=None) -> SliceResult:
    """One-shot full-neighborhood evaluation on a temporary lane pool."""
    with LaneEvaluator(ctx.instance, lanes) as evaluator:
        return evaluator.evaluate(ctx, event_sink)
