"""
Host-side model of the device pipeline: an arena memory pool, FIFO task
streams, a discrete-event timeline with copy and compute engines, and the
per-level launch planner (merged or per-patch accumulation kernels).

Costs are synthetic model units (think microseconds): transfers take
``bytes / bandwidth``, compute tasks ``cells * per_cell`` and every launch
costs the coordinator ``launch_overhead``.  They drive scheduling statistics
only, never the numerics.
"""

from __future__ import annotations

import bisect
import csv
import heapq
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

MiB = 1 << 20


# ---------------------------------------------------------------------------
# memory pool


class PoolError(RuntimeError):
    pass


class OversizeError(PoolError):
    pass


class PoolMisuseError(PoolError):
    pass


@dataclass(frozen=True)
class Block:
    id: int
    chunk: int
    offset: int
    capacity: int
    size: int
    _pool: object = field(repr=False, compare=False, default=None)

    def as_array(self, dtype, count: int) -> np.ndarray:
        return self._pool._view(self, np.dtype(dtype), count)


class MemoryPool:
    """Chunked buddy arena with power-of-two size classes.

    Safe for concurrent callers.  A request takes the smallest free block
    that fits, splitting larger free blocks on demand; released blocks merge
    with their free buddy, so freed memory serves any later size.  System
    memory is only reserved a whole chunk at a time.
    """

    def __init__(self, chunk_size: int = 64 * MiB, min_block: int = 256, align: int = 64):
        if chunk_size & (chunk_size - 1) or min_block & (min_block - 1) or min_block > chunk_size:
            raise ValueError("chunk_size and min_block must be powers of two with min_block <= chunk_size")
        if min_block % align:
            raise ValueError("min_block must be a multiple of align")
        self.chunk_size = chunk_size
        self.min_block = min_block
        self.align = align
        self._lock = threading.Lock()
        self._chunks: list = []
        self._free = defaultdict(set)  # size class -> {(chunk, offset)}
        self._live: dict = {}
        self._next_id = 0
        self.reservations = 0
        self.acquires = 0
        self.releases = 0
        self.live_bytes = 0
        self.high_water = 0

    def size_class(self, size: int) -> int:
        c = self.min_block
        while c < size:
            c <<= 1
        return c

    def _reserve_chunk(self):
        self._chunks.append(np.empty(self.chunk_size, dtype=np.uint8))
        self._free[self.chunk_size].add((len(self._chunks) - 1, 0))
        self.reservations += 1

    def _take(self, cls: int):
        c = cls
        while c <= self.chunk_size and not self._free[c]:
            c <<= 1
        if c > self.chunk_size:
            self._reserve_chunk()
            c = self.chunk_size
        blk = min(self._free[c])  # lowest address first keeps reuse deterministic
        self._free[c].remove(blk)
        chunk, offset = blk
        while c > cls:  # split, keeping the lower half
            c >>= 1
            self._free[c].add((chunk, offset + c))
        return chunk, offset

    def acquire(self, size: int) -> Block:
        if size <= 0:
            raise ValueError("block size must be positive")
        cls = self.size_class(size)
        if cls > self.chunk_size:
            raise OversizeError(f"request of {size} bytes exceeds chunk size {self.chunk_size}")
        with self._lock:
            chunk, offset = self._take(cls)
            self._next_id += 1
            blk = Block(self._next_id, chunk, offset, cls, size, self)
            self._live[blk.id] = blk
            self.acquires += 1
            self.live_bytes += cls
            self.high_water = max(self.high_water, self.live_bytes)
            return blk

    def release(self, block: Block) -> None:
        with self._lock:
            if self._live.pop(block.id, None) is None:
                raise PoolMisuseError(f"block {block.id} is not live (double release?)")
            self.releases += 1
            self.live_bytes -= block.capacity
            c, offset = block.capacity, block.offset
            while c < self.chunk_size and (block.chunk, offset ^ c) in self._free[c]:
                self._free[c].remove((block.chunk, offset ^ c))
                offset &= ~c
                c <<= 1
            self._free[c].add((block.chunk, offset))

    def free_bytes(self) -> int:
        with self._lock:
            return sum(c * len(v) for c, v in self._free.items())

    def _view(self, block: Block, dtype: np.dtype, count: int) -> np.ndarray:
        if count * dtype.itemsize > block.capacity:
            raise PoolMisuseError("view exceeds block capacity")
        return np.frombuffer(self._chunks[block.chunk], dtype=dtype, count=count,
                             offset=block.offset)

    def live_blocks(self) -> list:
        with self._lock:
            return list(self._live.values())

    def stats(self) -> dict:
        return dict(reservations=self.reservations, acquires=self.acquires,
                    releases=self.releases, high_water=self.high_water,
                    live_bytes=self.live_bytes)


def pool_acquire(pool: MemoryPool, size: int) -> Block:
    return pool.acquire(size)


def pool_release(pool: MemoryPool, block: Block) -> None:
    pool.release(block)


# ---------------------------------------------------------------------------
# tasks, streams, timeline

TRANSFER_IN = "transfer_in"
TRANSFER_OUT = "transfer_out"
COMPUTE = "compute"


class SchedulingError(RuntimeError):
    pass


@dataclass
class CostModel:
    bandwidth: float = 1.0e4  # bytes per unit (10 GB/s with microsecond units)
    per_cell: float = 1.0e-3
    launch_overhead: float = 20.0
    dual_copy_engines: bool = True

    def cost(self, task: "DeviceTask") -> float:
        if task.cost is not None:
            return task.cost
        if task.kind == COMPUTE:
            return task.cells * self.per_cell
        return task.bytes / self.bandwidth


@dataclass
class DeviceTask:
    kind: str
    stream: int = 0
    bytes: int = 0
    cells: int = 0
    patch_ids: tuple = ()
    name: str = ""
    cost: Optional[float] = None
    fn: Optional[Callable] = None
    deps: list = field(default_factory=list)
    id: int = -1


class Stream:
    """FIFO of tasks; tasks in one stream run in enqueue order."""

    def __init__(self, id: int):
        self.id = id
        self.tasks: list = []

    def enqueue(self, task: DeviceTask) -> DeviceTask:
        task.stream = self.id
        self.tasks.append(task)
        return task


@dataclass
class TaskRecord:
    task_id: int
    kind: str
    name: str
    stream: int
    start: float
    end: float
    bytes: int
    patch_ids: tuple
    engine: str


@dataclass
class DeviceTimeline:
    records: list = field(default_factory=list)
    span: float = 0.0
    launch_count: int = 0
    bytes_in: int = 0
    bytes_out: int = 0

    def engine_intervals(self, engine: str) -> list:
        return sorted((r.start, r.end) for r in self.records if r.engine == engine)

    @property
    def busy(self) -> dict:
        out = defaultdict(float)
        for r in self.records:
            out[r.engine] += r.end - r.start
        return dict(out)

    def overlap_totals(self):
        """``(transfer time overlapped with compute, total transfer time)``."""
        comp = self.engine_intervals("compute")
        starts = [a for a, _ in comp]
        ends = np.cumsum([0.0] + [b - a for a, b in comp])  # compute intervals never overlap

        def covered(x):
            k = bisect.bisect_right(starts, x)
            if k == 0:
                return 0.0
            a, b = comp[k - 1]
            return ends[k - 1] + min(x, b) - a

        total = overlapped = 0.0
        for r in self.records:
            if r.kind == COMPUTE:
                continue
            total += r.end - r.start
            overlapped += covered(r.end) - covered(r.start)
        return overlapped, total

    @property
    def overlap_fraction(self) -> float:
        """Share of transfer time that runs concurrently with compute."""
        overlapped, total = self.overlap_totals()
        return overlapped / total if total > 0 else 0.0

    def extend(self, other: "DeviceTimeline") -> None:
        shift = self.span
        for r in other.records:
            self.records.append(TaskRecord(r.task_id, r.kind, r.name, r.stream, r.start + shift,
                                           r.end + shift, r.bytes, r.patch_ids, r.engine))
        self.span += other.span
        self.launch_count += other.launch_count
        self.bytes_in += other.bytes_in
        self.bytes_out += other.bytes_out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["task_id", "kind", "stream", "start", "end", "bytes", "patch_ids"])
            for r in self.records:
                w.writerow([r.task_id, r.kind, r.stream, repr(r.start), repr(r.end), r.bytes,
                            ";".join(str(p) for p in r.patch_ids)])


def _engine_for(task: DeviceTask, model: CostModel, serial: bool) -> str:
    if serial:
        return "serial"
    if task.kind == COMPUTE:
        return "compute"
    if model.dual_copy_engines:
        return "copy_in" if task.kind == TRANSFER_IN else "copy_out"
    return "copy"


def _number(tasks):
    for k, t in enumerate(tasks):
        t.id = k
    ids = {id(t): t.id for t in tasks}
    deps = []
    prev_in_stream = {}
    for t in tasks:
        d = set()
        for dep in t.deps:
            dep_id = ids.get(id(dep)) if isinstance(dep, DeviceTask) else dep
            if dep_id is None:
                raise SchedulingError(f"task {t.id} depends on a task outside this level")
            d.add(dep_id)
        if t.stream in prev_in_stream:
            d.add(prev_in_stream[t.stream])
        prev_in_stream[t.stream] = t.id
        deps.append(d)
    return deps


def _check_acyclic(deps):
    state = [0] * len(deps)
    for root in range(len(deps)):
        if state[root]:
            continue
        stack = [(root, iter(deps[root]))]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
            elif state[nxt] == 1:
                raise SchedulingError(f"dependency cycle through task {nxt}")
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(deps[nxt])))


def simulate(tasks: Sequence[DeviceTask], model: Optional[CostModel] = None,
             mode: str = "pipelined") -> DeviceTimeline:
    """Discrete-event schedule of ``tasks`` (given in global enqueue order).

    The coordinator pushes task ``k`` at time ``(k + 1) * launch_overhead``.
    Each engine, whenever idle, starts the earliest-enqueued task that has
    been pushed and whose dependencies (stream predecessor plus explicit
    ``deps``) have finished.  ``mode="serial"`` runs everything on a single
    engine in enqueue order.
    """
    model = model or CostModel()
    tasks = list(tasks)
    serial = mode == "serial"
    deps = _number(tasks)
    _check_acyclic(deps)
    lam = model.launch_overhead
    n = len(tasks)
    launch = [(k + 1) * lam for k in range(n)]
    cost = [model.cost(t) for t in tasks]
    if any(c < 0 for c in cost):
        raise SchedulingError("negative task cost")
    engine = [_engine_for(t, model, serial) for t in tasks]
    queues = defaultdict(list)
    for k in range(n):
        queues[engine[k]].append(k)
    engines = sorted(queues)
    free_at = {e: 0.0 for e in engines}
    end = [None] * n
    start = [None] * n
    if serial:
        # strict in-order execution
        t = 0.0
        for k in range(n):
            t = max(t, launch[k])
            start[k], end[k] = t, t + cost[k]
            t = end[k]
    else:
        t = 0.0
        remaining = n
        pending = []  # end times of started tasks
        while remaining:
            progressed = False
            for e in engines:
                if free_at[e] > t or not queues[e]:
                    continue
                q = queues[e]
                for pos, k in enumerate(q):
                    if launch[k] > t:
                        break
                    if all(end[d] is not None and end[d] <= t for d in deps[k]):
                        start[k], end[k] = t, t + cost[k]
                        free_at[e] = end[k]
                        heapq.heappush(pending, end[k])
                        del q[pos]
                        remaining -= 1
                        progressed = True
                        break
            if progressed:
                continue
            while pending and pending[0] <= t:
                heapq.heappop(pending)
            future = [launch[q[0]] for q in queues.values() if q and launch[q[0]] > t]
            if pending:
                future.append(pending[0])
            if not future:
                raise SchedulingError("no runnable task (unsatisfiable dependencies)")
            t = min(future)
    tl = DeviceTimeline()
    for k, task in enumerate(tasks):
        tl.records.append(TaskRecord(k, task.kind, task.name, task.stream, start[k], end[k],
                                     task.bytes, tuple(task.patch_ids), engine[k]))
        if task.kind == TRANSFER_IN:
            tl.bytes_in += task.bytes
        elif task.kind == TRANSFER_OUT:
            tl.bytes_out += task.bytes
    tl.span = max(end) if n else 0.0
    tl.launch_count = n
    return tl


def enqueue(stream: Stream, task: DeviceTask) -> DeviceTask:
    return stream.enqueue(task)


def execute(tasks: Sequence[DeviceTask], mode: str = "pipelined", workers: int = 4) -> None:
    """Run the callables attached to ``tasks`` honouring stream order and deps.

    Serial mode runs them in enqueue order on the caller's thread; pipelined
    mode runs each stream on a worker, with a barrier before any task that
    has explicit dependencies.
    """
    tasks = list(tasks)
    if mode == "serial" or workers <= 1:
        for t in tasks:
            if t.fn is not None:
                t.fn()
        return
    # split into phases at tasks carrying explicit deps (level-wide barriers)
    phases, cur = [], []
    for t in tasks:
        if t.deps and cur:
            phases.append(cur)
            cur = []
        cur.append(t)
    if cur:
        phases.append(cur)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        for phase in phases:
            by_stream = defaultdict(list)
            for t in phase:
                by_stream[t.stream].append(t)

            def run_stream(ts):
                for t in ts:
                    if t.fn is not None:
                        t.fn()

            futures = [ex.submit(run_stream, ts) for ts in by_stream.values()]
            for f in futures:
                f.result()


def run_level(tasks: Sequence[DeviceTask], model: Optional[CostModel] = None,
              mode: str = "pipelined", workers: int = 4) -> DeviceTimeline:
    """Execute one level's tasks and return the modelled timeline (barrier on return)."""
    execute(tasks, mode, workers)
    return simulate(tasks, model, mode)


# ---------------------------------------------------------------------------
# launch planning


@dataclass
class PatchWork:
    """Per-patch inputs for :func:`plan_level_launches`; callables are optional."""

    patch_id: int
    cells: int
    perimeter: int
    bytes_in: int
    bytes_out: int
    c1: Optional[Callable] = None
    advance: Optional[Callable] = None
    accumulate_fine: Optional[Callable] = None
    accumulate_coarse: Optional[Callable] = None


def plan_level_launches(work: Sequence[PatchWork], policy: str = "merged",
                        with_c1: bool = True) -> list:
    """Ordered task list for one level step.

    Patches are visited from largest to smallest, each in its own stream:
    transfer-in, C1 kernel, advance kernel, transfer-out.  The two flux
    accumulation kernels are either merged into two level-wide launches
    after the loop, or issued per patch inside its stream.
    """
    if policy not in ("merged", "unmerged"):
        raise ValueError(f"unknown merge policy {policy!r}")
    order = sorted(work, key=lambda w: -w.cells)
    tasks = []
    loop_tasks = []
    for s, w in enumerate(order):
        st = Stream(s)
        ts = [st.enqueue(DeviceTask(TRANSFER_IN, bytes=w.bytes_in, patch_ids=(w.patch_id,),
                                    name="transfer_in"))]
        if with_c1:
            ts.append(st.enqueue(DeviceTask(COMPUTE, cells=w.perimeter, patch_ids=(w.patch_id,),
                                            name="c1", fn=w.c1)))
        ts.append(st.enqueue(DeviceTask(COMPUTE, cells=w.cells, patch_ids=(w.patch_id,),
                                        name="advance", fn=w.advance)))
        if policy == "unmerged":
            ts.append(st.enqueue(DeviceTask(COMPUTE, cells=w.perimeter, patch_ids=(w.patch_id,),
                                            name="accumulate_fine", fn=w.accumulate_fine)))
            ts.append(st.enqueue(DeviceTask(COMPUTE, cells=w.perimeter, patch_ids=(w.patch_id,),
                                            name="accumulate_coarse", fn=w.accumulate_coarse)))
        ts.append(st.enqueue(DeviceTask(TRANSFER_OUT, bytes=w.bytes_out, patch_ids=(w.patch_id,),
                                        name="transfer_out")))
        tasks.extend(ts)
        loop_tasks.extend(t for t in ts if t.name == "advance")
    if policy == "merged":
        ids = tuple(w.patch_id for w in order)
        perim = sum(w.perimeter for w in order)
        s = len(order)

        def merged(attr):
            fns = [getattr(w, attr) for w in order if getattr(w, attr) is not None]

            def run():
                for f in fns:
                    f()
            return run

        fine = DeviceTask(COMPUTE, stream=s, cells=perim, patch_ids=ids, name="accumulate_fine",
                          fn=merged("accumulate_fine"), deps=list(loop_tasks))
        coarse = DeviceTask(COMPUTE, stream=s, cells=perim, patch_ids=ids,
                            name="accumulate_coarse", fn=merged("accumulate_coarse"),
                            deps=list(loop_tasks))
        tasks.extend([fine, coarse])
    return tasks


def accumulate_task_count(tasks: Sequence[DeviceTask]) -> int:
    return sum(1 for t in tasks if t.name.startswith("accumulate"))


@dataclass
class WriteCounter:
    """Bytes written to device memory, split by data family."""

    solution: int = 0
    waves: int = 0

    def add(self, solution: int, waves: int) -> None:
        self.solution += solution
        self.waves += waves

    @property
    def ratio(self) -> float:
        return self.waves / self.solution if self.solution else 0.0


def count_written_bytes(counter: WriteCounter) -> dict:
    return dict(solution=counter.solution, waves=counter.waves, ratio=counter.ratio)
