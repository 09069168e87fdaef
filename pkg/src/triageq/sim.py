"""Discrete-event simulation of the reading queue.

Every synthetic case is placed in two parallel worlds built from the same
arrival times, disease statuses, device calls, and service draws: a FIFO
world (the without-AI control) and a with-AI world where cases are ordered
by priority class.  Wait is measured to the *first* case open; a case that
is later interrupted keeps its original wait and resumes with its remaining
read time intact.

Event ordering is deterministic: at equal timestamps a completion is
processed before an arrival (so a freed reader is visible to the arriving
case), and queued cases are ordered by (class, arrival time, case id).
Randomness comes from one ``numpy`` PCG64 generator per trial, keyed by
``SeedSequence([*seed_path, trial_index])``, so results do not depend on
how trials are scheduled across workers.
"""

from __future__ import annotations

import heapq
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .workflow import (
    DISCIPLINES,
    HIERARCHICAL,
    PREEMPTIVE,
    PROTOCOLS,
    Workflow,
    derive_priority_structure,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PatientCase:
    """One simulated image, assembled on demand from the stream arrays."""

    case_id: int
    arrival: float
    group: str
    disease: str | None
    ai_calls: dict
    service_time: float


@dataclass
class PatientStream:
    """Column-oriented stream of cases for one trial.

    ``calls`` columns follow ``workflow.real_ais`` order (i.e. class order of
    the hierarchical protocol).  ``disease_idx`` indexes ``workflow.diseases``
    with -1 for non-diseased.
    """

    workflow: Workflow
    arrival: np.ndarray
    group_idx: np.ndarray
    disease_idx: np.ndarray
    calls: np.ndarray  # (n, n_devices) bool
    service: np.ndarray
    seed_path: tuple
    _classes: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return self.arrival.shape[0]

    def case(self, i: int) -> PatientCase:
        w = self.workflow
        d = self.disease_idx[i]
        return PatientCase(
            case_id=i,
            arrival=float(self.arrival[i]),
            group=w.groups[self.group_idx[i]].name,
            disease=None if d < 0 else w.diseases[d].name,
            ai_calls={a.name: bool(self.calls[i, j]) for j, a in enumerate(w.real_ais)},
            service_time=float(self.service[i]),
        )

    def class_assignment(self, protocol: str) -> np.ndarray:
        """Class index per case; the AI-negative class is always the last.

        Hierarchical: index of the highest-ranked device that fired.
        Priority: 0 for any positive call, else 1.  Cached per protocol.
        """
        if protocol not in self._classes:
            k = self.calls.shape[1]
            if k == 0:
                cls = np.zeros(len(self), dtype=np.int64)
            elif protocol == HIERARCHICAL:
                any_pos = self.calls.any(axis=1)
                first = np.argmax(self.calls, axis=1)
                cls = np.where(any_pos, first, k)
            else:
                cls = np.where(self.calls.any(axis=1), 0, 1).astype(np.int64)
            self._classes[protocol] = cls
        return self._classes[protocol]


def generate_stream(workflow: Workflow, n_patients: int, seed) -> PatientStream:
    """Draw one trial's case stream.

    Poisson arrivals at the workflow rate; group, disease, per-device calls
    (sensitivity if the device's target is present, else one minus
    specificity, only for cases of the device's group), and exponential
    service at the subgroup mean.  The draw order is fixed, so a seed fully
    determines the stream.
    """
    if workflow.lam <= 0.0:
        raise ValueError("generate_stream requires a positive arrival rate")
    seed_path = tuple(np.atleast_1d(seed).tolist()) if not isinstance(seed, (list, tuple)) else tuple(seed)
    rng = np.random.default_rng(np.random.SeedSequence(list(seed_path)))
    n = int(n_patients)
    w = workflow

    arrival = np.cumsum(rng.exponential(1.0 / w.lam, n))

    cum_g = np.cumsum([g.probability for g in w.groups])
    cum_g[-1] = 1.0  # guard the last edge against rounding
    group_idx = np.searchsorted(cum_g, rng.random(n), side="right").astype(np.int64)

    disease_idx = np.full(n, -1, dtype=np.int64)
    u_dis = rng.random(n)
    disease_pos = {d.name: i for i, d in enumerate(w.diseases)}
    for gi, g in enumerate(w.groups):
        in_group = group_idx == gi
        if not in_group.any():
            continue
        local = w.diseases_in(g.name)
        if not local:
            continue
        cum_pi = np.cumsum([d.prevalence for d in local])
        pick = np.searchsorted(cum_pi, u_dis[in_group], side="right")
        ids = np.array([disease_pos[d.name] for d in local] + [-1], dtype=np.int64)
        disease_idx[in_group] = ids[np.minimum(pick, len(local))]

    k = len(w.real_ais)
    calls = np.zeros((n, k), dtype=bool)
    group_pos = {g.name: i for i, g in enumerate(w.groups)}
    for j, ai in enumerate(w.real_ais):
        u = rng.random(n)  # one column per device, drawn unconditionally
        target = w.disease(ai.target)
        gi = group_pos[target.group]
        p_call = np.where(
            disease_idx == disease_pos[target.name], ai.sensitivity, 1.0 - ai.specificity
        )
        calls[:, j] = (u < p_call) & (group_idx == gi)

    mean_read = np.array([g.nd_read_time for g in w.groups])[group_idx]
    disease_read = np.array([d.read_time for d in w.diseases] + [1.0])
    diseased = disease_idx >= 0
    mean_read = np.where(diseased, disease_read[disease_idx], mean_read)
    service = rng.exponential(1.0, n) * mean_read

    return PatientStream(
        workflow=w,
        arrival=arrival,
        group_idx=group_idx,
        disease_idx=disease_idx,
        calls=calls,
        service=service,
        seed_path=seed_path,
    )


def warmup_policy(n_patients: int, fraction: float = 0.1) -> np.ndarray:
    """Boolean mask of cases kept for statistics.

    The first ``floor(fraction * n)`` cases (by arrival order) are dropped in
    *both* worlds to damp the empty-system transient.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("warmup fraction must be in [0, 1)")
    keep = np.ones(n_patients, dtype=bool)
    keep[: int(fraction * n_patients)] = False
    return keep


# ---------------------------------------------------------------------------
# queue cores
# ---------------------------------------------------------------------------


def _fifo_single(arrival, service):
    """Lindley recursion; returns (first_start, completion)."""
    n = arrival.shape[0]
    start = np.empty(n)
    free = 0.0
    for i in range(n):
        a = arrival[i]
        s = a if a > free else free
        start[i] = s
        free = s + service[i]
    return start, start + service


def _fifo_multi(arrival, service, servers):
    """FIFO with several readers: each case takes the earliest-free one."""
    n = arrival.shape[0]
    start = np.empty(n)
    free = [0.0] * servers
    heapq.heapify(free)
    for i in range(n):
        t = heapq.heappop(free)
        s = arrival[i] if arrival[i] > t else t
        start[i] = s
        heapq.heappush(free, s + service[i])
    return start, start + service


def _priority_single(arrival, cls, service, preemptive):
    """Single-reader priority queue; returns (first_start, completion).

    The waiting set is a heap of (class, arrival, id); a preempted case is
    re-queued under its original key, which restores FIFO-within-class by
    arrival time, and keeps only its remaining read time.
    """
    n = arrival.shape[0]
    first_start = np.full(n, -1.0)
    completion = np.empty(n)
    remaining = service.copy()
    heap: list = []
    push, pop = heapq.heappush, heapq.heappop
    cur = -1
    cur_end = math.inf
    i = 0
    inf = math.inf
    while i < n or cur >= 0:
        t_arr = arrival[i] if i < n else inf
        if cur_end <= t_arr:  # completions win ties with arrivals
            t = cur_end
            completion[cur] = t
            cur = -1
            cur_end = inf
            if heap:
                _, _, j = pop(heap)
                if first_start[j] < 0.0:
                    first_start[j] = t
                cur = j
                cur_end = t + remaining[j]
        else:
            j = i
            i += 1
            t = t_arr
            if cur < 0:
                first_start[j] = t
                cur = j
                cur_end = t + remaining[j]
            elif preemptive and cls[j] < cls[cur]:
                remaining[cur] = cur_end - t
                push(heap, (cls[cur], arrival[cur], cur))
                first_start[j] = t
                cur = j
                cur_end = t + remaining[j]
            else:
                push(heap, (cls[j], arrival[j], j))
    return first_start, completion


def _priority_multi(arrival, cls, service, servers, preemptive):
    """Priority queue with several readers.

    Preemption displaces the in-service case of the numerically largest
    class; among equals the latest-started one, then the largest id.  Only a
    strictly lower-priority case is ever displaced.
    """
    n = arrival.shape[0]
    first_start = np.full(n, -1.0)
    completion = np.empty(n)
    remaining = service.copy()
    heap: list = []
    push, pop = heapq.heappush, heapq.heappop
    serving = [-1] * servers  # case id per reader
    end = [math.inf] * servers
    seg_start = [0.0] * servers
    busy = 0
    i = 0
    inf = math.inf
    while i < n or busy > 0:
        t_arr = arrival[i] if i < n else inf
        s_min = min(range(servers), key=lambda s: (end[s], serving[s]))
        if end[s_min] <= t_arr:
            t = end[s_min]
            j = serving[s_min]
            completion[j] = t
            serving[s_min] = -1
            end[s_min] = inf
            busy -= 1
            if heap:
                _, _, nxt = pop(heap)
                if first_start[nxt] < 0.0:
                    first_start[nxt] = t
                serving[s_min] = nxt
                seg_start[s_min] = t
                end[s_min] = t + remaining[nxt]
                busy += 1
        else:
            j = i
            i += 1
            t = t_arr
            if busy < servers:
                s_free = serving.index(-1)
                first_start[j] = t
                serving[s_free] = j
                seg_start[s_free] = t
                end[s_free] = t + remaining[j]
                busy += 1
                continue
            victim = None
            if preemptive:
                key = None
                for s in range(servers):
                    k = (cls[serving[s]], seg_start[s], serving[s])
                    if key is None or k > key:
                        key = k
                        victim = s
                if cls[serving[victim]] <= cls[j]:
                    victim = None
            if victim is None:
                push(heap, (cls[j], arrival[j], j))
            else:
                v = serving[victim]
                remaining[v] = end[victim] - t
                push(heap, (cls[v], arrival[v], v))
                first_start[j] = t
                serving[victim] = j
                seg_start[victim] = t
                end[victim] = t + remaining[j]
    return first_start, completion


# ---------------------------------------------------------------------------
# one trial, both worlds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StratumMeans:
    n: int
    mean_wait_fifo: float
    mean_wait_ai: float
    mean_delta: float


@dataclass(frozen=True)
class TrialResult:
    n_patients: int
    n_counted: int
    disease_stats: dict  # disease name (plus "nd", "all") -> StratumMeans
    class_stats: dict  # class label -> StratumMeans


def fifo_waits(stream: PatientStream, servers: int | None = None) -> np.ndarray:
    servers = stream.workflow.servers if servers is None else servers
    if servers == 1:
        start, _ = _fifo_single(stream.arrival, stream.service)
    else:
        start, _ = _fifo_multi(stream.arrival, stream.service, servers)
    return start - stream.arrival


def ai_waits(
    stream: PatientStream, discipline: str, protocol: str, servers: int | None = None
) -> np.ndarray:
    servers = stream.workflow.servers if servers is None else servers
    cls = stream.class_assignment(protocol)
    preemptive = discipline == PREEMPTIVE
    if servers == 1:
        start, _ = _priority_single(stream.arrival, cls, stream.service, preemptive)
    else:
        start, _ = _priority_multi(stream.arrival, cls, stream.service, servers, preemptive)
    return start - stream.arrival


def _stratify(stream, w_fifo, w_ai, keep, protocol) -> TrialResult:
    w = stream.workflow
    delta = w_ai - w_fifo

    def means(mask) -> StratumMeans:
        m = mask & keep
        n = int(m.sum())
        if n == 0:
            return StratumMeans(0, math.nan, math.nan, math.nan)
        return StratumMeans(
            n,
            float(w_fifo[m].mean()),
            float(w_ai[m].mean()),
            float(delta[m].mean()),
        )

    disease_stats = {}
    for i, d in enumerate(w.diseases):
        disease_stats[d.name] = means(stream.disease_idx == i)
    disease_stats["nd"] = means(stream.disease_idx < 0)
    disease_stats["all"] = means(np.ones(len(stream), dtype=bool))

    structure = derive_priority_structure(w, protocol, PREEMPTIVE)
    cls = stream.class_assignment(protocol)
    class_stats = {}
    for ci, label in enumerate(structure.labels):
        class_stats[label] = means(cls == ci)

    return TrialResult(
        n_patients=len(stream),
        n_counted=int(keep.sum()),
        disease_stats=disease_stats,
        class_stats=class_stats,
    )


def simulate(
    stream: PatientStream,
    discipline: str,
    protocol: str,
    servers: int | None = None,
    warmup_fraction: float = 0.1,
) -> TrialResult:
    """Run both worlds on one stream and stratify the waits."""
    if discipline not in DISCIPLINES:
        raise ValueError(f"unknown discipline {discipline!r}")
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    w_fifo = fifo_waits(stream, servers)
    w_ai = ai_waits(stream, discipline, protocol, servers)
    keep = warmup_policy(len(stream), warmup_fraction)
    return _stratify(stream, w_fifo, w_ai, keep, protocol)


# ---------------------------------------------------------------------------
# trial aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AggregateStat:
    """Across-trial summary for one stratum.

    Point estimates are means of per-trial means; the 95% intervals are the
    2.5/97.5 percentiles of the per-trial means, so they describe the spread
    of a trial, not a standard error.
    """

    n_cases: int
    n_trials: int
    mean_wait_fifo: float
    mean_wait_ai: float
    mean_delta: float
    delta_ci: tuple
    wait_fifo_ci: tuple
    wait_ai_ci: tuple


@dataclass(frozen=True)
class ScenarioResult:
    discipline: str
    protocol: str
    rho: float
    n_trials: int
    n_patients: int
    seed_path: tuple
    warmup_fraction: float
    diseases: dict  # name -> AggregateStat (includes "nd" and "all")
    classes: dict  # label -> AggregateStat
    trials: tuple | None = None  # per-trial results when requested


def _aggregate(per_trial: list, key_source: str) -> dict:
    keys = getattr(per_trial[0], key_source).keys()
    out = {}
    for key in keys:
        rows = [getattr(t, key_source)[key] for t in per_trial]
        counts = np.array([r.n for r in rows])
        fifo = np.array([r.mean_wait_fifo for r in rows])
        ai = np.array([r.mean_wait_ai for r in rows])
        delta = np.array([r.mean_delta for r in rows])
        have = counts > 0
        n_missing = int((~have).sum())
        if n_missing:
            logger.warning(
                "stratum %r empty in %d/%d trials; excluded from those trials' means",
                key,
                n_missing,
                len(rows),
            )
        if not have.any():
            out[key] = AggregateStat(0, 0, math.nan, math.nan, math.nan,
                                     (math.nan, math.nan), (math.nan, math.nan),
                                     (math.nan, math.nan))
            continue

        def ci(values):
            lo, hi = np.percentile(values[have], [2.5, 97.5])
            return (float(lo), float(hi))

        out[key] = AggregateStat(
            n_cases=int(counts.sum()),
            n_trials=int(have.sum()),
            mean_wait_fifo=float(fifo[have].mean()),
            mean_wait_ai=float(ai[have].mean()),
            mean_delta=float(delta[have].mean()),
            delta_ci=ci(delta),
            wait_fifo_ci=ci(fifo),
            wait_ai_ci=ci(ai),
        )
    return out


def _trial_batch(args):
    """Worker: one stream shared by every requested configuration."""
    workflow, configs, n_patients, seed_path, warmup_fraction, servers = args
    stream = generate_stream(workflow, n_patients, seed_path)
    w_fifo = fifo_waits(stream, servers)
    keep = warmup_policy(len(stream), warmup_fraction)
    results = []
    for discipline, protocol in configs:
        w_ai = ai_waits(stream, discipline, protocol, servers)
        results.append(_stratify(stream, w_fifo, w_ai, keep, protocol))
    return results


def run_trials_multi(
    workflow: Workflow,
    configs,
    n_trials: int,
    n_patients: int,
    base_seed,
    warmup_fraction: float = 0.1,
    servers: int | None = None,
    threads: int = 1,
    keep_trials: bool = False,
) -> dict:
    """Independent seeded trials with streams shared across configurations.

    Sharing the stream within a trial makes cross-configuration contrasts
    paired (the FIFO world is bit-identical for all of them) and is the
    variance-reduction default for agreement studies.  Results are invariant
    to ``threads`` because trial seeds are positional.
    """
    configs = tuple(configs)
    seed_path = tuple(base_seed) if isinstance(base_seed, (list, tuple)) else (int(base_seed),)
    jobs = [
        (workflow, configs, n_patients, seed_path + (t,), warmup_fraction, servers)
        for t in range(n_trials)
    ]
    if threads > 1 and n_trials > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            per_trial_cfg = list(pool.map(_trial_batch, jobs, chunksize=max(1, n_trials // (4 * threads))))
    else:
        per_trial_cfg = [_trial_batch(job) for job in jobs]

    out = {}
    for idx, (discipline, protocol) in enumerate(configs):
        per_trial = [batch[idx] for batch in per_trial_cfg]
        out[(discipline, protocol)] = ScenarioResult(
            discipline=discipline,
            protocol=protocol,
            rho=workflow.rho,
            n_trials=n_trials,
            n_patients=n_patients,
            seed_path=seed_path,
            warmup_fraction=warmup_fraction,
            diseases=_aggregate(per_trial, "disease_stats"),
            classes=_aggregate(per_trial, "class_stats"),
            trials=tuple(per_trial) if keep_trials else None,
        )
    return out


def run_trials(
    workflow: Workflow,
    discipline: str,
    protocol: str,
    n_trials: int,
    n_patients: int,
    base_seed,
    warmup_fraction: float = 0.1,
    servers: int | None = None,
    threads: int = 1,
    keep_trials: bool = False,
) -> ScenarioResult:
    """Aggregate per-disease wait differences over independent trials."""
    results = run_trials_multi(
        workflow,
        [(discipline, protocol)],
        n_trials,
        n_patients,
        base_seed,
        warmup_fraction=warmup_fraction,
        servers=servers,
        threads=threads,
        keep_trials=keep_trials,
    )
    return results[(discipline, protocol)]
