"""Closed-form mean wait-times for the reading queue, per class and per
disease subgroup.

Wait-time throughout is the queueing delay from entering the reading list
to the *first* moment a radiologist opens the case; service (and, under
preemption, any later interruptions) is excluded.  All formulas are for a
single reader; multi-reader questions are answered by the simulator.

The default ``exact`` methods are classical M/G/1 priority results applied
to the thinned class streams (each class arrives Poisson with rate
``class mass x overall rate`` and reads are hyperexponential mixtures):

* baseline FIFO delay is Pollaczek-Khinchine on the population mixture,
* non-preemptive class delays use the Cobham multi-class formula, whose
  numerator is the mean residual work over *all* classes,
* preemptive-resume first-open delays use the same form with the numerator
  truncated to the classes at or above the one considered (lower classes
  are invisible to it, and the delay-cycle argument gives the two cumulative
  load factors in the denominator).

The alternative methods (``conservation``, ``lump``, ``ratio``) reproduce
simpler textbook compositions built from 2-class building blocks.  They are
kept because they are easy to cross-read against hand calculations, but
they systematically misplace part of the low-class delay (quantified in the
tests); the simulator arbitrates and agrees with ``exact``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import TheoryUnsupportedError, UnstableQueueError
from .probability import (
    ClassRates,
    class_probabilities,
    class_service_moments,
    posterior_classes_given_disease,
)
from .workflow import (
    HIERARCHICAL,
    NEGATIVE_LABEL,
    NONPREEMPTIVE,
    PREEMPTIVE,
    PRIORITY,
    PriorityStructure,
    Workflow,
    derive_priority_structure,
)

#: method names accepted by each (discipline, protocol) configuration
METHODS = {
    (PREEMPTIVE, PRIORITY): ("exact", "conservation"),
    (PREEMPTIVE, HIERARCHICAL): ("exact", "lump"),
    (NONPREEMPTIVE, PRIORITY): ("exact", "ratio"),
    (NONPREEMPTIVE, HIERARCHICAL): ("exact",),
}


@dataclass(frozen=True)
class TheoryResult:
    discipline: str
    protocol: str
    method: str
    baseline_wait: float  # FIFO (without-AI) mean delay, minutes
    class_waits: dict  # label -> minutes (NaN for empty classes)
    disease_waits: dict  # disease -> minutes
    disease_deltas: dict  # disease -> minutes; negative means time saved


def _require_single_server(workflow: Workflow) -> None:
    if workflow.servers != 1:
        raise TheoryUnsupportedError(
            "analytical results cover a single reader; use the simulator for "
            f"{workflow.servers} servers"
        )


def _require_equal_read_times(workflow: Workflow, method: str) -> float:
    times = {round(s, 12) for _, _, s in workflow.subgroups()}
    if len(times) != 1:
        raise TheoryUnsupportedError(
            f"method {method!r} assumes equal mean read times across all "
            "subgroups; theory unsupported, use the simulation engine"
        )
    return times.pop()


def fifo_baseline_wait(workflow: Workflow) -> float:
    """Mean delay of the without-AI (FIFO) queue.

    Pollaczek-Khinchine with the population's mixture second moment; exact
    for Poisson arrivals regardless of how subgroup read times differ.
    """
    _require_single_server(workflow)
    if workflow.rho >= 1.0:
        raise UnstableQueueError(("all",), workflow.rho)
    return workflow.lam * workflow.second_moment_service / (2.0 * (1.0 - workflow.rho))


def _ordered_rates(rates: ClassRates):
    """Per-class (label, lam, mean, second moment) with empty classes zeroed
    so they drop out of cumulative sums instead of poisoning them."""
    rows = []
    for label in rates.labels:
        lam = rates.arrival[label]
        if rates.probability[label] <= 0.0:
            rows.append((label, 0.0, 0.0, 0.0))
        else:
            rows.append((label, lam, rates.mean_service[label], rates.second_moment[label]))
    return rows


def _head_of_line_waits(rates: ClassRates, preemptive: bool) -> dict:
    """Mean first-open delay for every class of a priority queue.

    W_k = N_k / (2 (1 - sigma_{k-1}) (1 - sigma_k)) with sigma_k the load of
    classes 1..k.  Non-preemptive: N_k is twice the mean residual work over
    all classes (Cobham).  Preemptive-resume: only classes 1..k contribute,
    because lower-class work never stands between a class-k case and its
    first open.  Raises when a cumulative load reaches 1, naming the
    smallest unstable prefix.
    """
    rows = _ordered_rates(rates)
    total_residual = sum(lam * v for _, lam, _, v in rows)
    waits = {}
    sigma_prev = 0.0
    numerator = 0.0
    prefix = []
    for label, lam, s, v in rows:
        prefix.append(label)
        sigma = sigma_prev + lam * s
        numerator += lam * v
        if sigma >= 1.0:
            raise UnstableQueueError(prefix, sigma)
        n_k = numerator if preemptive else total_residual
        if rates.probability[label] <= 0.0:
            waits[label] = math.nan
        else:
            waits[label] = n_k / (2.0 * (1.0 - sigma_prev) * (1.0 - sigma))
        sigma_prev = sigma
    return waits


def per_disease_waits(class_waits: dict, posteriors: dict) -> float:
    """Posterior-weighted average of class waits for one disease.

    Empty classes appear with zero posterior weight and NaN wait; they are
    skipped rather than contaminating the average.
    """
    total = 0.0
    for label, weight in posteriors.items():
        if weight <= 0.0:
            continue
        total += weight * class_waits[label]
    return total


def wait_difference(disease_waits: dict, baseline: float) -> dict:
    """Per-disease delta of the with-AI queue against FIFO.

    Negative values are time saved, positive values are added delay.
    """
    return {name: w - baseline for name, w in disease_waits.items()}


def _two_class_high_wait(lam_pos: float, second_pos: float, rho_pos: float) -> float:
    """P-K delay of the top class, which only ever sees its own traffic."""
    if rho_pos >= 1.0:
        raise UnstableQueueError(("positive",), rho_pos)
    if lam_pos <= 0.0:
        return 0.0
    return lam_pos * second_pos / (2.0 * (1.0 - rho_pos))


def _conservation_low_wait(workflow, lam_pos, w_pos, lam_neg) -> float:
    """Low-class wait backed out of the equal-read-time conservation identity
    lam * W0 = lam_pos * W_pos + lam_neg * W_neg.

    Under preemption the identity actually conserves delay *plus* the
    interruption time a started case accumulates, so this overstates the
    first-open delay of the low class; kept as the cross-readable variant.
    """
    w0 = fifo_baseline_wait(workflow)
    if lam_neg <= 0.0:
        return math.nan
    return (workflow.lam * w0 - lam_pos * w_pos) / lam_neg


def preemptive_priority_waits(workflow: Workflow, method: str = "exact") -> TheoryResult:
    """Two-class preemptive-resume queue: pooled positives over the rest."""
    _require_single_server(workflow)
    structure = derive_priority_structure(workflow, PRIORITY, PREEMPTIVE)
    rates = class_service_moments(workflow, structure)
    if method == "exact":
        class_waits = _head_of_line_waits(rates, preemptive=True)
    elif method == "conservation":
        _require_equal_read_times(workflow, method)
        class_waits = _head_of_line_waits(rates, preemptive=True)
        if NEGATIVE_LABEL in class_waits and len(structure.classes) > 1:
            pos = structure.classes[0].label
            class_waits[NEGATIVE_LABEL] = _conservation_low_wait(
                workflow,
                rates.arrival[pos],
                class_waits[pos],
                rates.arrival[NEGATIVE_LABEL],
            )
    else:
        raise ValueError(f"unknown method {method!r}")
    return _assemble(workflow, structure, class_waits, method)


def preemptive_hierarchical_waits(workflow: Workflow, method: str = "exact") -> TheoryResult:
    """Per-device classes under preemptive-resume.

    ``exact`` evaluates every class with the truncated-numerator formula and
    supports unequal read times.  ``lump`` reproduces the peel-off
    construction: classes 1..k are pooled into a fictitious single positive
    class, the pooled 2-class wait is mass-weighted, and class k's wait is
    the difference of consecutive pools; it requires equal read times and
    inherits the conservation bias for every class below the first.
    """
    _require_single_server(workflow)
    structure = derive_priority_structure(workflow, HIERARCHICAL, PREEMPTIVE)
    rates = class_service_moments(workflow, structure)
    if method == "exact":
        class_waits = _head_of_line_waits(rates, preemptive=True)
    elif method == "lump":
        s = _require_equal_read_times(workflow, method)
        if workflow.rho >= 1.0:
            raise UnstableQueueError(("all",), workflow.rho)
        probs = class_probabilities(workflow)
        class_waits = {}
        cum_mass = 0.0
        prev_weighted = 0.0  # pi_H+ * W_H+
        for cls in structure.positive_classes:
            p_k = probs.positive[cls.ais[0]]
            cum_mass += p_k
            lam_set = cum_mass * workflow.lam
            rho_set = lam_set * s
            w_set = _two_class_high_wait(lam_set, 2.0 * s * s, rho_set)
            if p_k <= 0.0:
                class_waits[cls.label] = math.nan
            else:
                class_waits[cls.label] = (w_set * cum_mass - prev_weighted) / p_k
            prev_weighted = w_set * cum_mass
        lam_pos = cum_mass * workflow.lam
        w_pos_pool = _two_class_high_wait(lam_pos, 2.0 * s * s, lam_pos * s)
        class_waits[NEGATIVE_LABEL] = _conservation_low_wait(
            workflow, lam_pos, w_pos_pool, rates.arrival[NEGATIVE_LABEL]
        )
    else:
        raise ValueError(f"unknown method {method!r}")
    return _assemble(workflow, structure, class_waits, method)


def nonpreemptive_priority_waits(workflow: Workflow, method: str = "exact") -> TheoryResult:
    """Two-class non-preemptive queue.

    ``exact`` is Cobham with the pooled positive class, which includes the
    residual read of whichever case is on the screen when a positive
    arrives.  ``ratio`` is the simpler utilization-ratio pair
    W+ = S+ rho+/(1-rho+), W- = S- ((mu-/mu+) rho+/(1-rho+) + rho)/(1-rho);
    it drops that residual term, so it understates W+ materially whenever
    positives are rare, and overstates W-.  Reported deviations live in the
    test suite; the simulator agrees with ``exact``.
    """
    _require_single_server(workflow)
    structure = derive_priority_structure(workflow, PRIORITY, NONPREEMPTIVE)
    rates = class_service_moments(workflow, structure)
    if method == "exact":
        class_waits = _head_of_line_waits(rates, preemptive=False)
    elif method == "ratio":
        if workflow.rho >= 1.0:
            raise UnstableQueueError(("all",), workflow.rho)
        class_waits = {}
        if len(structure.classes) > 1:
            pos = structure.classes[0].label
            s_pos = rates.mean_service[pos]
            s_neg = rates.mean_service[NEGATIVE_LABEL]
            rho_pos = rates.arrival[pos] * (0.0 if rates.probability[pos] <= 0 else s_pos)
            if rho_pos >= 1.0:
                raise UnstableQueueError((pos,), rho_pos)
            if rates.probability[pos] <= 0.0:
                class_waits[pos] = math.nan
                head = 0.0
            else:
                head = s_pos * rho_pos / (1.0 - rho_pos)
                class_waits[pos] = head
            class_waits[NEGATIVE_LABEL] = (
                s_neg * ((s_pos / s_neg) * rho_pos / (1.0 - rho_pos) + workflow.rho)
                / (1.0 - workflow.rho)
                if rates.probability[NEGATIVE_LABEL] > 0
                else math.nan
            )
        else:
            class_waits[NEGATIVE_LABEL] = fifo_baseline_wait(workflow)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _assemble(workflow, structure, class_waits, method)


def nonpreemptive_hierarchical_waits(workflow: Workflow, method: str = "exact") -> TheoryResult:
    """Per-device classes without preemption: Cobham on the class rates.

    Unequal read times are fully supported; the class read-time mixtures
    enter through their first two moments.
    """
    _require_single_server(workflow)
    if method != "exact":
        raise ValueError(f"unknown method {method!r}")
    structure = derive_priority_structure(workflow, HIERARCHICAL, NONPREEMPTIVE)
    rates = class_service_moments(workflow, structure)
    class_waits = _head_of_line_waits(rates, preemptive=False)
    return _assemble(workflow, structure, class_waits, method)


def _assemble(
    workflow: Workflow, structure: PriorityStructure, class_waits: dict, method: str
) -> TheoryResult:
    baseline = fifo_baseline_wait(workflow)
    disease_waits = {}
    for d in workflow.diseases:
        if workflow.disease_mass(d.name) <= 0.0:
            disease_waits[d.name] = math.nan
            continue
        post = posterior_classes_given_disease(workflow, structure, d.name)
        disease_waits[d.name] = per_disease_waits(class_waits, post)
    deltas = wait_difference(disease_waits, baseline)
    return TheoryResult(
        discipline=structure.discipline,
        protocol=structure.protocol,
        method=method,
        baseline_wait=baseline,
        class_waits=class_waits,
        disease_waits=disease_waits,
        disease_deltas=deltas,
    )


def theory_waits(
    workflow: Workflow, discipline: str, protocol: str, method: str | None = None
) -> TheoryResult:
    """Dispatch to the configuration-specific computation.

    ``method=None`` selects ``exact`` everywhere (the simulator-verified
    path); the named alternatives are listed in :data:`METHODS`.
    """
    key = (discipline, protocol)
    if key not in METHODS:
        raise ValueError(f"unknown configuration {key!r}")
    chosen = method or "exact"
    if chosen not in METHODS[key]:
        raise ValueError(f"method {chosen!r} not available for {key!r}")
    if key == (PREEMPTIVE, PRIORITY):
        return preemptive_priority_waits(workflow, chosen)
    if key == (PREEMPTIVE, HIERARCHICAL):
        return preemptive_hierarchical_waits(workflow, chosen)
    if key == (NONPREEMPTIVE, PRIORITY):
        return nonpreemptive_priority_waits(workflow, chosen)
    return nonpreemptive_hierarchical_waits(workflow, chosen)
