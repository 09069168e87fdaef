"""Class-membership probabilities and per-class service moments.

Everything here is an exact consequence of three modelling assumptions:
cases land in exactly one subgroup (disease or non-diseased within their
group), devices only see images of their own group, and device calls are
conditionally independent given the case's disease status.  A case's class
is the highest-ranked device that called it positive, so the joint mass of
(subgroup, class) factorises into prevalence terms times sensitivity /
specificity factors of the devices ranked at or above the class.

The public surface works with *joint* probabilities internally and divides
by the class mass only at the edge, which keeps empty classes (mass zero)
representable: they propagate as zero-rate classes rather than NaNs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import EmptyClassError
from .workflow import (
    NEGATIVE_LABEL,
    PRIORITY,
    PriorityStructure,
    Workflow,
)

ND = "nd"  # key prefix for non-diseased composition entries


@dataclass(frozen=True)
class ClassProbabilities:
    """Marginal class masses: one entry per targeted device plus the rest."""

    positive: dict  # AI name -> probability its class receives a case
    negative: float

    @property
    def total_positive(self) -> float:
        return sum(self.positive.values())


@dataclass(frozen=True)
class ClassComposition:
    """Conditional mix of one class.

    ``diseased`` maps disease name to P(disease | class); ``nondiseased``
    maps group name to P(non-diseased and that group | class).  The values
    sum to 1 for a non-empty class.
    """

    label: str
    probability: float  # class mass among all cases
    diseased: dict
    nondiseased: dict

    def total(self) -> float:
        return sum(self.diseased.values()) + sum(self.nondiseased.values())


@dataclass(frozen=True)
class ClassRates:
    """Arrival rate and service moments per class of a priority structure.

    ``second_moment`` is the raw second moment of the class's read-time
    distribution (a mixture of exponentials, so each component contributes
    2 * mean^2).  Empty classes carry zero arrival rate and NaN moments.
    """

    labels: tuple
    probability: dict  # label -> class mass
    arrival: dict  # label -> cases per minute
    mean_service: dict  # label -> minutes
    second_moment: dict  # label -> minutes^2


def _higher_ais(workflow: Workflow, ai) -> list:
    """Devices in the same group whose target outranks ``ai``'s target."""
    target = workflow.disease(ai.target)
    return [
        other
        for other in workflow.ais_in(target.group)
        if workflow.disease(other.target).rank < target.rank
    ]


def _joint_positive(workflow: Workflow, ai_name: str):
    """Joint mass of (subgroup, lands in this device's class).

    Returns ``(diseased, nondiseased)`` dicts of joint probabilities; their
    sum is the class mass.  A case lands here when this device fires and
    every higher-ranked device of the group stays silent, so each term is
    the subgroup mass times the matching true/false call factors.
    """
    ai = workflow.ai(ai_name)
    target = workflow.disease(ai.target)
    group = workflow.group(target.group)
    higher = _higher_ais(workflow, ai)
    silence = math.prod(a.specificity for a in higher)

    diseased = {}
    for d in workflow.diseases_in(group.name):
        if d.name == target.name:
            val = d.prevalence * ai.sensitivity * silence
        elif d.rank < target.rank:
            own = workflow.ai_for(d.name)
            if own is not None:
                # the outranking device missed its own target (false negative)
                others = math.prod(a.specificity for a in higher if a.name != own.name)
                val = d.prevalence * (1.0 - own.sensitivity) * (1.0 - ai.specificity) * others
            else:
                val = d.prevalence * (1.0 - ai.specificity) * silence
        else:
            # lower-ranked condition swept up as a false positive; calls of
            # devices ranked below ai never affect membership here
            val = d.prevalence * (1.0 - ai.specificity) * silence
        diseased[d.name] = group.probability * val

    nd = group.probability * workflow.nd_fraction(group.name) * (1.0 - ai.specificity) * silence
    return diseased, {group.name: nd}


def _joint_negative(workflow: Workflow):
    """Joint mass of (subgroup, negative for every device of its group)."""
    diseased = {}
    nondiseased = {}
    for g in workflow.groups:
        ais = workflow.ais_in(g.name)
        for d in workflow.diseases_in(g.name):
            own = workflow.ai_for(d.name)
            val = d.prevalence
            if own is not None:
                val *= 1.0 - own.sensitivity
            val *= math.prod(a.specificity for a in ais if own is None or a.name != own.name)
            diseased[d.name] = g.probability * val
        nondiseased[g.name] = (
            g.probability * workflow.nd_fraction(g.name) * math.prod(a.specificity for a in ais)
        )
    return diseased, nondiseased


def class_probability_positive(workflow: Workflow, ai_name: str) -> float:
    """Probability that a case lands in the named device's class."""
    diseased, nondiseased = _joint_positive(workflow, ai_name)
    return sum(diseased.values()) + sum(nondiseased.values())


def class_probabilities(workflow: Workflow) -> ClassProbabilities:
    positive = {a.name: class_probability_positive(workflow, a.name) for a in workflow.real_ais}
    return ClassProbabilities(positive=positive, negative=1.0 - sum(positive.values()))


def set_positive_probability(workflow: Workflow, ai_names) -> float:
    """Mass of the union of the given devices' classes.

    Because the classes partition the AI-positive population, the union mass
    is a plain sum; callers pass rank prefixes when peeling the hierarchy.
    """
    return sum(class_probability_positive(workflow, name) for name in ai_names)


def composition_of_positive_class(workflow: Workflow, ai_name: str) -> ClassComposition:
    diseased, nondiseased = _joint_positive(workflow, ai_name)
    p = sum(diseased.values()) + sum(nondiseased.values())
    if p <= 0.0:
        raise EmptyClassError(f"empty class: device {ai_name} never fires")
    return ClassComposition(
        label=ai_name,
        probability=p,
        diseased={k: val / p for k, val in diseased.items()},
        nondiseased={k: val / p for k, val in nondiseased.items()},
    )


def composition_of_negative_class(workflow: Workflow) -> ClassComposition:
    diseased, nondiseased = _joint_negative(workflow)
    p = sum(diseased.values()) + sum(nondiseased.values())
    if p <= 0.0:
        raise EmptyClassError("empty class: no case is negative for every device")
    return ClassComposition(
        label=NEGATIVE_LABEL,
        probability=p,
        diseased={k: val / p for k, val in diseased.items()},
        nondiseased={k: val / p for k, val in nondiseased.items()},
    )


def posterior_class_given_disease(workflow: Workflow, disease: str) -> dict:
    """P(class | disease) over the per-device classes plus the negative rest.

    Bayes on the joint masses: P(class | b) = joint(b, class) / P(b).  Keys
    are device names and ``"negative"``; devices from other groups get an
    explicit 0.  Raises for a zero-mass disease, where the posterior is
    undefined.
    """
    mass = workflow.disease_mass(disease)
    if mass <= 0.0:
        raise EmptyClassError(f"posterior undefined: disease {disease} has zero mass")
    out = {}
    for ai in workflow.real_ais:
        joint_d, _ = _joint_positive(workflow, ai.name)
        out[ai.name] = joint_d.get(disease, 0.0) / mass
    joint_d, _ = _joint_negative(workflow)
    out[NEGATIVE_LABEL] = joint_d[disease] / mass
    return out


def posterior_classes_given_disease(
    workflow: Workflow, structure: PriorityStructure, disease: str
) -> dict:
    """Posterior re-keyed by the labels of a priority structure."""
    per_ai = posterior_class_given_disease(workflow, disease)
    out = {}
    for cls in structure.positive_classes:
        out[cls.label] = sum(per_ai[name] for name in cls.ais)
    out[NEGATIVE_LABEL] = per_ai[NEGATIVE_LABEL]
    return out


def _accumulate_moments(workflow: Workflow, diseased: dict, nondiseased: dict):
    """(mass, mean, second moment) of the exponential mixture with the given
    joint weights; the weights need not be normalized."""
    p = sum(diseased.values()) + sum(nondiseased.values())
    if p <= 0.0:
        return 0.0, math.nan, math.nan
    mean = 0.0
    second = 0.0
    for name, weight in diseased.items():
        s = workflow.disease(name).read_time
        mean += weight * s
        second += weight * 2.0 * s * s
    for gname, weight in nondiseased.items():
        s = workflow.group(gname).nd_read_time
        mean += weight * s
        second += weight * 2.0 * s * s
    return p, mean / p, second / p


def class_service_moments(workflow: Workflow, structure: PriorityStructure) -> ClassRates:
    """Arrival rate and hyperexponential read-time moments per class.

    Class arrivals are independent thinnings of the overall Poisson stream,
    so the rate is simply class mass times the overall rate.  The read time
    of a class mixes the exponential read times of the subgroups it drains,
    weighted by the class composition.
    """
    probability, arrival, mean_service, second_moment = {}, {}, {}, {}
    for cls in structure.positive_classes:
        dis_acc: dict = {}
        nd_acc: dict = {}
        for name in cls.ais:
            diseased, nondiseased = _joint_positive(workflow, name)
            for k, val in diseased.items():
                dis_acc[k] = dis_acc.get(k, 0.0) + val
            for k, val in nondiseased.items():
                nd_acc[k] = nd_acc.get(k, 0.0) + val
        p, mean, second = _accumulate_moments(workflow, dis_acc, nd_acc)
        probability[cls.label] = p
        arrival[cls.label] = p * workflow.lam
        mean_service[cls.label] = mean
        second_moment[cls.label] = second

    diseased, nondiseased = _joint_negative(workflow)
    p, mean, second = _accumulate_moments(workflow, diseased, nondiseased)
    probability[NEGATIVE_LABEL] = p
    arrival[NEGATIVE_LABEL] = p * workflow.lam
    mean_service[NEGATIVE_LABEL] = mean
    second_moment[NEGATIVE_LABEL] = second

    return ClassRates(
        labels=structure.labels,
        probability=probability,
        arrival=arrival,
        mean_service=mean_service,
        second_moment=second_moment,
    )


@dataclass(frozen=True)
class EffectiveRates:
    """Two readings of the 2-class effective arrival rates.

    ``lam_pos`` / ``lam_neg`` treat each class as a thinned Poisson stream
    (rate = class mass x overall rate).  That is exactly what the
    superposition of independently thinned subgroup streams is, it is what
    the simulator reproduces, and it is the path the analytical engine uses.

    ``lam_pos_harmonic`` / ``lam_neg_harmonic`` instead compose each class's
    mean inter-arrival time as the composition-weighted sum of subgroup mean
    inter-arrival times (per device class, then superposed for the pooled
    positive side).  Averaging inter-arrival times is not how superposed
    Poisson streams combine, so this reading is only near-exact when a class
    drains essentially one subgroup; for sprawling classes it can be off by
    large factors.  Both are reported so the discrepancy is visible instead
    of silently absorbed.
    """

    lam_pos: float
    lam_neg: float
    lam_pos_harmonic: float
    lam_neg_harmonic: float
    mu_pos: float
    mu_neg: float

    @property
    def discrepancy_pos(self) -> float:
        return abs(self.lam_pos_harmonic - self.lam_pos) / self.lam_pos

    @property
    def discrepancy_neg(self) -> float:
        return abs(self.lam_neg_harmonic - self.lam_neg) / self.lam_neg


def _harmonic_rate(workflow: Workflow, diseased: dict, nondiseased: dict) -> float:
    """Mean-inter-arrival composition of a class from its joint weights."""
    p = sum(diseased.values()) + sum(nondiseased.values())
    if p <= 0.0:
        raise EmptyClassError("degenerate mixture: empty class")
    rates = workflow.subgroup_rates()
    inv = 0.0
    for name, weight in diseased.items():
        if weight <= 0.0:
            continue
        rate = rates[name]
        if rate <= 0.0:
            raise EmptyClassError(f"degenerate mixture: subgroup {name} has zero rate")
        inv += (weight / p) / rate
    for gname, weight in nondiseased.items():
        if weight <= 0.0:
            continue
        rate = rates[(ND, gname)]
        if rate <= 0.0:
            raise EmptyClassError(f"degenerate mixture: nd subgroup {gname} has zero rate")
        inv += (weight / p) / rate
    return 1.0 / inv


def effective_positive_arrival(workflow: Workflow) -> EffectiveRates:
    """Effective 2-class rates for the pooled-positive (priority) view."""
    dis_pos: dict = {}
    nd_pos: dict = {}
    harmonic_pos = 0.0
    for ai in workflow.real_ais:
        diseased, nondiseased = _joint_positive(workflow, ai.name)
        if sum(diseased.values()) + sum(nondiseased.values()) > 0.0:
            harmonic_pos += _harmonic_rate(workflow, diseased, nondiseased)
        for k, val in diseased.items():
            dis_pos[k] = dis_pos.get(k, 0.0) + val
        for k, val in nondiseased.items():
            nd_pos[k] = nd_pos.get(k, 0.0) + val
    dis_neg, nd_neg = _joint_negative(workflow)

    p_pos = sum(dis_pos.values()) + sum(nd_pos.values())
    p_neg = sum(dis_neg.values()) + sum(nd_neg.values())
    _, s_pos, _ = _accumulate_moments(workflow, dis_pos, nd_pos)
    _, s_neg, _ = _accumulate_moments(workflow, dis_neg, nd_neg)

    return EffectiveRates(
        lam_pos=p_pos * workflow.lam,
        lam_neg=p_neg * workflow.lam,
        lam_pos_harmonic=harmonic_pos if p_pos > 0.0 else math.nan,
        lam_neg_harmonic=(
            _harmonic_rate(workflow, dis_neg, nd_neg) if p_neg > 0.0 else math.nan
        ),
        mu_pos=1.0 / s_pos if p_pos > 0 else math.nan,
        mu_neg=1.0 / s_neg if p_neg > 0 else math.nan,
    )
