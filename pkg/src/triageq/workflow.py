"""Declarative model of an AI-assisted radiology reading queue.

A workflow bundles image groups, ranked disease conditions, and triage
devices together with the arrival process.  ``validate`` turns a raw
:class:`WorkflowSpec` into an immutable :class:`Workflow` with the derived
quantities (effective reading rate, arrival rate, subgroup mix) precomputed;
both the analytical engine and the simulator consume the validated form.

Conventions fixed here and relied on everywhere else:

* disease prevalence is *within its image group*; the global mass of a
  disease is ``group probability * prevalence``,
* a case carries at most one disease, and each disease belongs to exactly
  one group, so the subgroups (each disease, plus one non-diseased subgroup
  per group) partition the arrival stream,
* rank 1 is the most time-sensitive condition; rank values need not be
  contiguous, only their order matters,
* a disease without a triage device behaves exactly like one whose device
  has sensitivity 0 and specificity 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import yaml

from .errors import ConfigError, WorkflowValidationError

PRIORITY = "priority"
HIERARCHICAL = "hierarchical"
PROTOCOLS = (PRIORITY, HIERARCHICAL)

PREEMPTIVE = "preemptive"
NONPREEMPTIVE = "nonpreemptive"
DISCIPLINES = (PREEMPTIVE, NONPREEMPTIVE)

POSITIVE_LABEL = "positive"
NEGATIVE_LABEL = "negative"

#: group probabilities may be off by at most this much before validation fails
GROUP_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ImageGroup:
    """A set of images admitted by the same inclusion criteria."""

    name: str
    probability: float
    nd_read_time: float  # mean read time for non-diseased images, minutes


@dataclass(frozen=True)
class DiseaseCondition:
    name: str
    group: str
    rank: int  # 1 = most time-sensitive; unique across the workflow
    prevalence: float  # within the group
    read_time: float  # mean read time for images with this disease, minutes


@dataclass(frozen=True)
class AIDevice:
    """A triage device characterised only by its binary operating point."""

    name: str
    target: str | None  # disease name; None makes the device inert
    sensitivity: float
    specificity: float


@dataclass(frozen=True)
class WorkflowSpec:
    """Raw, as-written workflow description (unvalidated)."""

    groups: tuple[ImageGroup, ...]
    diseases: tuple[DiseaseCondition, ...]
    ais: tuple[AIDevice, ...]
    rho: float | None = None  # traffic intensity, exclusive with lam
    lam: float | None = None  # overall arrival rate, images per minute
    servers: int = 1

    @staticmethod
    def from_dict(data: dict) -> "WorkflowSpec":
        try:
            groups = tuple(
                ImageGroup(g["name"], float(g["prob"]), float(g["nd_read_time_min"]))
                for g in data.get("groups", [])
            )
            diseases = tuple(
                DiseaseCondition(
                    d["name"],
                    d["group"],
                    int(d["rank"]),
                    float(d["prevalence"]),
                    float(d["read_time_min"]),
                )
                for d in data.get("diseases", [])
            )
            ais = tuple(
                AIDevice(
                    a["name"],
                    a.get("target"),
                    float(a["sensitivity"]),
                    float(a["specificity"]),
                )
                for a in data.get("ais", [])
            )
            arrival = data.get("arrival", {}) or {}
            rho = arrival.get("rho")
            lam = arrival.get("lambda_per_min")
            servers = int(data.get("servers", 1))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed workflow config: {exc!r}") from exc
        return WorkflowSpec(
            groups=groups,
            diseases=diseases,
            ais=ais,
            rho=None if rho is None else float(rho),
            lam=None if lam is None else float(lam),
            servers=servers,
        )

    def to_dict(self) -> dict:
        arrival = {}
        if self.rho is not None:
            arrival["rho"] = self.rho
        if self.lam is not None:
            arrival["lambda_per_min"] = self.lam
        return {
            "groups": [
                {"name": g.name, "prob": g.probability, "nd_read_time_min": g.nd_read_time}
                for g in self.groups
            ],
            "diseases": [
                {
                    "name": d.name,
                    "group": d.group,
                    "rank": d.rank,
                    "prevalence": d.prevalence,
                    "read_time_min": d.read_time,
                }
                for d in self.diseases
            ],
            "ais": [
                {
                    "name": a.name,
                    "target": a.target,
                    "sensitivity": a.sensitivity,
                    "specificity": a.specificity,
                }
                for a in self.ais
            ],
            "arrival": arrival,
            "servers": self.servers,
        }


def load_config(path) -> WorkflowSpec:
    """Read a workflow config file (YAML or JSON) into a WorkflowSpec."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must contain a mapping at top level")
    return WorkflowSpec.from_dict(data)


@dataclass(frozen=True)
class PriorityClass:
    """One class of the with-AI queue; ``ais`` lists the devices whose
    positive calls land a case in this class (empty for the terminal
    AI-negative class)."""

    label: str
    ais: tuple[str, ...]


@dataclass(frozen=True)
class PriorityStructure:
    protocol: str
    discipline: str
    classes: tuple[PriorityClass, ...]  # ordered high to low; last is negative

    @property
    def positive_classes(self) -> tuple[PriorityClass, ...]:
        return self.classes[:-1]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(c.label for c in self.classes)


@dataclass(frozen=True)
class Workflow:
    """Validated, immutable workflow with derived quantities.

    Safe to share across threads/processes; everything is read-only after
    construction.
    """

    spec: WorkflowSpec
    groups: tuple[ImageGroup, ...]
    diseases: tuple[DiseaseCondition, ...]  # sorted by rank
    real_ais: tuple[AIDevice, ...]  # targeted devices, sorted by target rank
    lam: float  # overall arrival rate, per minute
    rho: float  # traffic intensity lam * E[S]
    mean_service: float  # E[S] over the whole population, minutes
    second_moment_service: float  # E[S^2], minutes^2
    servers: int = 1
    _group_index: dict = field(default_factory=dict, repr=False)
    _disease_index: dict = field(default_factory=dict, repr=False)
    _ai_by_target: dict = field(default_factory=dict, repr=False)

    # -- lookups -----------------------------------------------------------

    def group(self, name: str) -> ImageGroup:
        return self._group_index[name]

    def disease(self, name: str) -> DiseaseCondition:
        return self._disease_index[name]

    def diseases_in(self, group: str) -> tuple[DiseaseCondition, ...]:
        return tuple(d for d in self.diseases if d.group == group)

    def ai_for(self, disease: str) -> AIDevice | None:
        """The targeted device for a disease, or None if it has none."""
        return self._ai_by_target.get(disease)

    def ais_in(self, group: str) -> tuple[AIDevice, ...]:
        """Targeted devices whose inclusion group is ``group``, rank order."""
        return tuple(a for a in self.real_ais if self.disease(a.target).group == group)

    def ai(self, name: str) -> AIDevice:
        for a in self.real_ais:
            if a.name == name:
                return a
        raise KeyError(name)

    # -- derived fractions -------------------------------------------------

    def nd_fraction(self, group: str) -> float:
        """Within-group fraction of non-diseased images."""
        return 1.0 - sum(d.prevalence for d in self.diseases_in(group))

    def subgroups(self):
        """Partition of the population into (label, probability, read time).

        Labels are disease names for diseased subgroups and ``("nd", group)``
        for the non-diseased remainder of each group.  Probabilities sum to 1.
        """
        out = []
        for g in self.groups:
            for d in self.diseases_in(g.name):
                out.append((d.name, g.probability * d.prevalence, d.read_time))
            out.append((("nd", g.name), g.probability * self.nd_fraction(g.name), g.nd_read_time))
        return out

    def disease_mass(self, name: str) -> float:
        """Global probability that a case has this disease."""
        d = self.disease(name)
        return self.group(d.group).probability * d.prevalence

    def subgroup_rates(self) -> dict:
        """Poisson rate of each subgroup; values sum to the overall rate."""
        return {label: q * self.lam for label, q, _ in self.subgroups()}

    def with_spec(self, **changes) -> "Workflow":
        """Re-validate after changing spec fields (used by parameter sweeps)."""
        return validate(replace(self.spec, **changes))


def _check(violations: list, ok: bool, message: str) -> None:
    if not ok:
        violations.append(message)


def validate(spec: WorkflowSpec) -> Workflow:
    """Check every invariant of a workflow spec and normalize it.

    Raises :class:`WorkflowValidationError` carrying the full violation list;
    on success returns an immutable :class:`Workflow`.
    """
    v: list[str] = []

    group_names = [g.name for g in spec.groups]
    _check(v, len(spec.groups) > 0, "workflow needs at least one image group")
    _check(v, len(set(group_names)) == len(group_names), "duplicate group names")
    gsum = sum(g.probability for g in spec.groups)
    _check(
        v,
        abs(gsum - 1.0) <= GROUP_SUM_TOL,
        f"group probabilities sum != 1 (got {gsum!r})",
    )
    for g in spec.groups:
        _check(v, 0.0 <= g.probability <= 1.0, f"group {g.name}: probability outside [0, 1]")
        _check(v, g.nd_read_time > 0, f"group {g.name}: non-diseased read time must be > 0")

    disease_names = [d.name for d in spec.diseases]
    _check(v, len(set(disease_names)) == len(disease_names), "duplicate disease names")
    ranks = [d.rank for d in spec.diseases]
    _check(v, len(set(ranks)) == len(ranks), "disease ranks must be unique")
    for d in spec.diseases:
        _check(v, d.group in group_names, f"disease {d.name}: unknown group {d.group!r}")
        _check(v, d.rank >= 1, f"disease {d.name}: rank must be a positive integer")
        _check(v, d.prevalence >= 0.0, f"disease {d.name}: prevalence must be >= 0")
        _check(v, d.read_time > 0, f"disease {d.name}: read time must be > 0")
    for g in spec.groups:
        psum = sum(d.prevalence for d in spec.diseases if d.group == g.name)
        _check(
            v,
            psum <= 1.0 + 1e-12,
            f"group {g.name}: within-group prevalences sum to {psum!r} > 1",
        )

    ai_names = [a.name for a in spec.ais]
    _check(v, len(set(ai_names)) == len(ai_names), "duplicate AI names")
    targeted = [a.target for a in spec.ais if a.target is not None]
    _check(v, len(set(targeted)) == len(targeted), "at most one AI per disease")
    for a in spec.ais:
        if a.target is not None:
            _check(v, a.target in disease_names, f"AI {a.name}: unknown target {a.target!r}")
        _check(v, 0.0 <= a.sensitivity <= 1.0, f"AI {a.name}: sensitivity outside [0, 1]")
        _check(v, 0.0 <= a.specificity <= 1.0, f"AI {a.name}: specificity outside [0, 1]")

    _check(
        v,
        (spec.rho is None) != (spec.lam is None),
        "arrival must give exactly one of rho or lambda_per_min",
    )
    if spec.rho is not None:
        _check(v, 0.0 <= spec.rho < 1.0, f"rho must be in [0, 1), got {spec.rho!r}")
    if spec.lam is not None:
        _check(v, spec.lam >= 0.0, "lambda_per_min must be >= 0")
    _check(v, isinstance(spec.servers, int) and spec.servers >= 1, "servers must be a positive integer")

    if v:
        raise WorkflowValidationError(v)

    # Normalize group probabilities exactly so downstream closure checks hold
    # at machine precision even when the config carries 1e-10 slack.
    groups = tuple(
        ImageGroup(g.name, g.probability / gsum, g.nd_read_time) for g in spec.groups
    )
    diseases = tuple(sorted(spec.diseases, key=lambda d: d.rank))
    by_name = {d.name: d for d in diseases}
    real_ais = tuple(
        sorted(
            (a for a in spec.ais if a.target is not None),
            key=lambda a: by_name[a.target].rank,
        )
    )

    mean_s = 0.0
    second = 0.0
    for g in groups:
        pi_sum = 0.0
        for d in diseases:
            if d.group == g.name:
                mean_s += g.probability * d.prevalence * d.read_time
                second += g.probability * d.prevalence * 2.0 * d.read_time**2
                pi_sum += d.prevalence
        nd = 1.0 - pi_sum
        mean_s += g.probability * nd * g.nd_read_time
        second += g.probability * nd * 2.0 * g.nd_read_time**2

    if spec.rho is not None:
        rho = spec.rho
        lam = rho / mean_s
    else:
        lam = spec.lam
        rho = lam * mean_s

    return Workflow(
        spec=spec,
        groups=groups,
        diseases=diseases,
        real_ais=real_ais,
        lam=lam,
        rho=rho,
        mean_service=mean_s,
        second_moment_service=second,
        servers=spec.servers,
        _group_index={g.name: g for g in groups},
        _disease_index=by_name,
        _ai_by_target={a.target: a for a in real_ais},
    )


def mu_effective(workflow: Workflow) -> float:
    """Effective reading rate: reciprocal of the population mean read time."""
    return 1.0 / workflow.mean_service


def resolve_arrival(workflow: Workflow) -> float:
    """Overall arrival rate per minute (rho * mu_effective when rho given)."""
    return workflow.lam


def derive_priority_structure(
    workflow: Workflow, protocol: str, discipline: str
) -> PriorityStructure:
    """Class system of the with-AI queue under the given protocol.

    The priority protocol pools every device's positives into one class;
    the hierarchical protocol gives each targeted device its own class,
    ordered by the rank of its target.  Both end with the AI-negative class.
    A workflow without any targeted device degenerates to the single
    negative class (the with-AI queue is then plain FIFO).
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if discipline not in DISCIPLINES:
        raise ValueError(f"unknown discipline {discipline!r}")
    names = tuple(a.name for a in workflow.real_ais)
    if not names:
        classes = (PriorityClass(NEGATIVE_LABEL, ()),)
    elif protocol == PRIORITY:
        classes = (
            PriorityClass(POSITIVE_LABEL, names),
            PriorityClass(NEGATIVE_LABEL, ()),
        )
    else:
        classes = tuple(PriorityClass(n, (n,)) for n in names) + (
            PriorityClass(NEGATIVE_LABEL, ()),
        )
    return PriorityStructure(protocol=protocol, discipline=discipline, classes=classes)
