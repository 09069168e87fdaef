"""Built-in study scenarios, parameter sweeps, and the agreement metric.

The four bundled scenarios form a complexity ladder over brain-CT reading
queues (two groups, up to three conditions, one or two triage devices) plus
a synthetic five-group, nine-condition, four-device stress case.  Sweeps
rebuild the workflow at every grid point, evaluate the analytical engine
and the trial simulator side by side, and report the relative error of the
per-disease wait-time difference.

Operating-point sweeps move a device along an equal-variance binormal ROC
curve fitted through its configured (sensitivity, specificity) point.  A
single point underdetermines a two-parameter binormal fit, so the unit
slope is a modelling choice, not an estimate; the curve should be read as a
plausible family of operating points anchored at the device's published
performance.
"""

from __future__ import annotations

import importlib.resources
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigError
from .sim import run_trials_multi
from .theory import theory_waits
from .workflow import (
    HIERARCHICAL,
    NONPREEMPTIVE,
    PREEMPTIVE,
    PRIORITY,
    Workflow,
    WorkflowSpec,
    load_config,
    validate,
)

ALL_CONFIGURATIONS = (
    (PREEMPTIVE, PRIORITY),
    (PREEMPTIVE, HIERARCHICAL),
    (NONPREEMPTIVE, PRIORITY),
    (NONPREEMPTIVE, HIERARCHICAL),
)

#: wait-time differences smaller than this (minutes) sit too close to the
#: zero crossing for a meaningful relative error
DEFAULT_DELTA_FLOOR = 0.5

_EXPERIMENT_FILES = {1: "exp1.yaml", 2: "exp2.yaml", 3: "exp3.yaml", 4: "exp4.yaml"}


@dataclass(frozen=True)
class RocCurve:
    """Equal-variance binormal ROC through one (Se, Sp) anchor.

    TPR(FPR) = Phi(a + Phi^-1(FPR)) with a = Phi^-1(Se) + Phi^-1(Sp); the
    curve passes through the anchor exactly and through (0,0) and (1,1).
    """

    anchor: tuple  # (sensitivity, specificity)
    separation: float
    points: tuple  # ((fpr, tpr), ...) ordered by fpr

    def operating_points(self) -> list:
        """(sensitivity, specificity) pairs along the curve."""
        return [(tpr, 1.0 - fpr) for fpr, tpr in self.points]


def binormal_roc(anchor_se: float, anchor_sp: float, n_points: int = 21) -> RocCurve:
    if not (0.0 < anchor_se < 1.0 and 0.0 < anchor_sp < 1.0):
        raise ValueError(
            "binormal anchor must be strictly inside (0, 1) on both axes; "
            "the separation parameter is undefined on the boundary"
        )
    a = float(ndtri(anchor_se) + ndtri(anchor_sp))
    fpr = np.linspace(0.0, 1.0, n_points)
    with np.errstate(divide="ignore"):
        tpr = ndtr(a + ndtri(fpr))
    points = tuple((float(f), float(t)) for f, t in zip(fpr, tpr))
    return RocCurve(anchor=(anchor_se, anchor_sp), separation=a, points=points)


@dataclass(frozen=True)
class Scenario:
    name: str
    spec: WorkflowSpec
    configurations: tuple = ALL_CONFIGURATIONS
    sweeps: dict | None = None  # default grids per sweep kind

    def workflow(self) -> Workflow:
        return validate(self.spec)


def build_experiment(exp_id: int) -> Scenario:
    """Load one of the bundled scenarios (1..4) from its packaged config."""
    if exp_id not in _EXPERIMENT_FILES:
        raise ValueError(f"experiment id must be one of {sorted(_EXPERIMENT_FILES)}")
    ref = importlib.resources.files("triageq.configs") / _EXPERIMENT_FILES[exp_id]
    with importlib.resources.as_file(ref) as path:
        spec = load_config(path)
    return Scenario(
        name=f"exp{exp_id}",
        spec=spec,
        sweeps={
            "traffic": (0.3, 0.5, 0.7, 0.8, 0.9),
            "roc_points": 21,
            "prevalence": (0.05, 0.2, 0.4),
            "readtime_ratio": (0.5, 1.0, 2.0),
        },
    )


def scenario_from_config(path) -> Scenario:
    import os

    return Scenario(name=os.path.splitext(os.path.basename(str(path)))[0], spec=load_config(path))


def relative_error(theory_delta: float, sim_delta: float, floor: float = DEFAULT_DELTA_FLOOR) -> float:
    """(theory - simulation) / theory on the wait-time difference.

    Returns NaN when |theory| is below the floor: near a zero crossing the
    ratio is dominated by the denominator, not by disagreement.
    """
    if not math.isfinite(theory_delta) or abs(theory_delta) < floor:
        return math.nan
    return (theory_delta - sim_delta) / theory_delta


@dataclass(frozen=True)
class AgreementRow:
    scenario: str
    discipline: str
    protocol: str
    sweep: str
    param: float
    disease: str
    rho: float
    baseline_wait: float
    theory_wait: float
    theory_delta: float
    sim_wait_fifo: float
    sim_wait_ai: float
    sim_delta: float
    ci_lo: float
    ci_hi: float
    n: int
    re: float
    flag: str  # "ok", "below_floor", "empty", "no_sim"


@dataclass(frozen=True)
class AgreementReport:
    scenario: str
    sweep: str
    rows: tuple

    def select(self, **match) -> list:
        out = []
        for r in self.rows:
            if all(getattr(r, k) == v for k, v in match.items()):
                out.append(r)
        return out


def _agreement_rows(
    scenario_name: str,
    workflow: Workflow,
    configurations,
    sweep: str,
    param: float,
    n_trials: int,
    n_patients: int,
    seed_path,
    warmup_fraction: float,
    floor: float,
    skip_sim: bool = False,
    threads: int = 1,
) -> list:
    theories = {cfg: theory_waits(workflow, *cfg) for cfg in configurations}
    sims = None
    if not skip_sim:
        sims = run_trials_multi(
            workflow,
            configurations,
            n_trials,
            n_patients,
            seed_path,
            warmup_fraction=warmup_fraction,
            threads=threads,
        )
    rows = []
    for cfg in configurations:
        th = theories[cfg]
        sim = sims[cfg] if sims else None
        for d in workflow.diseases:
            t_delta = th.disease_deltas[d.name]
            if sim is None:
                rows.append(
                    AgreementRow(
                        scenario=scenario_name,
                        discipline=cfg[0],
                        protocol=cfg[1],
                        sweep=sweep,
                        param=param,
                        disease=d.name,
                        rho=workflow.rho,
                        baseline_wait=th.baseline_wait,
                        theory_wait=th.disease_waits[d.name],
                        theory_delta=t_delta,
                        sim_wait_fifo=math.nan,
                        sim_wait_ai=math.nan,
                        sim_delta=math.nan,
                        ci_lo=math.nan,
                        ci_hi=math.nan,
                        n=0,
                        re=math.nan,
                        flag="no_sim",
                    )
                )
                continue
            stat = sim.diseases[d.name]
            if stat.n_cases == 0 or not math.isfinite(t_delta):
                flag = "empty"
                re = math.nan
            else:
                re = relative_error(t_delta, stat.mean_delta, floor)
                flag = "ok" if math.isfinite(re) else "below_floor"
            rows.append(
                AgreementRow(
                    scenario=scenario_name,
                    discipline=cfg[0],
                    protocol=cfg[1],
                    sweep=sweep,
                    param=param,
                    disease=d.name,
                    rho=workflow.rho,
                    baseline_wait=th.baseline_wait,
                    theory_wait=th.disease_waits[d.name],
                    theory_delta=t_delta,
                    sim_wait_fifo=stat.mean_wait_fifo,
                    sim_wait_ai=stat.mean_wait_ai,
                    sim_delta=stat.mean_delta,
                    ci_lo=stat.delta_ci[0],
                    ci_hi=stat.delta_ci[1],
                    n=stat.n_cases,
                    re=re,
                    flag=flag,
                )
            )
    return rows


def sweep_traffic(
    scenario: Scenario,
    rho_grid,
    configurations=None,
    n_trials: int = 100,
    n_patients: int = 10_000,
    base_seed: int = 0,
    warmup_fraction: float = 0.1,
    floor: float = DEFAULT_DELTA_FLOOR,
    threads: int = 1,
) -> AgreementReport:
    """Theory and simulation deltas across traffic intensities.

    Grid points at or above 1 are skipped with a warning; rho = 0 yields the
    all-zero theory point with no simulation arm.
    """
    import logging

    configurations = tuple(configurations or scenario.configurations)
    rows = []
    for pi, rho in enumerate(rho_grid):
        if rho >= 1.0:
            logging.getLogger(__name__).warning("skipping unstable rho=%s", rho)
            continue
        spec = replace(scenario.spec, rho=float(rho), lam=None)
        workflow = validate(spec)
        rows.extend(
            _agreement_rows(
                scenario.name,
                workflow,
                configurations,
                "traffic",
                float(rho),
                n_trials,
                n_patients,
                (base_seed, pi),
                warmup_fraction,
                floor,
                skip_sim=(rho == 0.0),
                threads=threads,
            )
        )
    return AgreementReport(scenario=scenario.name, sweep="traffic", rows=tuple(rows))


def _replace_ai(spec: WorkflowSpec, ai_name: str, se: float, sp: float) -> WorkflowSpec:
    ais = tuple(
        replace(a, sensitivity=se, specificity=sp) if a.name == ai_name else a for a in spec.ais
    )
    if all(a.name != ai_name for a in spec.ais):
        raise ConfigError(f"no AI named {ai_name!r} in scenario")
    return replace(spec, ais=ais)


def sweep_roc(
    scenario: Scenario,
    ai_name: str,
    curve: RocCurve | None = None,
    n_points: int = 21,
    configurations=None,
    n_trials: int = 100,
    n_patients: int = 10_000,
    base_seed: int = 0,
    warmup_fraction: float = 0.1,
    floor: float = DEFAULT_DELTA_FLOOR,
    theory_only: bool = False,
    threads: int = 1,
) -> AgreementReport:
    """Move one device along its ROC curve, all other devices fixed.

    The sweep parameter reported per row is the FPR of the operating point.
    Endpoints behave sensibly: FPR 0 is an inert device, FPR 1 flags its
    whole group.
    """
    configurations = tuple(configurations or scenario.configurations)
    base = scenario.workflow()
    device = base.ai(ai_name)
    if curve is None:
        curve = binormal_roc(device.sensitivity, device.specificity, n_points)
    rows = []
    for pi, (fpr, tpr) in enumerate(curve.points):
        spec = _replace_ai(scenario.spec, ai_name, se=tpr, sp=1.0 - fpr)
        workflow = validate(spec)
        rows.extend(
            _agreement_rows(
                scenario.name,
                workflow,
                configurations,
                f"roc:{ai_name}",
                float(fpr),
                n_trials,
                n_patients,
                (base_seed, pi),
                warmup_fraction,
                floor,
                skip_sim=theory_only,
                threads=threads,
            )
        )
    return AgreementReport(scenario=scenario.name, sweep=f"roc:{ai_name}", rows=tuple(rows))


def sweep_prevalence(
    scenario: Scenario,
    disease: str,
    grid,
    configurations=None,
    n_trials: int = 100,
    n_patients: int = 10_000,
    base_seed: int = 0,
    warmup_fraction: float = 0.1,
    floor: float = DEFAULT_DELTA_FLOOR,
    threads: int = 1,
) -> AgreementReport:
    """Vary one disease's within-group prevalence, everything else fixed.

    Points that would push the group's prevalence total above 1 are skipped
    with a warning; a zero-prevalence point leaves the subgroup empty and
    its rows flagged accordingly.
    """
    import logging

    configurations = tuple(configurations or scenario.configurations)
    rows = []
    for pi, prev in enumerate(grid):
        diseases = tuple(
            replace(d, prevalence=float(prev)) if d.name == disease else d
            for d in scenario.spec.diseases
        )
        spec = replace(scenario.spec, diseases=diseases)
        target = next(d for d in diseases if d.name == disease)
        group_total = sum(d.prevalence for d in diseases if d.group == target.group)
        if group_total > 1.0 + 1e-12:
            logging.getLogger(__name__).warning(
                "skipping prevalence=%s for %s: group %s total %.4f > 1",
                prev,
                disease,
                target.group,
                group_total,
            )
            continue
        workflow = validate(spec)
        rows.extend(
            _agreement_rows(
                scenario.name,
                workflow,
                configurations,
                f"prevalence:{disease}",
                float(prev),
                n_trials,
                n_patients,
                (base_seed, pi),
                warmup_fraction,
                floor,
                threads=threads,
            )
        )
    return AgreementReport(
        scenario=scenario.name, sweep=f"prevalence:{disease}", rows=tuple(rows)
    )


def sweep_readtime(
    scenario: Scenario,
    disease: str,
    ratio_grid,
    configurations=None,
    n_trials: int = 100,
    n_patients: int = 10_000,
    base_seed: int = 0,
    warmup_fraction: float = 0.1,
    floor: float = DEFAULT_DELTA_FLOOR,
    threads: int = 1,
) -> AgreementReport:
    """Scale one disease's mean read time by each ratio.

    Restricted to the priority protocol: the hierarchical closed forms that
    assume equal read times would otherwise have to silently approximate.
    """
    configurations = tuple(
        cfg for cfg in (configurations or scenario.configurations) if cfg[1] == PRIORITY
    )
    base_time = next(d for d in scenario.spec.diseases if d.name == disease).read_time
    rows = []
    for pi, ratio in enumerate(ratio_grid):
        if ratio <= 0.0:
            raise ValueError("read-time ratio must be positive")
        diseases = tuple(
            replace(d, read_time=base_time * float(ratio)) if d.name == disease else d
            for d in scenario.spec.diseases
        )
        workflow = validate(replace(scenario.spec, diseases=diseases))
        rows.extend(
            _agreement_rows(
                scenario.name,
                workflow,
                configurations,
                f"readtime:{disease}",
                float(ratio),
                n_trials,
                n_patients,
                (base_seed, pi),
                warmup_fraction,
                floor,
                threads=threads,
            )
        )
    return AgreementReport(scenario=scenario.name, sweep=f"readtime:{disease}", rows=tuple(rows))


def compare_once(
    scenario_name: str,
    workflow: Workflow,
    configurations=ALL_CONFIGURATIONS,
    n_trials: int = 100,
    n_patients: int = 10_000,
    base_seed: int = 0,
    warmup_fraction: float = 0.1,
    floor: float = DEFAULT_DELTA_FLOOR,
    threads: int = 1,
) -> AgreementReport:
    """Single-point theory/simulation agreement at the workflow's own rho."""
    rows = _agreement_rows(
        scenario_name,
        workflow,
        tuple(configurations),
        "point",
        workflow.rho,
        n_trials,
        n_patients,
        (base_seed, 0),
        warmup_fraction,
        floor,
        threads=threads,
    )
    return AgreementReport(scenario=scenario_name, sweep="point", rows=tuple(rows))
