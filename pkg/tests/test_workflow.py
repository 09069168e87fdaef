import math

import numpy as np
import pytest

from triageq import (
    AIDevice,
    DiseaseCondition,
    ImageGroup,
    WorkflowSpec,
    WorkflowValidationError,
    build_experiment,
    derive_priority_structure,
    mu_effective,
    resolve_arrival,
    validate,
)
from triageq.workflow import HIERARCHICAL, NEGATIVE_LABEL, PREEMPTIVE, PRIORITY

from oracles import random_spec


def spec_one_group(**kw):
    defaults = dict(
        groups=(ImageGroup("g", 1.0, 20.0),),
        diseases=(DiseaseCondition("d", "g", 1, 0.5, 40.0),),
        ais=(),
        rho=0.5,
    )
    defaults.update(kw)
    return WorkflowSpec(**defaults)


def test_exp3_config_is_valid_and_matches_published_numbers():
    w = build_experiment(3).workflow()
    assert {g.name: g.probability for g in w.groups} == {"CTA": 0.3, "NCCT": 0.7}
    assert w.disease("LVO").prevalence == 0.125
    assert w.disease("SAH").prevalence == 0.053
    assert w.disease("SDH").prevalence == 0.21
    assert all(d.read_time == 30.0 for d in w.diseases)
    assert [d.name for d in w.diseases] == ["LVO", "SAH", "SDH"]  # rank order
    ai = w.ai_for("LVO")
    assert (ai.sensitivity, ai.specificity) == (0.9236, 0.9143)
    ai = w.ai_for("SDH")
    assert (ai.sensitivity, ai.specificity) == (0.9362, 0.9343)
    assert w.ai_for("SAH") is None


def test_degenerate_workflow_valid():
    w = validate(
        WorkflowSpec(groups=(ImageGroup("g", 1.0, 10.0),), diseases=(), ais=(), rho=0.3)
    )
    assert w.nd_fraction("g") == 1.0
    assert w.mean_service == 10.0


def test_group_probabilities_must_sum_to_one():
    spec = WorkflowSpec(
        groups=(ImageGroup("a", 0.6, 10.0), ImageGroup("b", 0.6, 10.0)),
        diseases=(),
        ais=(),
        rho=0.5,
    )
    with pytest.raises(WorkflowValidationError, match="sum != 1"):
        validate(spec)


def test_validation_collects_all_violations():
    spec = WorkflowSpec(
        groups=(ImageGroup("a", 0.5, 10.0), ImageGroup("b", 0.6, -1.0)),
        diseases=(
            DiseaseCondition("x", "a", 1, 0.5, 10.0),
            DiseaseCondition("y", "a", 1, 0.7, 10.0),  # duplicate rank, sum > 1
        ),
        ais=(AIDevice("ai", "nope", 1.2, 0.5),),
        rho=1.2,
    )
    with pytest.raises(WorkflowValidationError) as err:
        validate(spec)
    text = "; ".join(err.value.violations)
    for fragment in ("sum != 1", "ranks must be unique", "prevalences sum", "unknown target",
                     "sensitivity outside", "rho must be in [0, 1)", "read time must be > 0"):
        assert fragment in text


def test_arrival_exactly_one_of_rho_lambda():
    with pytest.raises(WorkflowValidationError, match="exactly one"):
        validate(spec_one_group(rho=0.5, lam=0.1))
    with pytest.raises(WorkflowValidationError, match="exactly one"):
        validate(spec_one_group(rho=None, lam=None))


def test_mu_effective_uniform_and_symmetric():
    uniform = validate(
        spec_one_group(
            groups=(ImageGroup("g", 1.0, 30.0),),
            diseases=(DiseaseCondition("d", "g", 1, 0.2, 30.0),),
        )
    )
    assert mu_effective(uniform) == pytest.approx(1.0 / 30.0, abs=1e-15)
    # pi=0.5 at 40 min diseased vs 20 min non-diseased averages to 30
    sym = validate(spec_one_group())
    assert mu_effective(sym) == pytest.approx(1.0 / 30.0, abs=1e-15)


def test_mu_effective_unequal_read_times_matches_direct_expectation():
    # Scenario-3 population with per-condition read times instead of the
    # flattened 30 minutes.
    spec = build_experiment(3).spec
    diseases = []
    for d in spec.diseases:
        rt = {"LVO": 32.67, "SAH": 24.3, "SDH": 24.3}[d.name]
        diseases.append(
            DiseaseCondition(d.name, d.group, d.rank, d.prevalence, rt)
        )
    w = validate(WorkflowSpec(spec.groups, tuple(diseases), spec.ais, rho=0.8))
    expected = 0.3 * (0.125 * 32.67 + 0.875 * 30.0) + 0.7 * (
        0.053 * 24.3 + 0.21 * 24.3 + (1 - 0.053 - 0.21) * 30.0
    )
    assert w.mean_service == pytest.approx(expected, rel=1e-14)
    assert mu_effective(w) == pytest.approx(1.0 / expected, rel=1e-14)


def test_resolve_arrival_definitions():
    w = validate(spec_one_group(rho=0.8))
    assert resolve_arrival(w) == pytest.approx(0.8 / 30.0, rel=1e-14)
    w0 = validate(spec_one_group(rho=0.0))
    assert resolve_arrival(w0) == 0.0
    via_lam = validate(spec_one_group(rho=None, lam=0.02))
    assert via_lam.rho == pytest.approx(0.02 * 30.0, rel=1e-14)


def test_subgroup_rates_sum_to_lambda(rng):
    for _ in range(25):
        w = validate(random_spec(rng))
        rates = w.subgroup_rates()
        assert sum(rates.values()) == pytest.approx(w.lam, abs=1e-12 * max(1.0, w.lam))
        # probability closure after validation
        assert sum(q for _, q, _ in w.subgroups()) == pytest.approx(1.0, abs=1e-12)


def test_exp3_subgroup_rate_for_lvo():
    w = build_experiment(3).workflow()
    rates = w.subgroup_rates()
    assert rates["LVO"] == pytest.approx(0.3 * 0.125 * w.lam, rel=1e-14)


def test_priority_structure_exp1_protocols_identical():
    w = build_experiment(1).workflow()
    pri = derive_priority_structure(w, PRIORITY, PREEMPTIVE)
    hier = derive_priority_structure(w, HIERARCHICAL, PREEMPTIVE)
    assert len(pri.classes) == len(hier.classes) == 2
    assert pri.classes[0].ais == hier.classes[0].ais == ("AI-LVO",)


def test_priority_structure_exp2_hierarchical_order():
    w = build_experiment(2).workflow()
    hier = derive_priority_structure(w, HIERARCHICAL, PREEMPTIVE)
    assert hier.labels == ("AI-LVO", "AI-SDH", NEGATIVE_LABEL)
    pri = derive_priority_structure(w, PRIORITY, PREEMPTIVE)
    assert pri.labels == ("positive", NEGATIVE_LABEL)
    assert pri.classes[0].ais == ("AI-LVO", "AI-SDH")


def test_priority_structure_sparse_ais_and_rank_gaps():
    # five conditions, devices only on the 3rd and 5th by time-sensitivity;
    # rank values deliberately non-contiguous
    groups = (ImageGroup("g", 1.0, 10.0),)
    diseases = tuple(
        DiseaseCondition(f"b{i}", "g", rank, 0.05, 10.0)
        for i, rank in enumerate((2, 5, 11, 17, 23), start=1)
    )
    ais = (AIDevice("a5", "b5", 0.9, 0.9), AIDevice("a3", "b3", 0.8, 0.8))
    w = validate(WorkflowSpec(groups, diseases, ais, rho=0.5))
    hier = derive_priority_structure(w, HIERARCHICAL, PREEMPTIVE)
    assert hier.labels == ("a3", "a5", NEGATIVE_LABEL)
    ranks = [w.disease(w.ai(c.ais[0]).target).rank for c in hier.positive_classes]
    assert ranks == sorted(ranks)


def test_zero_ai_workflow_collapses_to_single_class():
    w = validate(spec_one_group())
    for protocol in (PRIORITY, HIERARCHICAL):
        s = derive_priority_structure(w, protocol, PREEMPTIVE)
        assert s.labels == (NEGATIVE_LABEL,)


def test_untargeted_ai_is_inert():
    w = validate(spec_one_group(ais=(AIDevice("idle", None, 0.9, 0.9),)))
    assert w.real_ais == ()


def test_duplicate_ai_per_disease_rejected():
    spec = spec_one_group(
        ais=(AIDevice("a1", "d", 0.9, 0.9), AIDevice("a2", "d", 0.8, 0.8))
    )
    with pytest.raises(WorkflowValidationError, match="at most one AI per disease"):
        validate(spec)


def test_structure_deterministic(rng):
    for _ in range(10):
        w = validate(random_spec(rng))
        a = derive_priority_structure(w, HIERARCHICAL, PREEMPTIVE)
        b = derive_priority_structure(w, HIERARCHICAL, PREEMPTIVE)
        assert a == b
