"""Command-line entry point.

Subcommands: ``validate``, ``probe``, ``theory``, ``simulate``,
``experiment``, ``compare``.  Every run that writes files also writes a
``manifest.json`` recording the tool version, the fully resolved workflow,
the seed, and a SHA-256 digest per output, so any CSV can be traced back to
the exact inputs that produced it.

Exit codes: 0 success, 1 config/validation errors, 2 runtime errors such as
an unstable queue.  Errors are also emitted on stderr as one JSON record
per line for machine consumption.

Output CSVs are byte-stable: fixed headers, ``\\n`` line endings, and
locale-independent numbers printed with nine significant digits.  The
default output directory is ``$TRIAGEQ_OUT`` or the working directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from datetime import datetime, timezone

from . import __version__
from .errors import (
    ConfigError,
    TheoryUnsupportedError,
    TriageqError,
    UnstableQueueError,
    WorkflowValidationError,
)
from .experiments import (
    ALL_CONFIGURATIONS,
    DEFAULT_DELTA_FLOOR,
    build_experiment,
    compare_once,
    scenario_from_config,
    sweep_prevalence,
    sweep_readtime,
    sweep_roc,
    sweep_traffic,
)
from .probability import (
    class_probabilities,
    class_service_moments,
    composition_of_negative_class,
    composition_of_positive_class,
    posterior_class_given_disease,
)
from .sim import run_trials
from .theory import theory_waits
from .workflow import (
    DISCIPLINES,
    HIERARCHICAL,
    PRIORITY,
    PROTOCOLS,
    derive_priority_structure,
    load_config,
    validate,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir, command, resolved_config, seed, outputs) -> str:
    manifest = {
        "tool": "triageq",
        "version": __version__,
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "config": resolved_config,
        "seed": seed,
        "outputs": [{"path": os.path.basename(p), "sha256": _sha256(p)} for p in outputs],
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _error(kind: str, message: str, path=None) -> None:
    record = {"error": kind, "message": message}
    if path is not None:
        record["path"] = str(path)
    print(json.dumps(record), file=sys.stderr)


def _outdir(args) -> str:
    out = args.out or os.environ.get("TRIAGEQ_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_workflow(args):
    spec = load_config(args.config)
    if getattr(args, "rho", None) is not None:
        spec = dataclasses.replace(spec, rho=args.rho, lam=None)
    return validate(spec), spec


def _scenario_name(args) -> str:
    return os.path.splitext(os.path.basename(args.config))[0]


# -- subcommand handlers ----------------------------------------------------


def _cmd_validate(args) -> int:
    workflow, _ = _load_workflow(args)
    print(
        f"ok: {len(workflow.groups)} groups, {len(workflow.diseases)} diseases, "
        f"{len(workflow.real_ais)} targeted AIs; rho={workflow.rho:.6g}, "
        f"lambda={workflow.lam:.6g}/min, mu_eff={1.0 / workflow.mean_service:.6g}/min"
    )
    return EXIT_OK


def _cmd_probe(args) -> int:
    workflow, spec = _load_workflow(args)
    rows = []
    probs = class_probabilities(workflow)
    for name, p in probs.positive.items():
        rows.append(("", "p_positive", name, "", p))
    rows.append(("", "p_negative", "negative", "", probs.negative))
    for ai in workflow.real_ais:
        comp = composition_of_positive_class(workflow, ai.name)
        for dname, val in comp.diseased.items():
            rows.append(("", "composition", ai.name, dname, val))
        for gname, val in comp.nondiseased.items():
            rows.append(("", "composition", ai.name, f"nd:{gname}", val))
    neg = composition_of_negative_class(workflow)
    for dname, val in neg.diseased.items():
        rows.append(("", "composition", "negative", dname, val))
    for gname, val in neg.nondiseased.items():
        rows.append(("", "composition", "negative", f"nd:{gname}", val))
    for d in workflow.diseases:
        if workflow.disease_mass(d.name) <= 0:
            continue
        for label, val in posterior_class_given_disease(workflow, d.name).items():
            rows.append(("", "posterior", label, d.name, val))
    for protocol in PROTOCOLS:
        structure = derive_priority_structure(workflow, protocol, "preemptive")
        rates = class_service_moments(workflow, structure)
        for label in rates.labels:
            rows.append((protocol, "class_mass", label, "", rates.probability[label]))
            rows.append((protocol, "class_lambda_per_min", label, "", rates.arrival[label]))
            rows.append((protocol, "class_mean_service_min", label, "", rates.mean_service[label]))
            rows.append((protocol, "class_second_moment_min2", label, "", rates.second_moment[label]))

    outdir = _outdir(args)
    path = os.path.join(outdir, "probe.csv")
    _write_csv(path, ("protocol", "quantity", "label", "component", "value"), rows)
    _write_manifest(outdir, "probe", spec.to_dict(), None, [path])
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_theory(args) -> int:
    workflow, spec = _load_workflow(args)
    result = theory_waits(workflow, args.discipline, args.protocol, args.method)
    scenario = _scenario_name(args)

    disease_rows = [
        (
            scenario,
            result.discipline,
            result.protocol,
            result.method,
            workflow.rho,
            d.name,
            result.baseline_wait,
            result.disease_waits[d.name],
            result.disease_deltas[d.name],
        )
        for d in workflow.diseases
    ]
    structure = derive_priority_structure(workflow, args.protocol, args.discipline)
    rates = class_service_moments(workflow, structure)
    class_rows = [
        (
            scenario,
            result.discipline,
            result.protocol,
            result.method,
            workflow.rho,
            label,
            rates.probability[label],
            rates.arrival[label],
            rates.mean_service[label],
            rates.second_moment[label],
            result.class_waits[label],
        )
        for label in structure.labels
    ]

    outdir = _outdir(args)
    dpath = os.path.join(outdir, "theory.csv")
    cpath = os.path.join(outdir, "theory_classes.csv")
    _write_csv(
        dpath,
        ("scenario", "discipline", "protocol", "method", "rho", "disease", "w0_min", "wait_min", "delta_min"),
        disease_rows,
    )
    _write_csv(
        cpath,
        (
            "scenario",
            "discipline",
            "protocol",
            "method",
            "rho",
            "class",
            "mass",
            "lambda_per_min",
            "mean_service_min",
            "second_moment_min2",
            "wait_min",
        ),
        class_rows,
    )
    _write_manifest(outdir, "theory", spec.to_dict(), None, [dpath, cpath])
    print(f"wrote {dpath} and {cpath}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    workflow, spec = _load_workflow(args)
    scenario = _scenario_name(args)
    result = run_trials(
        workflow,
        args.discipline,
        args.protocol,
        n_trials=args.trials,
        n_patients=args.patients,
        base_seed=args.seed,
        warmup_fraction=args.warmup,
        threads=args.threads,
        keep_trials=True,
    )
    rows = [
        (
            scenario,
            args.discipline,
            args.protocol,
            workflow.rho,
            d.name,
            result.diseases[d.name].mean_wait_fifo,
            result.diseases[d.name].mean_wait_ai,
            result.diseases[d.name].mean_delta,
            result.diseases[d.name].delta_ci[0],
            result.diseases[d.name].delta_ci[1],
            result.diseases[d.name].n_cases,
        )
        for d in workflow.diseases
    ]
    trial_rows = [
        (
            scenario,
            args.discipline,
            args.protocol,
            workflow.rho,
            t,
            d.name,
            trial.disease_stats[d.name].mean_wait_fifo,
            trial.disease_stats[d.name].mean_wait_ai,
            trial.disease_stats[d.name].mean_delta,
            trial.disease_stats[d.name].n,
        )
        for t, trial in enumerate(result.trials)
        for d in workflow.diseases
    ]
    outdir = _outdir(args)
    path = os.path.join(outdir, "simulate.csv")
    _write_csv(
        path,
        (
            "scenario",
            "discipline",
            "protocol",
            "rho",
            "disease",
            "mean_wait_fifo",
            "mean_wait_ai",
            "delta",
            "ci_lo",
            "ci_hi",
            "n",
        ),
        rows,
    )
    tpath = os.path.join(outdir, "simulate_trials.csv")
    _write_csv(
        tpath,
        (
            "scenario",
            "discipline",
            "protocol",
            "rho",
            "trial",
            "disease",
            "mean_wait_fifo",
            "mean_wait_ai",
            "delta",
            "n",
        ),
        trial_rows,
    )
    _write_manifest(outdir, "simulate", spec.to_dict(), args.seed, [path, tpath])
    print(f"wrote {path} and {tpath}")
    return EXIT_OK


_AGREEMENT_HEADER = (
    "scenario",
    "discipline",
    "protocol",
    "sweep",
    "param",
    "disease",
    "rho",
    "w0_min",
    "theory_wait_min",
    "theory_delta_min",
    "sim_wait_fifo_min",
    "sim_wait_ai_min",
    "sim_delta_min",
    "ci_lo",
    "ci_hi",
    "n",
    "re",
    "flag",
)


def _agreement_csv_rows(report):
    for r in report.rows:
        yield (
            r.scenario,
            r.discipline,
            r.protocol,
            r.sweep,
            r.param,
            r.disease,
            r.rho,
            r.baseline_wait,
            r.theory_wait,
            r.theory_delta,
            r.sim_wait_fifo,
            r.sim_wait_ai,
            r.sim_delta,
            r.ci_lo,
            r.ci_hi,
            r.n,
            r.re,
            r.flag,
        )


def _cmd_compare(args) -> int:
    workflow, spec = _load_workflow(args)
    configurations = _parse_configs(args.configs)
    report = compare_once(
        _scenario_name(args),
        workflow,
        configurations,
        n_trials=args.trials,
        n_patients=args.patients,
        base_seed=args.seed,
        warmup_fraction=args.warmup,
        floor=args.floor,
        threads=args.threads,
    )
    outdir = _outdir(args)
    path = os.path.join(outdir, "agreement.csv")
    _write_csv(path, _AGREEMENT_HEADER, _agreement_csv_rows(report))
    _write_manifest(outdir, "compare", spec.to_dict(), args.seed, [path])
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_experiment(args) -> int:
    scenario = build_experiment(args.id)
    configurations = _parse_configs(args.configs)
    common = dict(
        n_trials=args.trials,
        n_patients=args.patients,
        base_seed=args.seed,
        warmup_fraction=args.warmup,
        floor=args.floor,
        threads=args.threads,
        configurations=configurations,
    )
    reports = []
    if args.sweep == "traffic":
        reports.append(sweep_traffic(scenario, scenario.sweeps["traffic"], **common))
    elif args.sweep == "roc":
        workflow = scenario.workflow()
        names = [args.ai] if args.ai else [a.name for a in workflow.real_ais]
        for name in names:
            reports.append(
                sweep_roc(scenario, name, n_points=scenario.sweeps["roc_points"], **common)
            )
    elif args.sweep == "prevalence":
        for d in scenario.spec.diseases:
            reports.append(sweep_prevalence(scenario, d.name, scenario.sweeps["prevalence"], **common))
    elif args.sweep == "readtime":
        names = [args.disease] if args.disease else [scenario.spec.diseases[0].name]
        for name in names:
            reports.append(
                sweep_readtime(scenario, name, scenario.sweeps["readtime_ratio"], **common)
            )
    else:
        raise ConfigError(f"unknown sweep {args.sweep!r}")

    outdir = _outdir(args)
    outputs = []
    all_rows = []
    for report in reports:
        by_config = {}
        for row in report.rows:
            by_config.setdefault((row.discipline, row.protocol), []).append(row)
        for (discipline, protocol), rows in by_config.items():
            stem = report.sweep.replace(":", "_")
            path = os.path.join(outdir, f"{scenario.name}_{stem}_{discipline}_{protocol}.csv")
            _write_csv(
                path,
                _AGREEMENT_HEADER,
                _agreement_csv_rows(AgreementView(rows)),
            )
            outputs.append(path)
        all_rows.extend(report.rows)
    agg = os.path.join(outdir, "agreement.csv")
    _write_csv(agg, _AGREEMENT_HEADER, _agreement_csv_rows(AgreementView(all_rows)))
    outputs.append(agg)
    _write_manifest(outdir, f"experiment:{args.id}:{args.sweep}", scenario.spec.to_dict(), args.seed, outputs)
    print(f"wrote {len(outputs)} files to {outdir}")
    return EXIT_OK


class AgreementView:
    """Duck-typed report wrapper so CSV helpers accept raw row lists."""

    def __init__(self, rows):
        self.rows = rows


def _parse_configs(text):
    if not text:
        return ALL_CONFIGURATIONS
    out = []
    for token in text.split(","):
        token = token.strip()
        try:
            discipline, protocol = token.split(":")
        except ValueError:
            raise ConfigError(
                f"bad configuration {token!r}; expected discipline:protocol"
            ) from None
        if discipline not in DISCIPLINES or protocol not in PROTOCOLS:
            raise ConfigError(f"unknown configuration {token!r}")
        out.append((discipline, protocol))
    return tuple(out)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triageq",
        description="Wait-time impact analysis for AI triage reading queues",
    )
    parser.add_argument("--version", action="version", version=f"triageq {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, sim=False):
        p.add_argument("--out", default=None, help="output directory (default $TRIAGEQ_OUT or .)")
        if sim:
            p.add_argument("--trials", type=int, default=100)
            p.add_argument("--patients", type=int, default=10_000)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--warmup", type=float, default=0.1)
            p.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    p = sub.add_parser("validate", help="check a workflow config")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("probe", help="dump class probabilities and moments as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--rho", type=float, default=None)
    add_common(p)
    p.set_defaults(func=_cmd_probe)

    p = sub.add_parser("theory", help="closed-form per-class and per-disease waits")
    p.add_argument("--config", required=True)
    p.add_argument("--discipline", choices=DISCIPLINES, required=True)
    p.add_argument("--protocol", choices=PROTOCOLS, required=True)
    p.add_argument("--method", default=None)
    p.add_argument("--rho", type=float, default=None)
    add_common(p)
    p.set_defaults(func=_cmd_theory)

    p = sub.add_parser("simulate", help="trial simulation of one configuration")
    p.add_argument("--config", required=True)
    p.add_argument("--discipline", choices=DISCIPLINES, required=True)
    p.add_argument("--protocol", choices=PROTOCOLS, required=True)
    p.add_argument("--rho", type=float, default=None)
    add_common(p, sim=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("compare", help="theory vs simulation agreement at one point")
    p.add_argument("--config", required=True)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--configs", default=None, help="comma list of discipline:protocol")
    p.add_argument("--floor", type=float, default=DEFAULT_DELTA_FLOOR)
    add_common(p, sim=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("experiment", help="run a bundled scenario sweep")
    p.add_argument("--id", type=int, choices=(1, 2, 3, 4), required=True)
    p.add_argument("--sweep", choices=("traffic", "roc", "prevalence", "readtime"), required=True)
    p.add_argument("--configs", default=None, help="comma list of discipline:protocol")
    p.add_argument("--ai", default=None, help="device name for roc sweeps")
    p.add_argument("--disease", default=None, help="disease name for readtime sweeps")
    p.add_argument("--floor", type=float, default=DEFAULT_DELTA_FLOOR)
    add_common(p, sim=True)
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WorkflowValidationError as exc:
        for violation in exc.violations:
            _error("validation", violation, getattr(args, "config", None))
        return EXIT_CONFIG
    except ConfigError as exc:
        _error("config", str(exc), getattr(args, "config", None))
        return EXIT_CONFIG
    except (UnstableQueueError, TheoryUnsupportedError) as exc:
        _error(type(exc).__name__, str(exc))
        return EXIT_RUNTIME
    except TriageqError as exc:
        _error("runtime", str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
