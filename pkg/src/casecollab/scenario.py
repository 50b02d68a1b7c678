"""Running scenarios, measuring delays and comparing coordination strategies.

Two strategies share every mechanic except how a merged update reaches
readers. ``VcsModel`` pushes it after the feedback latency. ``Baseline``
batches updates until the next periodic sync (weekly phone / in-person
rounds by default), and still cannot beat the feedback latency.
"""

from __future__ import annotations

import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .collaboration import MONITORING_STAGES, CaseStage, CaseWorkflow
from .config import ScenarioConfig, Strategy
from .errors import DispatchError, SimulationAbort, UnknownParameter
from .kernel import Engine, EventKind
from .record import AuditEntry, CaseBook, Right, Role, Verdict, write_section
from .resources import ResourcePool, UtilizationRecord, detect_bottleneck
from .rng import RandomStreams


class DelayKind(Enum):
    CLINICAL_EVALUATION = "ClinicalEvaluationDelay"
    TREATMENT_ACCESS = "TreatmentAccessDelay"
    INFO_AVAILABILITY = "InfoAvailabilityDelay"
    SUBMIT_TO_MERGE = "SubmitToMergeDelay"


@dataclass(frozen=True)
class DelaySample:
    case_id: str
    kind: DelayKind
    duration: float


SAMPLES_HEADER = "case_id,kind,duration_s"


def samples_csv(samples: Iterable[DelaySample]) -> str:
    lines = [SAMPLES_HEADER]
    lines += [f"{s.case_id},{s.kind.value},{s.duration!r}" for s in samples]
    return "\n".join(lines) + "\n"


def parse_samples_csv(text: str) -> list[DelaySample]:
    rows = text.splitlines()
    if not rows or rows[0] != SAMPLES_HEADER:
        raise ValueError("not a samples export")
    out = []
    for row in rows[1:]:
        case_id, kind, duration = row.split(",")
        out.append(DelaySample(case_id, DelayKind(kind), float(duration)))
    return out


def summarize(values: Sequence[float]) -> dict:
    if len(values) == 0:
        return {"count": 0, "mean": None, "p50": None, "p95": None, "max": None}
    arr = np.asarray(values, dtype=float)
    return {
        "count": int(arr.size),
        "mean": float(arr.mean()),
        "p50": float(np.percentile(arr, 50)),
        "p95": float(np.percentile(arr, 95)),
        "max": float(arr.max()),
    }


def delivery_time(merge_time: float, strategy: Strategy, feedback_latency: float,
                  sync_interval: float) -> float:
    """When readers see an update merged at ``merge_time``."""
    pushed = merge_time + feedback_latency
    if strategy is Strategy.VCS_MODEL:
        return pushed
    next_sync = math.ceil(merge_time / sync_interval) * sync_interval
    return max(pushed, next_sync)


def who_delays(audit: Iterable[AuditEntry]) -> list[DelaySample]:
    """Clinical-evaluation and treatment-access delays, from the audit trail alone.

    Clinical evaluation runs from the first Diagnosis entry until the case
    first leaves InformationGathering for IteratingSolutions. Treatment
    access runs from that IteratingSolutions exit (the TreatmentAssessment
    entry) until the assessment's resource hold starts.
    """
    first: dict[tuple[str, str], float] = {}
    dwell_start: dict[str, float] = {}
    order: dict[str, None] = {}
    for e in audit:
        if e.action == "stage":
            order.setdefault(e.case_id)
            first.setdefault((e.case_id, e.new_status), e.time)
        elif e.action == "dwell_start" and e.old_status == CaseStage.TREATMENT_ASSESSMENT.value:
            dwell_start.setdefault(e.case_id, e.time)
    out = []
    for case_id in order:
        diag = first.get((case_id, CaseStage.DIAGNOSIS.value))
        iterating = first.get((case_id, CaseStage.ITERATING_SOLUTIONS.value))
        if diag is not None and iterating is not None:
            out.append(DelaySample(case_id, DelayKind.CLINICAL_EVALUATION, iterating - diag))
        assess = first.get((case_id, CaseStage.TREATMENT_ASSESSMENT.value))
        if assess is not None and case_id in dwell_start:
            out.append(DelaySample(case_id, DelayKind.TREATMENT_ACCESS,
                                   dwell_start[case_id] - assess))
    return out


@dataclass
class RunReport:
    config_digest: str
    seed: int
    strategy: Strategy
    samples: list
    stats: dict
    utilization: list
    bottlenecks: list
    throughput: dict
    stage_sequences: dict
    trace: Optional[list] = None
    audit: Optional[list] = None
    reads: int = 0

    def samples_of(self, kind: DelayKind) -> list[float]:
        return [s.duration for s in self.samples if s.kind is kind]

    def mean(self, kind: DelayKind) -> float:
        vals = self.samples_of(kind)
        return float(np.mean(vals)) if vals else math.nan

    def samples_csv(self) -> str:
        return samples_csv(self.samples)

    def trace_tsv(self) -> str:
        return "".join(line + "\n" for line in self.trace or ())

    def audit_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.audit or ())

    def to_dict(self) -> dict:
        return {
            "config_digest": self.config_digest,
            "seed": self.seed,
            "strategy": self.strategy.value,
            "delays": {k.value: self.stats[k] for k in DelayKind},
            "utilization": [r.as_dict() for r in self.utilization],
            "bottlenecks": list(self.bottlenecks),
            "throughput": dict(self.throughput),
            "stage_sequences": dict(sorted(self.stage_sequences.items())),
        }

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


class Simulation:
    """One seeded run of a scenario on a private engine."""

    def __init__(self, config: ScenarioConfig, trace: bool = False):
        self.config = cfg = config
        self.engine = Engine(trace=trace)
        self.streams = RandomStreams(cfg.seed)
        self.book = CaseBook(self.engine, cfg.validation_latency, cfg.feedback_latency)
        self.pool = ResourcePool(self.engine)
        for spec in cfg.resources:
            self.pool.add(spec.name, spec.kind, spec.capacity)
        self.workflow = CaseWorkflow(
            self.engine, self.book, cfg.transition_table(),
            rng_stage=self.streams.stream("stages"),
            rng_dwell=self.streams.stream("dwell"),
            rng_team=self.streams.stream("team"),
            resources=self.pool, stage_resources=cfg.stage_resources(),
            feedback_latency=cfg.feedback_latency, response_delay=cfg.response_delay,
            meeting_duration=cfg.meeting_duration, dwell_model=cfg.dwell_model)
        self.workflow.on_stage_complete = self._stage_complete
        self.book.on_validation_due = self._validation_due
        self.book.on_flag_delivered = self._flag_delivered
        self.book.on_merged = self._merged
        self.samples: list[DelaySample] = []
        self.authored_at: dict[str, float] = {}
        self.reads = 0
        self._arrivals = self.streams.stream("arrivals")
        self._authors = self.streams.stream("authors")
        self._verdicts = self.streams.stream("verdicts")
        self._n_cases = 0

    # -- arrivals --------------------------------------------------------

    def _schedule_arrivals(self) -> None:
        cfg = self.config
        if cfg.arrival_times is not None:
            for t in cfg.arrival_times:
                if t <= cfg.horizon:
                    self.engine.schedule(t, EventKind.CASE_ARRIVAL, "arrival",
                                         action=self._arrive)
        elif cfg.arrival_rate:
            self._next_poisson()

    def _next_poisson(self) -> None:
        t = self.engine.now + float(self._arrivals.exponential(1.0 / self.config.arrival_rate))
        if t <= self.config.horizon:
            self.engine.schedule(t, EventKind.CASE_ARRIVAL, "arrival",
                                 action=self._poisson_arrival)

    def _poisson_arrival(self, event) -> None:
        self._arrive(event)
        self._next_poisson()

    def _arrive(self, event) -> None:
        self._n_cases += 1
        n = self._n_cases
        cfg = self.config
        manager = next(s for s, r in cfg.pool if r is Role.CASE_MANAGER)
        rec = self.book.enroll_case(f"patient P{n:04d}", "", f"caretaker C{n:04d}",
                                    manager=manager)
        self.book.add_participant(rec.case_id, f"P{n:04d}", Role.PATIENT)
        self.book.add_participant(rec.case_id, f"C{n:04d}", Role.CARETAKER)
        self.workflow.register(rec.case_id)
        team = self.workflow.establish_core_team(rec.case_id, cfg.pool, cfg.core_fraction)
        self.workflow.open_collaboration(team)
        self.workflow.advance_stage(rec.case_id)

    # -- contributions ---------------------------------------------------

    def _stage_complete(self, case_id: str, stage: CaseStage) -> None:
        if stage not in MONITORING_STAGES:
            return
        team = self.workflow.teams[case_id]
        authors = team.members or [(team.leader, Role.CASE_MANAGER)]
        for _ in range(self.config.contributions_per_stage):
            author, role = authors[int(self._authors.integers(len(authors)))]
            section = write_section(role)
            payload = f"{stage.value} update by {author}"
            now = self.engine.now
            self.engine.schedule(now + self.config.feedback_latency,
                                 EventKind.CONTRIBUTION_SUBMITTED, case_id,
                                 action=self._submit,
                                 payload=(case_id, author, section, payload, now))

    def _submit(self, event) -> None:
        case_id, author, section, payload, authored = event.payload
        c = self.book.submit_contribution(case_id, author, section, payload)
        self.authored_at[c.contrib_id] = authored

    def _validation_due(self, c) -> None:
        manager = self.book.policies[c.case_id].granted_by
        flag = self._verdicts.random() < self.config.p_flag
        self.book.validate(c.contrib_id, manager, Verdict.IRREGULAR if flag else Verdict.OK)
        if not flag:
            self.book.approve_and_merge(c.contrib_id, manager)
            self.samples.append(DelaySample(c.case_id, DelayKind.SUBMIT_TO_MERGE,
                                            self.engine.now - self.authored_at[c.contrib_id]))

    def _flag_delivered(self, c) -> None:
        payload = f"{c.payload} (rev {c.revision + 1})"
        if self.config.response_delay > 0:
            self.engine.schedule_in(self.config.response_delay,
                                    EventKind.CONTRIBUTION_SUBMITTED, c.case_id,
                                    action=lambda ev: self.book.resubmit(c.contrib_id,
                                                                         c.author, payload))
        else:
            self.book.resubmit(c.contrib_id, c.author, payload)

    # -- delivery --------------------------------------------------------

    def _merged(self, c, record) -> None:
        cfg = self.config
        now = self.engine.now
        at = delivery_time(now, cfg.strategy, cfg.feedback_latency, cfg.baseline_sync_interval)
        self.samples.append(DelaySample(c.case_id, DelayKind.INFO_AVAILABILITY, at - now))
        kind = (EventKind.REQUEST_DELIVERED if cfg.strategy is Strategy.VCS_MODEL
                else EventKind.SYNC_TICK)
        self.engine.schedule(at, kind, c.case_id, action=self._deliver, payload=c)

    def _deliver(self, event) -> None:
        c = event.payload
        policy = self.book.policies[c.case_id]
        for subject in sorted(policy.grants):
            if policy.allows(subject, c.section, Right.READ):
                self.book.read_section(c.case_id, subject, c.section)
                self.reads += 1

    # -- run -------------------------------------------------------------

    def run(self, keep_audit: bool = True) -> RunReport:
        cfg = self.config
        self._schedule_arrivals()
        try:
            self.engine.run_until(cfg.horizon)
        except DispatchError as exc:
            ev = exc.event
            case = getattr(ev.payload, "case_id", None) or ev.target
            raise SimulationAbort(f"aborted at t={ev.time:.3f} case={case}: "
                                  f"{type(exc.cause).__name__}: {exc.cause}") from exc
        self.pool.close(cfg.horizon)
        self.samples.extend(who_delays(self.book.audit))

        by_kind = {k: [s.duration for s in self.samples if s.kind is k] for k in DelayKind}
        utilization = self.pool.reports()
        sequences: dict[str, int] = {}
        for path in self.workflow.stage_path.values():
            key = ">".join(s.value for s in path)
            sequences[key] = sequences.get(key, 0) + 1
        return RunReport(
            config_digest=cfg.digest, seed=cfg.seed, strategy=cfg.strategy,
            samples=list(self.samples),
            stats={k: summarize(v) for k, v in by_kind.items()},
            utilization=utilization,
            bottlenecks=detect_bottleneck(utilization, cfg.bottleneck_threshold,
                                          cfg.wait_ceiling),
            throughput={"enrolled": len(self.book.records),
                        "closed": len(self.workflow.closed_at)},
            stage_sequences=sequences,
            trace=self.engine.trace,
            audit=list(self.book.audit) if keep_audit else None,
            reads=self.reads,
        )


def run_scenario(config: ScenarioConfig, trace: bool = False,
                 keep_audit: bool = True) -> RunReport:
    return Simulation(config, trace=trace).run(keep_audit=keep_audit)


def simulate_strategy(config: ScenarioConfig, strategy: Strategy) -> list[DelaySample]:
    return run_scenario(config.replace(strategy=strategy), keep_audit=False).samples


def _batch_run(config: ScenarioConfig) -> RunReport:
    return run_scenario(config, keep_audit=False)


def _run_many(configs: list, workers: int) -> list[RunReport]:
    if workers <= 1 or len(configs) <= 1:
        return [_batch_run(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_batch_run, configs))


# ---------------------------------------------------------------------------
# strategy comparison


@dataclass
class Comparison:
    n_runs: int
    seeds: list
    rows: list  # one dict per delay kind
    pairs: list  # per run: {kind: (vcs_mean, baseline_mean)}
    vcs_reports: list = field(default_factory=list, repr=False)
    baseline_reports: list = field(default_factory=list, repr=False)

    def row(self, kind: DelayKind) -> dict:
        return next(r for r in self.rows if r["kind"] == kind.value)

    def columns(self) -> list[str]:
        cols = ["kind", "vcs_mean", "vcs_p95", "baseline_mean", "baseline_p95",
                "difference", "ratio", "pairs_vcs_lower"]
        if self.n_runs > 1:
            cols += ["vcs_run_sd", "baseline_run_sd"]
        return cols

    def to_csv(self) -> str:
        return table_csv(self.columns(), self.rows)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def table_csv(columns: Sequence[str], rows: Iterable[dict]) -> str:
    out = io.StringIO()
    out.write(",".join(columns) + "\n")
    for row in rows:
        out.write(",".join(_fmt(row.get(c)) for c in columns) + "\n")
    return out.getvalue()


def compare_strategies(config: ScenarioConfig, n_runs: int, workers: int = 1) -> Comparison:
    """Paired comparison: run ``i`` uses seed ``config.seed + i`` for both strategies."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    seeds = [config.seed + i for i in range(n_runs)]
    configs = []
    for seed in seeds:
        configs.append(config.replace(seed=seed, strategy=Strategy.VCS_MODEL))
        configs.append(config.replace(seed=seed, strategy=Strategy.BASELINE))
    reports = _run_many(configs, workers)
    vcs, base = reports[0::2], reports[1::2]

    pairs = [{k: (v.mean(k), b.mean(k)) for k in DelayKind} for v, b in zip(vcs, base)]
    rows = []
    for kind in DelayKind:
        v_all = [x for r in vcs for x in r.samples_of(kind)]
        b_all = [x for r in base for x in r.samples_of(kind)]
        vs, bs = summarize(v_all), summarize(b_all)
        diff = ratio = None
        if vs["mean"] is not None and bs["mean"] is not None:
            diff = bs["mean"] - vs["mean"]
            ratio = bs["mean"] / vs["mean"] if vs["mean"] else None
        lower = sum(1 for p in pairs if p[kind][0] < p[kind][1])
        row = {"kind": kind.value, "vcs_mean": vs["mean"], "vcs_p95": vs["p95"],
               "baseline_mean": bs["mean"], "baseline_p95": bs["p95"],
               "difference": diff, "ratio": ratio, "pairs_vcs_lower": lower}
        if n_runs > 1:
            row["vcs_run_sd"] = _run_sd([p[kind][0] for p in pairs])
            row["baseline_run_sd"] = _run_sd([p[kind][1] for p in pairs])
        rows.append(row)
    return Comparison(n_runs, seeds, rows, pairs, vcs, base)


def _run_sd(values: list) -> Optional[float]:
    vals = [v for v in values if not math.isnan(v)]
    if len(vals) < 2:
        return None
    return float(np.std(vals, ddof=1))


# ---------------------------------------------------------------------------
# sensitivity sweeps

SWEEPABLE = ("arrival_rate", "feedback_latency", "validation_latency", "p_flag")


def apply_parameter(config: ScenarioConfig, parameter: str, value: float) -> ScenarioConfig:
    """Return ``config`` with one parameter set; capacities use ``capacity:<name>``."""
    if parameter in SWEEPABLE:
        if parameter == "arrival_rate" and config.arrival_times is not None:
            raise UnknownParameter("arrival_rate needs a Poisson arrival process")
        return config.replace(**{parameter: float(value)})
    if parameter.startswith("capacity:"):
        name = parameter.split(":", 1)[1]
        if name not in {r.name for r in config.resources}:
            raise UnknownParameter(f"no resource named {name!r}")
        if float(value) != int(value):
            raise ValueError(f"capacity must be an integer, got {value}")
        resources = tuple(r if r.name != name else type(r)(r.name, r.kind, int(value), r.stages)
                          for r in config.resources)
        return config.replace(resources=resources)
    raise UnknownParameter(
        f"{parameter!r}; expected one of {', '.join(SWEEPABLE)} or capacity:<resource>")


@dataclass
class SweepRow:
    value: float
    mean_delay: dict  # DelayKind -> mean over pooled samples (nan if none)
    utilization: dict  # resource -> mean utilization across runs
    mean_wait: dict  # resource -> mean of per-run mean waits
    flagged: list  # resources flagged as bottlenecks in any run


@dataclass
class Sweep:
    parameter: str
    resources: list
    rows: list

    def columns(self) -> list[str]:
        return (["value"] + [f"mean_{k.value}" for k in DelayKind]
                + [f"util_{r}" for r in self.resources]
                + [f"wait_{r}" for r in self.resources] + ["flagged"])

    def to_csv(self) -> str:
        dict_rows = []
        for row in self.rows:
            d = {"value": row.value, "flagged": ";".join(row.flagged)}
            d.update({f"mean_{k.value}": v for k, v in row.mean_delay.items()})
            d.update({f"util_{r}": v for r, v in row.utilization.items()})
            d.update({f"wait_{r}": v for r, v in row.mean_wait.items()})
            dict_rows.append(d)
        return table_csv(self.columns(), dict_rows)


def sensitivity_sweep(config: ScenarioConfig, parameter: str, values: Sequence[float],
                      n_runs: int = 1, workers: int = 1) -> Sweep:
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    apply_parameter(config, parameter, values[0] if values else 1)
    resources = sorted(r.name for r in config.resources)
    configs = [apply_parameter(config, parameter, v).replace(seed=config.seed + i)
               for v in values for i in range(n_runs)]
    reports = _run_many(configs, workers)
    rows = []
    for j, value in enumerate(values):
        batch = reports[j * n_runs:(j + 1) * n_runs]
        mean_delay = {}
        for kind in DelayKind:
            pooled = [x for r in batch for x in r.samples_of(kind)]
            mean_delay[kind] = float(np.mean(pooled)) if pooled else math.nan
        util = {name: float(np.mean([_util(r, name).utilization for r in batch]))
                for name in resources}
        wait = {name: float(np.mean([_util(r, name).mean_wait for r in batch]))
                for name in resources}
        flagged = sorted({f for r in batch for f in r.bottlenecks})
        rows.append(SweepRow(float(value), mean_delay, util, wait, flagged))
    return Sweep(parameter, resources, rows)


def _util(report: RunReport, name: str) -> UtilizationRecord:
    return next(u for u in report.utilization if u.resource_id == name)
