"""Per-case workflow: core-team setup, collaboration requests and stages.

A case walks Enrolled -> Diagnosis -> InformationGathering ->
IteratingSolutions -> TreatmentAssessment -> Closed, with backward edges
allowed by the transition table. Each stage holds its handling resource
(or just the clock, when the stage has none) for a sampled dwell, and
stage completion is the ResourceFreed event that ends the hold.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    EmptyPool,
    InvalidTransitionTable,
    NoCaseManagerInPool,
    NotAssessed,
    TerminalStage,
)
from .kernel import Booking, Calendar, ConflictReport, Engine, EventKind
from .record import CaseBook, Role, Section, write_section
from .resources import ResourcePool

log = logging.getLogger(__name__)

DAY = 86400.0


class CaseStage(Enum):
    ENROLLED = "Enrolled"
    DIAGNOSIS = "Diagnosis"
    INFORMATION_GATHERING = "InformationGathering"
    ITERATING_SOLUTIONS = "IteratingSolutions"
    TREATMENT_ASSESSMENT = "TreatmentAssessment"
    CLOSED = "Closed"


MONITORING_STAGES = (
    CaseStage.DIAGNOSIS,
    CaseStage.INFORMATION_GATHERING,
    CaseStage.ITERATING_SOLUTIONS,
    CaseStage.TREATMENT_ASSESSMENT,
)

S = CaseStage
DEFAULT_TRANSITIONS = {
    (S.ENROLLED, S.DIAGNOSIS): 1.0,
    (S.DIAGNOSIS, S.INFORMATION_GATHERING): 1.0,
    (S.INFORMATION_GATHERING, S.ITERATING_SOLUTIONS): 0.8,
    (S.INFORMATION_GATHERING, S.DIAGNOSIS): 0.2,
    (S.ITERATING_SOLUTIONS, S.TREATMENT_ASSESSMENT): 0.7,
    (S.ITERATING_SOLUTIONS, S.INFORMATION_GATHERING): 0.3,
    (S.TREATMENT_ASSESSMENT, S.CLOSED): 1.0,
}
DEFAULT_DWELL_MEANS = {
    S.DIAGNOSIS: 2 * DAY,
    S.INFORMATION_GATHERING: 1 * DAY,
    S.ITERATING_SOLUTIONS: 3 * DAY,
    S.TREATMENT_ASSESSMENT: 1 * DAY,
}
del S


@dataclass
class TransitionTable:
    probabilities: dict
    dwell: dict

    def __post_init__(self):
        self._outgoing: dict[CaseStage, tuple[list, np.ndarray]] = {}
        self.validate()

    @classmethod
    def default(cls) -> "TransitionTable":
        return cls(dict(DEFAULT_TRANSITIONS), dict(DEFAULT_DWELL_MEANS))

    def validate(self) -> None:
        for (src, dst), p in self.probabilities.items():
            if not 0.0 <= p <= 1.0:
                raise InvalidTransitionTable(f"P({src.value}->{dst.value})={p} outside [0,1]")
            if src is CaseStage.CLOSED and p > 0:
                raise InvalidTransitionTable("Closed is terminal")
            if dst is CaseStage.ENROLLED and p > 0:
                raise InvalidTransitionTable("Enrolled is initial only")
            if dst is CaseStage.CLOSED and src is not CaseStage.TREATMENT_ASSESSMENT and p > 0:
                raise InvalidTransitionTable(f"{src.value} cannot close a case")
        self._outgoing.clear()
        for stage in CaseStage:
            if stage is CaseStage.CLOSED:
                continue
            edges = [(dst, p) for (src, dst), p in self.probabilities.items()
                     if src is stage and p > 0]
            total = sum(p for _, p in edges)
            if abs(total - 1.0) > 1e-9:
                raise InvalidTransitionTable(
                    f"outgoing probabilities of {stage.value} sum to {total}")
            edges.sort(key=lambda e: list(CaseStage).index(e[0]))
            self._outgoing[stage] = ([d for d, _ in edges],
                                     np.cumsum([p for _, p in edges]))
        for stage in MONITORING_STAGES:
            if self.dwell.get(stage, -1) < 0:
                raise InvalidTransitionTable(f"missing or negative dwell mean for {stage.value}")

    def successors(self, stage: CaseStage) -> list:
        return list(self._outgoing[stage][0])

    def allows(self, src: CaseStage, dst: CaseStage) -> bool:
        return self.probabilities.get((src, dst), 0.0) > 0


def sample_next_stage(table: TransitionTable, stage: CaseStage,
                      rng: np.random.Generator) -> CaseStage:
    """Inverse-CDF draw of the successor of ``stage``; one uniform per call."""
    if stage is CaseStage.CLOSED:
        raise TerminalStage("Closed has no successors")
    dests, cdf = table._outgoing[stage]
    u = rng.random()
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return dests[min(idx, len(dests) - 1)]


@dataclass
class CoreTeam:
    case_id: str
    leader: str
    members: list  # [(subject, Role)]
    formed_at: float
    leader_only: bool = False


class RequestState(Enum):
    SENT = "Sent"
    DELIVERED = "Delivered"
    ACCEPTED = "Accepted"


@dataclass
class CollaborationRequest:
    case_id: str
    collaborator: str
    team: Role
    role_description: str
    schedule: list  # [(start, duration)]
    prior_info: list  # [Section]
    state: RequestState = RequestState.SENT
    sent_at: float = 0.0
    delivered_at: Optional[float] = None
    accepted_at: Optional[float] = None


REQUIRED_ROLES = (Role.NURSE, Role.LAB_TECHNICIAN)
CORE_ELIGIBLE = (Role.NURSE, Role.LAB_TECHNICIAN, Role.ALLIED_HEALTH, Role.PSYCHO_SOCIAL)


def select_core_team(pool: Sequence[tuple[str, Role]], fraction: float,
                     rng: np.random.Generator) -> tuple[str, list, bool]:
    """Pick the leader and members of a core team.

    Team size, leader included, is ``max(required, ceil(fraction*|pool|))``
    where ``required`` counts the leader plus one Nurse and one
    LabTechnician when the pool has them. Only care roles are eligible.
    """
    if not pool:
        raise EmptyPool("collaborator pool is empty")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"core fraction {fraction} outside (0, 1]")
    managers = [s for s, r in pool if r is Role.CASE_MANAGER]
    if not managers:
        raise NoCaseManagerInPool("pool has no CaseManager")
    leader = managers[0]
    eligible = [(s, r) for s, r in pool if r in CORE_ELIGIBLE]

    members: list = []
    for role in REQUIRED_ROLES:
        candidates = [m for m in eligible if m[1] is role]
        if candidates:
            members.append(candidates[int(rng.integers(len(candidates)))])
    size = max(1 + len(members), math.ceil(fraction * len(pool)))
    rest = [m for m in eligible if m not in members]
    extra = min(size - 1 - len(members), len(rest))
    if extra > 0:
        picks = rng.choice(len(rest), size=extra, replace=False)
        members.extend(rest[int(i)] for i in sorted(picks))
    return leader, members, not members


class CaseWorkflow:
    """Drives cases through the collaboration protocol on one engine.

    ``stage_resources`` maps a stage to the resource id held for its dwell;
    stages without one simply wait out the dwell. ``on_stage_complete``
    is called with ``(case_id, stage)`` when a stage's dwell ends.
    """

    def __init__(self, engine: Engine, book: CaseBook, table: TransitionTable,
                 rng_stage: np.random.Generator, rng_dwell: np.random.Generator,
                 rng_team: Optional[np.random.Generator] = None,
                 resources: Optional[ResourcePool] = None,
                 stage_resources: Optional[Mapping[CaseStage, str]] = None,
                 feedback_latency: float = 15.0, response_delay: float = 0.0,
                 meeting_duration: float = 1800.0, dwell_model: str = "exponential",
                 calendar: Optional[Calendar] = None):
        if dwell_model not in ("exponential", "fixed"):
            raise ValueError(f"unknown dwell model {dwell_model!r}")
        self.engine = engine
        self.book = book
        self.table = table
        self.rng_stage = rng_stage
        self.rng_dwell = rng_dwell
        self.rng_team = rng_team if rng_team is not None else rng_stage
        self.resources = resources
        self.stage_resources = dict(stage_resources or {})
        self.feedback_latency = float(feedback_latency)
        self.response_delay = float(response_delay)
        self.meeting_duration = float(meeting_duration)
        self.dwell_model = dwell_model
        self.calendar = calendar if calendar is not None else Calendar()
        self.teams: dict[str, CoreTeam] = {}
        self.requests: dict[str, list[CollaborationRequest]] = {}
        self.stage_path: dict[str, list[CaseStage]] = {}
        self.closed_at: dict[str, float] = {}
        self.conflicts: list[ConflictReport] = []
        self.on_stage_complete: Optional[Callable[[str, CaseStage], None]] = None

    def stage_of(self, case_id: str) -> CaseStage:
        return self.book.record(case_id).stage

    def _set_stage(self, case_id: str, stage: CaseStage) -> None:
        rec = self.book.record(case_id)
        old = rec.stage
        rec.stage = stage
        self.stage_path.setdefault(case_id, []).append(stage)
        self.book.log(case_id, "", self.book.policies[case_id].granted_by, "stage",
                      old.value if old is not None else "", stage.value)

    def register(self, case_id: str) -> None:
        """Put a freshly enrolled record into the Enrolled stage."""
        self._set_stage(case_id, CaseStage.ENROLLED)

    # -- step 2: core team ----------------------------------------------

    def establish_core_team(self, case_id: str, pool: Sequence[tuple[str, Role]],
                            fraction: float = 0.2) -> CoreTeam:
        leader, members, leader_only = select_core_team(pool, fraction, self.rng_team)
        book = self.book
        policy = book.policy(case_id)
        if not policy.granted_by:
            book.add_participant(case_id, leader, Role.CASE_MANAGER)
        for subject, role in pool:
            if subject not in policy.roles:
                book.add_participant(case_id, subject, role)
        for subject, _ in members:
            book.admit_to_core(case_id, leader, subject)
        if leader_only:
            log.warning("%s: core team is the case manager alone", case_id)
        team = CoreTeam(case_id, leader, members, self.engine.now, leader_only)
        self.teams[case_id] = team
        return team

    # -- step 3: collaboration requests ----------------------------------

    def open_collaboration(self, team: CoreTeam) -> list[CollaborationRequest]:
        now = self.engine.now
        if not team.members:
            self.requests[team.case_id] = []
            return []
        booked, report = self.calendar.book(Booking(
            team.leader, now + self.feedback_latency + self.response_delay,
            self.meeting_duration, team.case_id))
        if report is not None:
            self.conflicts.append(report)
        meeting = [(booked.start, booked.duration)]
        self.engine.schedule(booked.start, EventKind.APPOINTMENT_START, team.case_id)
        self.engine.schedule(booked.end, EventKind.APPOINTMENT_END, team.case_id)

        requests = []
        for subject, role in team.members:
            req = CollaborationRequest(
                case_id=team.case_id, collaborator=subject, team=role,
                role_description=f"{role.value} for {team.case_id}",
                schedule=list(meeting),
                prior_info=[s for s in (Section.TEAM_DETAILS, write_section(role)) if s],
                sent_at=now)
            self.engine.schedule_in(self.feedback_latency, EventKind.REQUEST_DELIVERED,
                                    subject, action=self._request_delivered, payload=req)
            requests.append(req)
        self.requests[team.case_id] = requests
        return requests

    def _request_delivered(self, event) -> None:
        req = event.payload
        if req.state is RequestState.SENT:
            req.state = RequestState.DELIVERED
            req.delivered_at = self.engine.now
            if self.response_delay > 0:
                self.engine.schedule_in(self.response_delay, EventKind.REQUEST_DELIVERED,
                                        req.case_id, action=self._request_delivered,
                                        payload=req)
                return
        req.state = RequestState.ACCEPTED
        req.accepted_at = self.engine.now

    # -- stages ----------------------------------------------------------

    def draw_dwell(self, stage: CaseStage) -> float:
        mean = float(self.table.dwell[stage])
        if self.dwell_model == "fixed" or mean == 0.0:
            return mean
        return float(self.rng_dwell.exponential(mean))

    def advance_stage(self, case_id: str) -> tuple[CaseStage, Optional[float]]:
        """Move the case to a sampled successor and start that stage's dwell.

        Returns the new stage and its dwell (``None`` once Closed).
        """
        current = self.stage_of(case_id)
        if current is CaseStage.CLOSED:
            raise TerminalStage(f"{case_id} is closed")
        nxt = sample_next_stage(self.table, current, self.rng_stage)
        if nxt is CaseStage.CLOSED:
            self.close_case(case_id)
            return nxt, None
        self._set_stage(case_id, nxt)
        dwell = self.draw_dwell(nxt)
        self._begin_dwell(case_id, nxt, dwell)
        return nxt, dwell

    def _begin_dwell(self, case_id: str, stage: CaseStage, dwell: float) -> None:
        def done(_=None):
            self._stage_done(case_id, stage)

        resource_id = self.stage_resources.get(stage)
        if resource_id is None or self.resources is None:
            self.book.log(case_id, "", "", "dwell_start", stage.value, "")
            self.engine.schedule_in(dwell, EventKind.RESOURCE_FREED, case_id,
                                    action=done)
            return

        def granted(grant):
            self.book.log(case_id, "", grant.resource_id, "dwell_start",
                          stage.value, grant.resource_id)

        self.resources.request(resource_id, 1, case_id, dwell,
                               on_grant=granted, on_release=done)

    def _stage_done(self, case_id: str, stage: CaseStage) -> None:
        if self.on_stage_complete is not None:
            self.on_stage_complete(case_id, stage)
        self.advance_stage(case_id)

    def close_case(self, case_id: str) -> CaseStage:
        current = self.stage_of(case_id)
        if current is not CaseStage.TREATMENT_ASSESSMENT:
            raise NotAssessed(f"{case_id} is in {current.value}")
        self._set_stage(case_id, CaseStage.CLOSED)
        self.closed_at[case_id] = self.engine.now
        return CaseStage.CLOSED

    def total_duration(self, case_id: str) -> Optional[float]:
        if case_id not in self.closed_at:
            return None
        return self.closed_at[case_id] - self.book.record(case_id).enrolled_at
