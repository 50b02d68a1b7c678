"""Versioned case records, the contribution lifecycle and access control.

A contribution moves Pending -> Approved -> Merged, or detours through
Flagged and back to Pending on resubmission. Merging appends to the case's
linear history and bumps its version by one. Reads go through a
default-deny, per-subject access policy owned by the case manager.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, TextIO

from .errors import (
    AccessDenied,
    EmptyEnrollment,
    IllegalTransition,
    NotApproved,
    NotAuthor,
    NotCaseManager,
    NotCoreTeamMember,
    NotFlagged,
    NotPending,
    UnknownCase,
    UnknownContribution,
)
from .kernel import Engine, EventKind


class Role(Enum):
    CASE_MANAGER = "CaseManager"
    NURSE = "Nurse"
    LAB_TECHNICIAN = "LabTechnician"
    ALLIED_HEALTH = "AlliedHealth"
    PATIENT = "Patient"
    CARETAKER = "Caretaker"
    ADMINISTRATOR = "Administrator"
    PSYCHO_SOCIAL = "PsychoSocial"


class Section(Enum):
    LAB_RESULTS = "LabResults"
    TREATMENT_PLAN = "TreatmentPlan"
    TEAM_DETAILS = "TeamDetails"
    APPOINTMENTS = "Appointments"
    PROGRESS_SUMMARY = "ProgressSummary"
    COUNSELLING_NOTES = "CounsellingNotes"
    FULL_RECORD = "FullRecord"


class Right(Enum):
    READ = "Read"
    WRITE = "Write"


class Status(Enum):
    PENDING = "Pending"
    FLAGGED = "Flagged"
    APPROVED = "Approved"
    MERGED = "Merged"


class Verdict(Enum):
    OK = "Ok"
    IRREGULAR = "Irregular"


LEGAL_TRANSITIONS = {
    (Status.PENDING, Status.FLAGGED),
    (Status.PENDING, Status.APPROVED),
    (Status.FLAGGED, Status.PENDING),
    (Status.APPROVED, Status.MERGED),
}

# the section each care role writes to when on a core team
ROLE_SECTION = {
    Role.NURSE: Section.TREATMENT_PLAN,
    Role.LAB_TECHNICIAN: Section.LAB_RESULTS,
    Role.ALLIED_HEALTH: Section.APPOINTMENTS,
    Role.PSYCHO_SOCIAL: Section.COUNSELLING_NOTES,
}
MANAGER_SECTION = Section.PROGRESS_SUMMARY

STAKEHOLDER_VIEW = (Section.LAB_RESULTS, Section.TREATMENT_PLAN,
                    Section.TEAM_DETAILS, Section.APPOINTMENTS)


def _reads(*sections: Section) -> frozenset:
    return frozenset((s, Right.READ) for s in sections)


def _writes(*sections: Section) -> frozenset:
    return frozenset((s, Right.WRITE) for s in sections)


DEFAULT_ACCESS: dict[Role, frozenset] = {
    Role.CASE_MANAGER: _reads(*Section) | _writes(*Section),
    Role.NURSE: _reads(*STAKEHOLDER_VIEW) | _writes(Section.TREATMENT_PLAN),
    Role.LAB_TECHNICIAN: _reads(*STAKEHOLDER_VIEW) | _writes(Section.LAB_RESULTS),
    Role.ALLIED_HEALTH: _reads(*STAKEHOLDER_VIEW) | _writes(Section.APPOINTMENTS),
    Role.PATIENT: _reads(*STAKEHOLDER_VIEW),
    Role.CARETAKER: _reads(*STAKEHOLDER_VIEW),
    Role.ADMINISTRATOR: _reads(Section.PROGRESS_SUMMARY, Section.TEAM_DETAILS),
    Role.PSYCHO_SOCIAL: _reads(Section.PROGRESS_SUMMARY) | _writes(Section.COUNSELLING_NOTES),
}


def write_section(role: Role) -> Optional[Section]:
    if role is Role.CASE_MANAGER:
        return MANAGER_SECTION
    return ROLE_SECTION.get(role)


@dataclass
class AccessPolicy:
    """Discretionary grants keyed by subject; anything not granted is denied."""

    granted_by: str
    grants: dict[str, set] = field(default_factory=dict)
    roles: dict[str, Role] = field(default_factory=dict)
    core: set = field(default_factory=set)

    def allows(self, subject: str, section: Section, right: Right) -> bool:
        return (section, right) in self.grants.get(subject, ())

    def rights(self, subject: str) -> frozenset:
        return frozenset(self.grants.get(subject, ()))

    def add(self, subject: str, section: Section, right: Right) -> None:
        if right is Right.WRITE and subject not in self.core:
            raise NotCoreTeamMember(f"{subject} is not on the core team; cannot hold Write")
        self.grants.setdefault(subject, set()).add((section, right))


@dataclass
class CaseRecord:
    case_id: str
    patient_bio: str
    medical_history: str
    caretaker_details: str
    enrolled_at: float
    stage: object = None  # mirrored from the collaboration workflow
    version: int = 0
    merged_log: list = field(default_factory=list)
    sections: dict = field(default_factory=dict)


@dataclass
class Contribution:
    contrib_id: str
    case_id: str
    author: str
    role: Role
    section: Section
    payload: str
    submitted_at: float
    status: Status = Status.PENDING
    revision: int = 0


@dataclass(frozen=True)
class AuditEntry:
    time: float
    case_id: str
    contrib_id: str
    actor: str
    action: str
    old_status: str
    new_status: str
    version: int

    def to_json(self) -> str:
        return json.dumps({
            "time": self.time, "case_id": self.case_id, "contrib_id": self.contrib_id,
            "actor": self.actor, "action": self.action, "old_status": self.old_status,
            "new_status": self.new_status, "version": self.version,
        }, sort_keys=True)


class CaseBook:
    """All case records, contributions and policies for one engine.

    Hooks let the surrounding workflow react to scheduled lifecycle events:
    ``on_validation_due(contrib)`` when a ValidationCompleted event fires,
    ``on_flag_delivered(contrib)`` when the author receives a flag notice,
    ``on_merged(contrib, record)`` when MergeCompleted fires.
    """

    def __init__(self, engine: Engine, validation_latency: float = 1440.0,
                 feedback_latency: float = 15.0):
        self.engine = engine
        self.validation_latency = float(validation_latency)
        self.feedback_latency = float(feedback_latency)
        self.records: dict[str, CaseRecord] = {}
        self.contributions: dict[str, Contribution] = {}
        self.policies: dict[str, AccessPolicy] = {}
        self.audit: list[AuditEntry] = []
        self._case_ids = itertools.count(1)
        self._contrib_ids = itertools.count(1)
        self.on_validation_due: Optional[Callable[[Contribution], None]] = None
        self.on_flag_delivered: Optional[Callable[[Contribution], None]] = None
        self.on_merged: Optional[Callable[[Contribution, CaseRecord], None]] = None

    # -- lookup ----------------------------------------------------------

    def record(self, case_id: str) -> CaseRecord:
        try:
            return self.records[case_id]
        except KeyError:
            raise UnknownCase(case_id) from None

    def policy(self, case_id: str) -> AccessPolicy:
        self.record(case_id)
        return self.policies[case_id]

    def contribution(self, contrib_id: str) -> Contribution:
        try:
            return self.contributions[contrib_id]
        except KeyError:
            raise UnknownContribution(contrib_id) from None

    def log(self, case_id: str, contrib_id: str, actor: str, action: str,
            old: str = "", new: str = "") -> None:
        version = self.records[case_id].version if case_id in self.records else 0
        self.audit.append(AuditEntry(self.engine.now, case_id, contrib_id, actor,
                                     action, old, new, version))

    def _move(self, c: Contribution, new: Status, actor: str, action: str) -> None:
        if (c.status, new) not in LEGAL_TRANSITIONS:
            raise IllegalTransition(f"{c.contrib_id}: {c.status.value} -> {new.value}")
        old = c.status
        c.status = new
        self.log(c.case_id, c.contrib_id, actor, action, old.value, new.value)

    def _require_manager(self, case_id: str, manager: str) -> AccessPolicy:
        policy = self.policy(case_id)
        if manager != policy.granted_by:
            raise NotCaseManager(f"{manager} does not manage {case_id}")
        return policy

    # -- enrollment and access ------------------------------------------

    def enroll_case(self, bio: str, history: str = "", caretaker: str = "",
                    manager: str = "") -> CaseRecord:
        if not bio or not bio.strip():
            raise EmptyEnrollment("patient bio-data is required")
        case_id = f"case-{next(self._case_ids):04d}"
        rec = CaseRecord(case_id, bio, history, caretaker, self.engine.now)
        self.records[case_id] = rec
        self.policies[case_id] = AccessPolicy(granted_by=manager)
        if manager:
            self.add_participant(case_id, manager, Role.CASE_MANAGER)
        self.log(case_id, "", manager, "enroll", "", "Enrolled")
        return rec

    def add_participant(self, case_id: str, subject: str, role: Role) -> None:
        """Register ``subject`` under ``role`` and issue the role's default reads.

        The case manager is the policy owner and receives every right.
        """
        policy = self.policy(case_id)
        policy.roles[subject] = role
        if role is Role.CASE_MANAGER:
            if policy.granted_by and policy.granted_by != subject:
                raise NotCaseManager(f"{case_id} is already led by {policy.granted_by}")
            policy.granted_by = subject
            policy.core.add(subject)
            policy.grants.setdefault(subject, set()).update(DEFAULT_ACCESS[role])
            return
        for section, right in DEFAULT_ACCESS[role]:
            if right is Right.READ:
                policy.add(subject, section, right)

    def admit_to_core(self, case_id: str, manager: str, subject: str) -> Optional[Section]:
        """Make ``subject`` a core-team member and grant Write on its role's section."""
        policy = self._require_manager(case_id, manager)
        role = policy.roles[subject]
        policy.core.add(subject)
        section = ROLE_SECTION.get(role)
        if section is not None:
            self.grant(case_id, manager, subject, section, Right.WRITE)
        return section

    def grant(self, case_id: str, manager: str, subject: str, section: Section,
              right: Right) -> AccessPolicy:
        policy = self._require_manager(case_id, manager)
        policy.add(subject, section, right)
        self.log(case_id, "", manager, "grant", subject, f"{right.value}:{section.value}")
        return policy

    def read_section(self, case_id: str, subject: str, section: Section) -> Optional[str]:
        rec = self.record(case_id)
        if not self.policies[case_id].allows(subject, section, Right.READ):
            raise AccessDenied(f"{subject} may not read {section.value} of {case_id}")
        return rec.sections.get(section)

    # -- contribution lifecycle ------------------------------------------

    def submit_contribution(self, case_id: str, author: str, section: Section,
                            payload: str) -> Contribution:
        self.record(case_id)
        policy = self.policies[case_id]
        if not policy.allows(author, section, Right.WRITE):
            raise AccessDenied(f"{author} may not write {section.value} of {case_id}")
        c = Contribution(f"c{next(self._contrib_ids):05d}", case_id, author,
                         policy.roles.get(author, Role.CASE_MANAGER), section, payload,
                         self.engine.now)
        self.contributions[c.contrib_id] = c
        self.log(case_id, c.contrib_id, author, "submit", "", Status.PENDING.value)
        self._schedule_validation(c)
        return c

    def _schedule_validation(self, c: Contribution) -> None:
        self.engine.schedule_in(self.validation_latency, EventKind.VALIDATION_COMPLETED,
                                c.contrib_id, action=self._validation_due, payload=c)

    def _validation_due(self, event) -> None:
        if self.on_validation_due is not None:
            self.on_validation_due(event.payload)

    def validate(self, contrib_id: str, manager: str, verdict: Verdict) -> Status:
        c = self.contribution(contrib_id)
        if c.status is not Status.PENDING:
            raise NotPending(f"{contrib_id} is {c.status.value}")
        self._require_manager(c.case_id, manager)
        if verdict is Verdict.OK:
            self._move(c, Status.APPROVED, manager, "approve")
        else:
            self._move(c, Status.FLAGGED, manager, "flag")
            self.engine.schedule_in(self.feedback_latency, EventKind.REQUEST_DELIVERED,
                                    c.author, action=self._flag_delivered, payload=c)
        return c.status

    def _flag_delivered(self, event) -> None:
        if self.on_flag_delivered is not None:
            self.on_flag_delivered(event.payload)

    def resubmit(self, contrib_id: str, author: str, payload: str) -> Contribution:
        c = self.contribution(contrib_id)
        if c.status is not Status.FLAGGED:
            raise NotFlagged(f"{contrib_id} is {c.status.value}")
        if author != c.author:
            raise NotAuthor(f"{author} did not author {contrib_id}")
        c.payload = payload
        c.revision += 1
        self._move(c, Status.PENDING, author, "resubmit")
        self._schedule_validation(c)
        return c

    def approve_and_merge(self, contrib_id: str, manager: str) -> int:
        c = self.contribution(contrib_id)
        if c.status is not Status.APPROVED:
            raise NotApproved(f"{contrib_id} is {c.status.value}")
        self._require_manager(c.case_id, manager)
        rec = self.records[c.case_id]
        rec.merged_log.append(c.contrib_id)
        rec.version += 1
        rec.sections[c.section] = c.payload
        self._move(c, Status.MERGED, manager, "merge")
        self.engine.schedule_in(0.0, EventKind.MERGE_COMPLETED, c.case_id,
                                action=self._merged, payload=c)
        return rec.version

    def _merged(self, event) -> None:
        if self.on_merged is not None:
            c = event.payload
            self.on_merged(c, self.records[c.case_id])

    # -- export ----------------------------------------------------------

    def export_audit(self, out: TextIO, entries: Optional[Iterable[AuditEntry]] = None) -> None:
        for entry in self.audit if entries is None else entries:
            out.write(entry.to_json() + "\n")
