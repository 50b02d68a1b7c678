"""Shared drivers for randomized lifecycle and workflow checks."""

import random
from dataclasses import dataclass, field

from casecollab.errors import (
    AccessDenied,
    NotApproved,
    NotAuthor,
    NotCaseManager,
    NotFlagged,
    NotPending,
)
from casecollab.kernel import Engine
from casecollab.record import CaseBook, Right, Role, Section, Status, Verdict

EDGES = {("Pending", "Flagged"), ("Pending", "Approved"), ("Flagged", "Pending"),
         ("Approved", "Merged")}

SUBJECTS = {
    "M": Role.CASE_MANAGER,
    "N1": Role.NURSE,
    "L1": Role.LAB_TECHNICIAN,
    "A1": Role.ALLIED_HEALTH,
    "P1": Role.PATIENT,
    "C1": Role.CARETAKER,
    "AD": Role.ADMINISTRATOR,
    "PS": Role.PSYCHO_SOCIAL,
    "X": None,  # stranger, no grants
}
CORE = ("N1", "L1", "A1")


def new_book(validation_latency=10.0, feedback_latency=1.0):
    eng = Engine()
    book = CaseBook(eng, validation_latency, feedback_latency)
    rec = book.enroll_case("patient P1", "", "caretaker C1", manager="M")
    for s, role in SUBJECTS.items():
        if role is not None and s != "M":
            book.add_participant(rec.case_id, s, role)
    for s in CORE:
        book.admit_to_core(rec.case_id, "M", s)
    return eng, book, rec.case_id


@dataclass
class LifecycleOutcome:
    illegal_transitions: int = 0
    unmerged_reads: int = 0
    merged_without_resubmit: int = 0
    prefix_violations: int = 0
    version_mismatches: int = 0
    unexpected_outcomes: list = field(default_factory=list)
    merges: int = 0
    resubmitted_merges: int = 0


def run_random_lifecycle(seed: int, n_ops: int = 60) -> LifecycleOutcome:
    """Drive one case with random operations, checking against an independent model."""
    rng = random.Random(seed)
    eng, book, case_id = new_book()
    out = LifecycleOutcome()
    model: dict[str, str] = {}  # contrib_id -> status, maintained independently
    merged_payloads: set = set()
    all_payloads: set = set()
    snapshots = []
    counter = 0

    def expect(fn, allowed_exc):
        try:
            return fn(), None
        except Exception as exc:  # noqa: BLE001
            if allowed_exc is None or not isinstance(exc, allowed_exc):
                out.unexpected_outcomes.append(repr(exc))
            return None, exc

    def pick(ids, state):
        # mostly legal targets, sometimes anything, to exercise the guards
        legal = [i for i in ids if model[i] == state]
        return rng.choice(legal if legal and rng.random() < 0.75 else ids)

    for _ in range(n_ops):
        op = rng.choice(["submit", "validate", "resubmit", "merge", "read", "read", "step"])
        ids = sorted(model)
        if op == "submit":
            author = rng.choice(list(SUBJECTS))
            section = rng.choice(list(Section))
            counter += 1
            payload = f"payload-{counter}"
            pol = book.policies[case_id]
            can = pol.allows(author, section, Right.WRITE)
            c, exc = expect(lambda: book.submit_contribution(case_id, author, section, payload),
                            None if can else AccessDenied)
            if can and c is not None:
                model[c.contrib_id] = "Pending"
                all_payloads.add(payload)
        elif op == "validate" and ids:
            cid = pick(ids, "Pending")
            who = rng.choice(["M", "M", "M", "N1"])
            verdict = rng.choice([Verdict.OK, Verdict.IRREGULAR])
            ok = model[cid] == "Pending" and who == "M"
            err = NotPending if model[cid] != "Pending" else NotCaseManager
            _, exc = expect(lambda: book.validate(cid, who, verdict), None if ok else err)
            if ok and exc is None:
                model[cid] = "Approved" if verdict is Verdict.OK else "Flagged"
        elif op == "resubmit" and ids:
            cid = pick(ids, "Flagged")
            c = book.contributions[cid]
            who = rng.choice([c.author, c.author, "X"])
            ok = model[cid] == "Flagged" and who == c.author
            err = NotFlagged if model[cid] != "Flagged" else NotAuthor
            counter += 1
            payload = f"payload-{counter}"
            _, exc = expect(lambda: book.resubmit(cid, who, payload), None if ok else err)
            if ok and exc is None:
                model[cid] = "Pending"
                all_payloads.add(payload)
        elif op == "merge" and ids:
            cid = pick(ids, "Approved")
            ok = model[cid] == "Approved"
            _, exc = expect(lambda: book.approve_and_merge(cid, "M"), None if ok else NotApproved)
            if ok and exc is None:
                model[cid] = "Merged"
                merged_payloads.add(book.contributions[cid].payload)
                out.merges += 1
        elif op == "read":
            subject = rng.choice(list(SUBJECTS))
            section = rng.choice(list(Section))
            can = book.policies[case_id].allows(subject, section, Right.READ)
            content, _ = expect(lambda: book.read_section(case_id, subject, section),
                                None if can else AccessDenied)
            if content is not None and content not in merged_payloads:
                out.unmerged_reads += 1
        elif op == "step":
            eng.step()

        rec = book.records[case_id]
        snapshots.append(list(rec.merged_log))
        if rec.version != len(rec.merged_log):
            out.version_mismatches += 1
        for cid, status in model.items():
            if book.contributions[cid].status.value != status:
                out.unexpected_outcomes.append(f"{cid} status drift")

    for a, b in zip(snapshots, snapshots[1:]):
        if b[:len(a)] != a:
            out.prefix_violations += 1

    # replay the audit trail
    history: dict[str, list] = {}
    for e in book.audit:
        if e.contrib_id:
            history.setdefault(e.contrib_id, []).append((e.old_status, e.new_status))
    for cid, steps in history.items():
        for old, new in steps[1:]:
            if (old, new) not in EDGES:
                out.illegal_transitions += 1
        flagged_since_resubmit = False
        for old, new in steps:
            if new == "Flagged":
                flagged_since_resubmit = True
            elif old == "Flagged" and new == "Pending":
                flagged_since_resubmit = False
            elif new == "Merged" and flagged_since_resubmit:
                out.merged_without_resubmit += 1
        if steps[-1][1] == "Merged" and ("Flagged", "Pending") in steps:
            out.resubmitted_merges += 1
        if steps[-1][1] == "Merged" and ("Pending", "Approved") not in steps:
            out.illegal_transitions += 1
        if book.contributions[cid].status is Status.MERGED:
            assert cid in book.records[case_id].merged_log
    return out
