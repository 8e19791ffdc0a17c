"""Generate the 10-document pipeline fixture corpus under tests/fixtures/pipeline/.

Each document exercises one pipeline path:
  cr0001  evaluation-pinned, security-relevant, all three tasks build
  cr0002  short pre-change text: fill task dropped by the word-count rule
  cr0003  security-relevant training document
  cr0004  plain training document
  cr0005  rationale shares a 20-word run with cr0001: fill and diff decontaminated
  cr0006  insertion-only body: fill task rejected (empty pre-change text)
  cr0007  security-relevant training document
  cr0008  no revision marks: diff task rejected
  cr0009  fill and outline instances labeled Non-educational in the test labels
  cr0010  plain training document

The script asserts the word-count constraints each path relies on, then writes
the files. Run from the repository root: python3 scripts/gen_pipeline_fixture.py
"""

from __future__ import annotations

import json
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "pipeline"

# the 20-word run planted in cr0001 and cr0005 rationale text
SHARED = (
    "The network shall reject any detach request that arrives without integrity "
    "protection when a valid security context is available for the terminal."
)

HEADER = "24.101 CR {num:04d} rev 1 Current version 17.2.0"


def doc(num: int, title: str, reason: str, summary: str, consequences: str, body: str) -> str:
    return "\n".join(
        [
            HEADER.format(num=num),
            "",
            f"Title: {title}",
            "Date: 2024-03-11",
            "Category: F (Correction)",
            "Release: Rel-17",
            "",
            "Reason for change:",
            reason,
            "",
            "Summary of change:",
            summary,
            "",
            "Consequences if not approved:",
            consequences,
            "",
            "Changes:",
            body,
        ]
    )


DOCS = {
    1: doc(
        1,
        "Reject unprotected detach while a security context is active",
        "A detach request that fails its integrity check is currently honoured even while "
        "a security context is active. " + SHARED + " Without this correction an attacker "
        "can forge detach messages on the air interface.",
        "The detach handling table is extended with an explicit rejection rule for "
        "unprotected requests received while a valid security context is active.",
        "An attacker can silently disconnect a victim terminal and keep it unreachable "
        "until the periodic update timer expires, which enables a lasting denial of service.",
        "\n".join(
            [
                "4.4.4 Integrity checking of signalling messages",
                "The following messages are processed regardless of protection status:",
                "- IDENTITY RESPONSE given during an identification procedure;",
                "[-] - DETACH REQUEST accepted in every state without further checks;",
                "[+] - DETACH REQUEST only when no valid security context exists for the terminal;",
                "[+] When a valid security context exists the network discards an unprotected detach request.",
                "All other signalling messages require a successful integrity check before processing.",
            ]
        ),
    ),
    2: doc(
        2,
        "Clarify timer restart behaviour after reset",
        "Re-reading the timer clause showed that implementers disagree about whether the "
        "supervision timer resumes counting after a platform reset completes its recovery phase.",
        "The timer clause now states that supervision timers stop immediately on reset and "
        "restart from their initial value after recovery completes.",
        "Diverging implementations keep retrying at different moments which complicates "
        "interoperability testing across vendors.",
        "\n".join(
            [
                "5.3.1 Supervision timers govern retransmission, recovery, and congestion "
                "escape behaviour across protocol layers during attach handling procedures.",
                "[-] Timers stop on reset.",
                "[+] Timers stop immediately on reset and restart from their initial value after "
                "recovery completes in every affected layer.",
            ]
        ),
    ),
    3: doc(
        3,
        "Mandate ciphering before user data transfer",
        "User plane bearers can currently be established before the ciphering configuration "
        "completes, which leaves a short window where traffic crosses the radio link unprotected.",
        "Bearer establishment is reordered so that the ciphering configuration must complete "
        "before any user plane data transfer begins.",
        "Traffic sent during the unprotected window can be read by a passive eavesdropper "
        "near the cell, disclosing user payload content.",
        "\n".join(
            [
                "6.2.2 Bearer establishment sequencing rules for the access stratum define the "
                "permitted ordering of configuration and activation steps during session setup.",
                "The base station allocates bearer resources after the admission decision succeeds.",
                "[-] User plane transfer may begin as soon as bearer resources are allocated.",
                "[+] User plane transfer begins only after the ciphering configuration has been "
                "applied and acknowledged on both sides.",
                "Resource release follows the inverse order of establishment.",
            ]
        ),
    ),
    4: doc(
        4,
        "Correct the codec preference table ordering",
        "The codec preference table lists the narrowband entry above the wideband entry, "
        "contradicting the negotiation text that prefers wideband whenever both ends support it.",
        "The two table rows are swapped so that the wideband codec is listed first, matching "
        "the negotiation rules in the body text.",
        "Terminals that follow the table verbatim negotiate the lower quality codec even "
        "when both sides support the better one, degrading speech quality for no reason.",
        "\n".join(
            [
                "7.1.5 Codec preference during session negotiation follows the ranked table "
                "below, evaluated top to bottom until both endpoints support an entry.",
                "[-] Row 1: narrowband codec, mandatory support, default selection.",
                "[-] Row 2: wideband codec, optional support, preferred when available.",
                "[+] Row 1: wideband codec, optional support, preferred when available.",
                "[+] Row 2: narrowband codec, mandatory support, fallback selection.",
                "The ranked table applies to initial negotiation and to renegotiation alike.",
            ]
        ),
    ),
    5: doc(
        5,
        "Align detach handling text with the rejection rule",
        "Observed deployments honour unprotected detach messages whenever the supervision "
        "timer is running. " + SHARED + " Operators reported silent subscriber disconnections "
        "tracked back to this lenient handling.",
        "The descriptive handling text is aligned with the rejection rule so that the "
        "procedural clause and the overview table can no longer be read to disagree.",
        "Implementations keep shipping the lenient interpretation, leaving subscribers open "
        "to forged detach messages from a nearby false base station.",
        "\n".join(
            [
                "4.4.5 Overview of detach handling describes the actions taken by the network "
                "when a detach request arrives in each protection state.",
                "[-] The network follows the request regardless of the protection state observed.",
                "[+] The network applies the protection rules of clause 4.4.4 before acting on the request.",
                "The overview table is informative; the procedural clauses remain normative.",
            ]
        ),
    ),
    6: doc(
        6,
        "Introduce a recovery note for stale configuration data",
        "Field traces show terminals applying stale configuration data after an unusual "
        "sequence of partial failures, because no clause describes the recovery expectation "
        "for that corner of the state machine.",
        "A new note is added describing how stale configuration data is discarded and "
        "refreshed after partial failure recovery completes.",
        "Terminals keep operating on stale parameters which leads to spurious rejections "
        "that are very hard to reproduce in the lab.",
        "\n".join(
            [
                "[+] NOTE 4: After recovery from a partial failure the terminal discards any "
                "configuration data older than the recovery point and requests a fresh copy "
                "before resuming normal operation, so stale parameters can never survive the "
                "recovery procedure in any affected layer.",
            ]
        ),
    ),
    7: doc(
        7,
        "Require fresh authentication after context transfer",
        "A context transferred between nodes currently keeps its previous authentication "
        "state indefinitely, so a long-lived context never re-proves the identity it claims.",
        "A freshness requirement is added: after a context transfer the target node runs a "
        "new authentication exchange before granting service beyond emergency calls.",
        "A stolen or replayed context grants service indefinitely, letting an attacker "
        "impersonate the original subscriber across node boundaries.",
        "\n".join(
            [
                "8.3.2 Context transfer between serving nodes carries security state, bearer "
                "state, and subscription parameters as one transaction during relocation.",
                "The target node validates the structural integrity of the received context.",
                "[-] The target node accepts the transferred authentication state as current.",
                "[+] The target node runs a fresh authentication exchange before granting any "
                "service other than emergency calls.",
                "Transfer failures fall back to the initial registration procedure.",
            ]
        ),
    ),
    8: doc(
        8,
        "Editorial restatement of the paging scope clause",
        "The paging scope clause mixes the description of the tracking area list with the "
        "description of the paging escalation strategy, which keeps confusing new readers "
        "even though the behaviour itself is correct.",
        "The clause is split into one paragraph about the tracking area list and one "
        "paragraph about escalation, with no behavioural change intended.",
        "Readers keep misquoting the clause in change requests, wasting meeting time on "
        "non-issues caused purely by the tangled wording.",
        "\n".join(
            [
                "9.1.1 Paging scope: the network pages a terminal within the tracking area "
                "list assigned at the last registration, holding escalation in reserve.",
                "Escalation widens the paged area step by step when earlier attempts stay "
                "unanswered within their response windows.",
                "The escalation schedule is an operator policy outside this specification.",
            ]
        ),
    ),
    9: doc(
        9,
        "Tighten the measurement report encoding rule",
        "The encoding rule for measurement reports allows two different orderings of the "
        "same information elements, and receivers disagree about which ordering to expect "
        "when both appear in the field.",
        "The encoding rule is tightened to a single canonical ordering of the information "
        "elements, with the alternative ordering deprecated for new implementations.",
        "Receivers that expect the other ordering discard valid reports, which degrades "
        "mobility decisions in mixed-vendor deployments.",
        "\n".join(
            [
                "10.2.4 Measurement report encoding lists the information elements included "
                "in a report and the order in which they appear on the radio interface.",
                "[-] Elements may appear in registration order or in measurement order.",
                "[+] Elements appear in measurement order; registration order is deprecated "
                "and shall not be used by new implementations.",
                "Legacy receivers continue to accept both orderings during a transition period.",
            ]
        ),
    ),
    10: doc(
        10,
        "Fix the reference to the congestion back-off clause",
        "Clause 11.4 cites the congestion back-off behaviour as clause 11.7, but the "
        "back-off behaviour has lived in clause 11.8 since the document was restructured "
        "two releases ago, so the citation points at the wrong text.",
        "The stale cross reference in clause 11.4 is updated to point at clause 11.8 where "
        "the congestion back-off behaviour is actually specified.",
        "Implementers following the stale reference land in the load reporting clause and "
        "derive back-off timers from the wrong table, causing synchronized retry storms.",
        "\n".join(
            [
                "11.4 Congestion handling at the access node relies on the back-off behaviour "
                "referenced below when admission rejections exceed the configured threshold.",
                "[-] The back-off behaviour is specified in clause 11.7 of this document.",
                "[+] The back-off behaviour is specified in clause 11.8 of this document.",
                "Load reporting stays unchanged and is specified in clause 11.7.",
            ]
        ),
    ),
}

GENERAL_DOCS = [
    "The 5g handover procedure requires integrity protection for rrc signalling messages "
    "between the terminal and the network.",
    "Cooking recipes with garlic butter improve flavor according to long culinary tradition "
    "and regional preference.",
    "The lte scheduler allocates radio resources fairly among active bearers using a "
    "proportional fair metric.",
    "Spoofing attack considerations for paging response handling in gsm networks require "
    "strict authentication of the responding terminal.",
]


def payload_words(num: int) -> dict[str, int]:
    """Word counts of each task's query payload, mirroring the pipeline rules."""
    text = DOCS[num]
    body = text.split("Changes:\n", 1)[1]
    lines = body.split("\n")
    pre = [ln for ln in lines if not ln.startswith("[+]")]
    pre = [ln[4:] if ln.startswith("[-] ") else ln for ln in pre]
    s_orig = "\n".join(pre)
    sections = {}
    for name in ("Reason for change", "Summary of change", "Consequences if not approved"):
        part = text.split(name + ":\n", 1)[1]
        sections[name] = part.split("\n\n", 1)[0]
    fill = len(s_orig.split())
    outline = len(
        (
            s_orig
            + " >>> REASON FOR CHANGE "
            + sections["Reason for change"]
            + " >>> CONSEQUENCES IF NOT REVISED "
            + sections["Consequences if not approved"]
        ).split()
    )
    diff = len(body.split())
    return {"fill": fill, "outline": outline, "diff": diff}


def main() -> None:
    counts = {num: payload_words(num) for num in DOCS}
    # cr0002: fill below the 30-word floor, outline and diff above it
    assert counts[2]["fill"] < 30, counts[2]
    assert counts[2]["outline"] >= 30 and counts[2]["diff"] >= 30, counts[2]
    # cr0006: empty pre-change text, diff payload above the floor
    assert counts[6]["fill"] == 0 and counts[6]["diff"] >= 30, counts[6]
    # everything else: all payloads above the floor
    for num, c in counts.items():
        if num in (2, 6):
            continue
        assert min(c.values()) >= 30, (num, c)
    # the shared 20-word run appears verbatim in both rationale texts
    assert SHARED in DOCS[1] and SHARED in DOCS[5]
    assert len(SHARED.lower().split()) == 22  # the run holds at least one full 20-gram window

    OUT.mkdir(parents=True, exist_ok=True)
    for num, text in DOCS.items():
        (OUT / f"24.101_{num:04d}_1.txt").write_text(text + "\n", encoding="utf-8")
    (OUT / "eval_ids.txt").write_text("24.101_0001_1\n", encoding="utf-8")
    with open(OUT / "general_docs.jsonl", "w", encoding="utf-8") as fh:
        for doc_text in GENERAL_DOCS:
            fh.write(json.dumps({"text": doc_text}) + "\n")
    print(f"wrote {len(DOCS)} documents plus eval_ids.txt and general_docs.jsonl to {OUT}")
    for num in sorted(counts):
        print(f"  cr{num:04d}: {counts[num]}")


if __name__ == "__main__":
    main()
