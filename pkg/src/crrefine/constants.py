"""Published scale of the upstream corpus snapshot this toolkit was built against.

These numbers describe the source snapshot, not anything this package computes.
They are recorded so pipeline runs can sanity-check a full re-crawl against the
snapshot the dataset recipes were tuned on.
"""

from __future__ import annotations

UPSTREAM_CORPUS_STATS: dict[str, int] = {
    # change-request documents collected from the public archive
    "collected_documents": 205374,
    # documents that survived coversheet + revision-mark parsing
    "parsed_documents": 189904,
    # parsed documents classified as security-relevant
    "security_relevant": 4869,
    # security-relevant documents cross-referenced with an external attack catalog
    "cross_referenced": 529,
    # held-out evaluation set size
    "evaluation_set": 200,
    # entries in the external attack catalog used for cross-referencing
    "attack_catalog_entries": 1922,
}
