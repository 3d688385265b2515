"""Turning bundles into prompts and obtaining one mode-category label each.

Two annotators are available: a deterministic oracle that reads ground
truth (with a configurable corruption rate, for offline experiments) and
a chat-completion endpoint (see `llm.py`). Responses are parsed by
case-insensitive containment of exactly one class name; anything else is
a parse failure and leaves the bundle unlabeled.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, asdict

import numpy as np

from .graphs import NodeTable
from .sampling import Bundle

TRUNCATION_MARKER = " [truncated]"
NO_TEXT_PLACEHOLDER = "(no text)"

# rng stream tags (see sampling.py for 0 and 1)
_STREAM_ORACLE = 2
_STREAM_NODE_ORACLE = 3


class ResponseParseError(ValueError):
    """The annotator reply did not contain exactly one known class name."""


class AnnotationConfigError(RuntimeError):
    """The annotator is not usable as configured (e.g. missing API key)."""


@dataclass(frozen=True)
class Prompt:
    bundle_id: int
    text: str
    sha256: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("prompt text must be non-empty")
        digest = hashlib.sha256(self.text.encode("utf-8")).hexdigest()
        if digest != self.sha256:
            raise ValueError("prompt digest does not match its text")


@dataclass
class AnnotationRecord:
    bundle_id: int
    prompt_sha256: str
    raw_response: str
    label: int | None
    attempts: int
    annotator: str
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "AnnotationRecord":
        return cls(**json.loads(line))


@dataclass(frozen=True)
class OracleConfig:
    """Simulated annotator: true mode label, corrupted with probability noise_rate."""

    noise_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.noise_rate <= 1.0):
            raise ValueError("noise_rate must be in [0, 1]")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


def build_prompt(
    bundle: Bundle,
    table: NodeTable,
    dataset_description: str,
    max_chars_per_item: int = 2000,
) -> Prompt:
    """Assemble the single prompt asking for the bundle's mode category."""
    if table.texts is None:
        raise ValueError("node table carries no texts; cannot build prompts")
    lines = [dataset_description.strip(), ""]
    lines.append(f"Below are {len(bundle.members)} text items.")
    lines.append("")
    for pos, node in enumerate(bundle.members, start=1):
        if node >= table.n:
            raise ValueError(f"bundle {bundle.id} references node {node} with no table row")
        text = table.texts[node]
        if not text:
            body = NO_TEXT_PLACEHOLDER
        elif len(text) > max_chars_per_item:
            body = text[:max_chars_per_item] + TRUNCATION_MARKER
        else:
            body = text
        lines.append(f"Item {pos}: {body}")
    lines.append("")
    lines.append("Candidate categories:")
    for name in table.class_names:
        lines.append(f"- {name}")
    lines.append("")
    lines.append(
        "Question: identify the single category that MOST of the items above "
        "belong to. Answer with exactly one category name from the candidate "
        "list, and nothing else."
    )
    text = "\n".join(lines)
    return Prompt(
        bundle_id=bundle.id,
        text=text,
        sha256=hashlib.sha256(text.encode("utf-8")).hexdigest(),
    )


def parse_response(raw: str, class_names) -> int:
    """Resolve a free-form reply to a class index.

    Longer class names are matched first and their spans masked, so a name
    that is a substring of another is not double-counted. Exactly one
    distinct class name must occur.
    """
    if not class_names:
        raise ValueError("class_names must be non-empty")
    haystack = raw.casefold()
    order = sorted(range(len(class_names)), key=lambda i: (-len(class_names[i]), i))
    found = []
    for idx in order:
        needle = class_names[idx].strip().casefold()
        start = 0
        hit = False
        while True:
            pos = haystack.find(needle, start)
            if pos < 0:
                break
            hit = True
            haystack = haystack[:pos] + "\x00" * len(needle) + haystack[pos + len(needle):]
            start = pos + len(needle)
        if hit:
            found.append(idx)
    if len(found) != 1:
        names = [class_names[i] for i in sorted(found)]
        raise ResponseParseError(
            f"expected exactly one class name, found {len(found)} ({names}) in {raw!r}"
        )
    return found[0]


def mode_label(member_labels) -> int:
    """Most frequent class among the members; ties go to the lowest index."""
    counts = np.bincount(np.asarray(member_labels, dtype=np.intp))
    return int(np.argmax(counts))


def annotate_oracle(bundle: Bundle, labels, cfg: OracleConfig) -> int:
    """True mode of the member labels, corrupted with probability noise_rate.

    Deterministic given (cfg.seed, bundle.id) regardless of call order.
    """
    member_labels = [labels[m] for m in bundle.members]
    true = mode_label(member_labels)
    if cfg.noise_rate <= 0.0:
        return true
    n_classes = int(max(labels)) + 1
    rng = np.random.default_rng((cfg.seed, _STREAM_ORACLE, bundle.id))
    if rng.random() < cfg.noise_rate and n_classes > 1:
        other = int(rng.integers(n_classes - 1))
        return other if other < true else other + 1
    return true


def annotate_nodes_oracle(node_indices, labels, cfg: OracleConfig) -> np.ndarray:
    """Per-node oracle: the true label, corrupted with probability noise_rate.

    Used by individual-query experiment arms; deterministic per
    (cfg.seed, node index).
    """
    n_classes = int(max(labels)) + 1
    out = np.empty(len(node_indices), dtype=np.intp)
    for pos, node in enumerate(node_indices):
        true = int(labels[node])
        rng = np.random.default_rng((cfg.seed, _STREAM_NODE_ORACLE, int(node)))
        if cfg.noise_rate > 0.0 and rng.random() < cfg.noise_rate and n_classes > 1:
            other = int(rng.integers(n_classes - 1))
            out[pos] = other if other < true else other + 1
        else:
            out[pos] = true
    return out


class AnnotationCache:
    """Append-only JSONL store keyed by prompt digest; safe across threads."""

    def __init__(self, path=None):
        self.path = path
        self._records = {}
        self._lock = threading.Lock()
        if path is not None and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = AnnotationRecord.from_json(line)
                        self._records[rec.prompt_sha256] = rec

    def get(self, sha256: str) -> AnnotationRecord | None:
        with self._lock:
            return self._records.get(sha256)

    def put(self, record: AnnotationRecord) -> None:
        with self._lock:
            self._records[record.prompt_sha256] = record
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(record.to_json() + "\n")

    def __len__(self) -> int:
        return len(self._records)


@dataclass
class AnnotationSummary:
    records: list
    n_labeled: int
    n_failed: int


def annotate_all(
    bundles,
    table: NodeTable,
    *,
    oracle: OracleConfig = None,
    llm=None,
    cache: AnnotationCache = None,
    dataset_description: str = "",
) -> AnnotationSummary:
    """Label every bundle in place and return one record per bundle.

    Exactly one of `oracle` / `llm` must be given. Per-bundle failures are
    recorded, not raised; failed bundles keep label None.
    """
    if (oracle is None) == (llm is None):
        raise ValueError("pass exactly one of oracle= or llm=")
    records = []
    if oracle is not None:
        if table.labels is None:
            raise ValueError("oracle annotation needs ground-truth labels in the node table")
        for b in bundles:
            label = annotate_oracle(b, table.labels, oracle)
            b.label = label
            records.append(
                AnnotationRecord(
                    bundle_id=b.id,
                    prompt_sha256="",
                    raw_response=table.class_names[label],
                    label=label,
                    attempts=1,
                    annotator="oracle",
                )
            )
    else:
        from .llm import annotate_llm

        if cache is None:
            cache = AnnotationCache()
        prompts = [
            build_prompt(b, table, dataset_description, llm.max_chars_per_item) for b in bundles
        ]
        by_id = {}
        if llm.parallelism > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=llm.parallelism) as pool:
                for rec in pool.map(
                    lambda p: annotate_llm(p, llm, cache, table.class_names), prompts
                ):
                    by_id[rec.bundle_id] = rec
        else:
            for prompt in prompts:
                rec = annotate_llm(prompt, llm, cache, table.class_names)
                by_id[rec.bundle_id] = rec
        for b in bundles:
            rec = by_id[b.id]
            b.label = rec.label
            records.append(rec)
    n_labeled = sum(1 for r in records if r.label is not None)
    return AnnotationSummary(records=records, n_labeled=n_labeled, n_failed=len(records) - n_labeled)


def save_records(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
