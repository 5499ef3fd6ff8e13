"""Corpus synthesis for knowledge gaps.

Each gap arrives as a subclass triple (D under A) plus the premise chain
that derived it (D under C, C under A). Two strategies turn it into
training text. The explicit strategy writes a question-answer pair that
states the chain outright. The implicit strategy asks the tuned-model-to-be
for open prose about the three concepts and distills the answers from the
current model, with the chain appended as a hint the model may ignore; the
relationship then reaches the corpus embedded in natural text instead of as
a bare fact.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .gateway import GenerateRequest, ModelGateway
from .ontology import TripleRecord

log = logging.getLogger(__name__)

TEMPLATE_SET_VERSION = "v1"

FUNCTION_TEMPLATE = "Outline the primary functions of {concept}."
SUBTYPE_TEMPLATE = ("Identify and describe any subtypes of {concept}. "
                    "Explain how these subtypes vary in structure and function.")
HINT_TEMPLATE = (" You can consider these relationships as follows, but please "
                 "ignore them if they are unnecessary: {D} is a subclass of {C}, "
                 "and {C} is a subclass of {A}.")
EXPLICIT_INSTRUCTION = "Is {D} a subclass of {A}? Answer and explain using intermediate concepts."
EXPLICIT_OUTPUT = ("Yes. {D} is a subclass of {C}, and {C} is a subclass of {A}. "
                   "Therefore, {D} is a subclass of {A}.")

STRATEGIES = ("explicit", "implicit", "mix")


def _fill(template: str, d: str, c: str, a: str) -> str:
    return template.replace("{D}", d).replace("{C}", c).replace("{A}", a)


def implicit_instructions(d: str, c: str, a: str) -> list[tuple[int, str]]:
    """The five instruction slots for one chain: functions of the broad,
    middle, and gap concept, then subtypes of the two enclosing concepts."""
    return [
        (1, FUNCTION_TEMPLATE.replace("{concept}", a)),
        (2, FUNCTION_TEMPLATE.replace("{concept}", c)),
        (3, FUNCTION_TEMPLATE.replace("{concept}", d)),
        (4, SUBTYPE_TEMPLATE.replace("{concept}", a)),
        (5, SUBTYPE_TEMPLATE.replace("{concept}", c)),
    ]


def explicit_pair(d: str, c: str, a: str) -> tuple[str, str]:
    return _fill(EXPLICIT_INSTRUCTION, d, c, a), _fill(EXPLICIT_OUTPUT, d, c, a)


@dataclass(frozen=True)
class SynthesisConfig:
    strategy: str = "mix"
    max_tokens: int = 512
    temperature: float = 0.7
    strip_hint: bool = False
    empty_retries: int = 2

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")


@dataclass
class CorpusEntry:
    instruction: str
    output: str
    strategy: str  # "explicit" or "implicit"; "mix" only names the run mode
    gap_subject: str
    gap_object: str
    chain: list[tuple[str, str]]
    template_id: int
    hint_included: bool

    @property
    def sort_key(self) -> tuple:
        return (self.strategy, self.gap_subject.casefold(), self.gap_object.casefold(),
                self.template_id, tuple(self.chain))

    def to_json_obj(self) -> dict:
        return {
            "instruction": self.instruction,
            "output": self.output,
            "strategy": self.strategy,
            "gap": {"s": self.gap_subject, "o": self.gap_object},
            "chain": [[s, o] for s, o in self.chain],
            "template_id": self.template_id,
            "hint_included": self.hint_included,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "CorpusEntry":
        return cls(
            instruction=obj["instruction"],
            output=obj["output"],
            strategy=obj["strategy"],
            gap_subject=obj["gap"]["s"],
            gap_object=obj["gap"]["o"],
            chain=[(s, o) for s, o in obj["chain"]],
            template_id=obj["template_id"],
            hint_included=obj["hint_included"],
        )


@dataclass
class SynthesisTallies:
    distill_drops: int = 0
    malformed_chains: int = 0

    def to_json_obj(self) -> dict:
        return dict(vars(self))


def distill(gateway: ModelGateway, prompt: str, config: SynthesisConfig) -> str | None:
    """Sample a response for one instruction; empty responses are re-requested
    with the cache bypassed, and None is returned once retries run out so the
    caller can drop the entry rather than ship a blank output."""
    attempts = 1 + config.empty_retries
    request = GenerateRequest(
        prompt=prompt,
        max_tokens=config.max_tokens,
        temperature=config.temperature,
    )
    for attempt in range(attempts):
        text = gateway.generate(request, bypass_cache=attempt > 0)
        if text.strip():
            return text.strip()
        log.warning("empty distillation (attempt %d/%d) for prompt %r",
                    attempt + 1, attempts, prompt[:60])
    return None


def _unpack_chain(record: TripleRecord, chain: list[tuple[str, str]]) -> tuple[str, str, str] | None:
    """Unpack one chain as (D, C, A); None when the premises do not line up
    with the gap triple."""
    if len(chain) != 2:
        return None
    (d, c1), (c2, a) = chain
    if c1.casefold() != c2.casefold():
        return None
    if d.casefold() != record.triple.subject.key or a.casefold() != record.triple.object.key:
        return None
    return d, c1, a


def build_corpus(gateway: ModelGateway, gaps: Sequence[TripleRecord],
                 config: SynthesisConfig) -> tuple[list[CorpusEntry], SynthesisTallies]:
    """Every chain of every gap contributes its own examples: distinct
    derivations state the relationship through different intermediates."""
    tallies = SynthesisTallies()
    entries: list[CorpusEntry] = []
    for record in sorted(gaps, key=lambda r: r.triple.sort_key):
        gap_s, gap_o = record.triple.subject.text, record.triple.object.text
        for raw_chain in record.chains or []:
            unpacked = _unpack_chain(record, raw_chain)
            if unpacked is None:
                tallies.malformed_chains += 1
                log.warning("gap %r has an unusable chain; skipped", record.triple)
                continue
            d, c, a = unpacked
            chain = [(d, c), (c, a)]
            if config.strategy in ("explicit", "mix"):
                instruction, output = explicit_pair(d, c, a)
                entries.append(CorpusEntry(
                    instruction=instruction, output=output, strategy="explicit",
                    gap_subject=gap_s, gap_object=gap_o, chain=chain,
                    template_id=0, hint_included=False))
            if config.strategy in ("implicit", "mix"):
                hint = _fill(HINT_TEMPLATE, d, c, a)
                for template_id, instruction in implicit_instructions(d, c, a):
                    output = distill(gateway, instruction + hint, config)
                    if output is None:
                        tallies.distill_drops += 1
                        continue
                    entries.append(CorpusEntry(
                        instruction=instruction if config.strip_hint else instruction + hint,
                        output=output, strategy="implicit",
                        gap_subject=gap_s, gap_object=gap_o, chain=chain,
                        template_id=template_id, hint_included=not config.strip_hint))
        if not record.chains:
            tallies.malformed_chains += 1
            log.warning("gap %r has no chains; skipped", record.triple)
    entries.sort(key=lambda e: e.sort_key)
    return entries, tallies


def write_corpus(path: Path, entries: Iterable[CorpusEntry]) -> None:
    ordered = sorted(entries, key=lambda e: e.sort_key)
    lines = [json.dumps(e.to_json_obj(), sort_keys=True, ensure_ascii=False,
                        separators=(",", ":"))
             for e in ordered]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    tmp.replace(path)


def read_corpus(path: Path) -> list[CorpusEntry]:
    entries = []
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(CorpusEntry.from_json_obj(json.loads(line)))
    return entries
