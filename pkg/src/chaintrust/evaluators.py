"""Evaluator backends: deterministic rules and few-shot prompted models.

Both backends satisfy the same contract: decompose a task into stage-bound
subproblems, then judge one stage at a time over a snapshot of that stage's
attribute family. The rule evaluator applies configurable thresholds; the
prompt evaluator renders a few-shot question/answer block plus a data block in
brace notation, sends it through a completion transport, and extracts the
surviving device ids from the prose answer.

Prompts accumulate: a later stage's data block repeats every attribute family
revealed by earlier stages, then adds its own.
"""

import re
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence, runtime_checkable

from .gateway import Transport
from .model import (
    AttributeFamily,
    CommAttributes,
    ComputeAttributes,
    DeviceId,
    Loyalty,
    ResultDeliveryAttribute,
    SecurityLevel,
    StageId,
    Subproblem,
    Task,
    service_offered,
)
from .registry import FamilySnapshot

#: Attribute view revealed so far: device -> family -> payload.
RevealedView = Mapping[DeviceId, Mapping[AttributeFamily, object]]


class EvaluatorError(Exception):
    pass


class UnparseableResponseError(EvaluatorError):
    pass


class MissingExemplarsError(EvaluatorError):
    pass


# ---------------------------------------------------------------------------
# Stage questions


def enabled_evaluation_stages(task: Task) -> tuple[StageId, ...]:
    """Evaluation stages a task activates, in canonical order.

    Service, communication, and computing checks always run (their predicates
    go vacuous when the matching flags are off); the result-delivery stage is
    included only when the task asks for honest delivery.
    """
    stages = [StageId.SERVICE_AVAILABILITY, StageId.COMMUNICATION, StageId.COMPUTING]
    if task.wants_honest_delivery:
        stages.append(StageId.RESULT_DELIVERY)
    return tuple(stages)


def _quality_phrase(secure: bool, fast: bool) -> str:
    if secure and fast:
        return "is secure and fast"
    if secure:
        return "is secure"
    if fast:
        return "is fast"
    return "is completed"


def stage_question(stage: StageId, task: Task) -> str:
    """Canonical wording of one stage's subproblem for a task."""
    if stage is StageId.SERVICE_AVAILABILITY:
        return f"which devices support the {task.required_service} service?"
    if stage is StageId.COMMUNICATION:
        phrase = _quality_phrase(task.wants_secure_comm, task.wants_fast_comm)
        return f"which devices can ensure the task transmission process {phrase}?"
    if stage is StageId.COMPUTING:
        phrase = _quality_phrase(task.wants_secure_compute, task.wants_fast_compute)
        return f"which devices can ensure the task execution process {phrase}?"
    if stage is StageId.RESULT_DELIVERY:
        return "which devices can ensure the honest return of results?"
    raise ValueError(f"stage {stage.value} has no subproblem question")


# ---------------------------------------------------------------------------
# Rule policy and stage predicates


@dataclass(frozen=True)
class RulePolicy:
    """Thresholds that codify manual reasoning about 'fast' and 'secure'.

    Defaults are the loosest round values consistent with the reference fleet:
    10 MB/s separates fast links from slow ones, 2.0 GHz (or a GPU) separates
    fast compute, and 'high' is required wherever security or honesty matters.
    """

    fast_comm_min_rate_mb_s: float = 10.0
    secure_comm_min: SecurityLevel = SecurityLevel.HIGH
    fast_compute_min_ghz: float = 2.0
    gpu_counts_as_fast: bool = True
    secure_compute_min: SecurityLevel = SecurityLevel.HIGH
    honest_delivery_min: Loyalty = Loyalty.HIGH


def passes_communication(policy: RulePolicy, task: Task, comm: CommAttributes) -> bool:
    if task.wants_fast_comm and comm.rate_mb_per_s < policy.fast_comm_min_rate_mb_s:
        return False
    if task.wants_secure_comm and comm.security < policy.secure_comm_min:
        return False
    return True


def passes_computing(policy: RulePolicy, task: Task, compute: ComputeAttributes) -> bool:
    if task.wants_fast_compute:
        fast = compute.cpu_clock_ghz >= policy.fast_compute_min_ghz or (
            policy.gpu_counts_as_fast and compute.has_gpu
        )
        if not fast:
            return False
    if task.wants_secure_compute and compute.security < policy.secure_compute_min:
        return False
    return True


def passes_delivery(policy: RulePolicy, delivery: ResultDeliveryAttribute) -> bool:
    return delivery.loyalty >= policy.honest_delivery_min


def rule_judge(
    policy: RulePolicy, stage: StageId, task: Task, snapshot: FamilySnapshot
) -> frozenset[DeviceId]:
    """Apply one stage's threshold predicate to a family snapshot."""
    expected = {
        StageId.SERVICE_AVAILABILITY: AttributeFamily.SERVICES,
        StageId.COMMUNICATION: AttributeFamily.COMMUNICATION,
        StageId.COMPUTING: AttributeFamily.COMPUTING,
        StageId.RESULT_DELIVERY: AttributeFamily.RESULT_DELIVERY,
    }.get(stage)
    if expected is None or snapshot.family is not expected:
        raise ValueError(
            f"stage {stage.value} cannot judge a {snapshot.family.value} snapshot"
        )
    survivors = set()
    for device_id, entry in snapshot.entries.items():
        values = entry.values
        if stage is StageId.SERVICE_AVAILABILITY:
            keep = service_offered(values, task.required_service)
        elif stage is StageId.COMMUNICATION:
            keep = passes_communication(policy, task, values)
        elif stage is StageId.COMPUTING:
            keep = passes_computing(policy, task, values)
        else:
            keep = passes_delivery(policy, values)
        if keep:
            survivors.add(device_id)
    return frozenset(survivors)


def describe_predicate(policy: RulePolicy, stage: StageId, task: Task) -> str:
    """Human-readable statement of the rule applied at a stage (for traces)."""
    if stage is StageId.SERVICE_AVAILABILITY:
        return f"keep devices offering the '{task.required_service}' service"
    if stage is StageId.COMMUNICATION:
        clauses = []
        if task.wants_fast_comm:
            clauses.append(f"communication rate >= {_format_number(policy.fast_comm_min_rate_mb_s)} MB/s")
        if task.wants_secure_comm:
            clauses.append(f"communication security >= {policy.secure_comm_min}")
        return "keep devices with " + " and ".join(clauses) if clauses else "keep all devices (no communication requirements)"
    if stage is StageId.COMPUTING:
        clauses = []
        if task.wants_fast_compute:
            gpu = " (or a GPU)" if policy.gpu_counts_as_fast else ""
            clauses.append(f"CPU clock >= {_format_number(policy.fast_compute_min_ghz)} GHz{gpu}")
        if task.wants_secure_compute:
            clauses.append(f"computing security >= {policy.secure_compute_min}")
        return "keep devices with " + " and ".join(clauses) if clauses else "keep all devices (no computing requirements)"
    if stage is StageId.RESULT_DELIVERY:
        return f"keep devices with result delivery >= {policy.honest_delivery_min}"
    raise ValueError(f"stage {stage.value} has no predicate")


# ---------------------------------------------------------------------------
# Prompt rendering


class Exemplar(tuple):
    """A (question, answer) teaching pair."""

    __slots__ = ()

    def __new__(cls, question: str, answer: str):
        return super().__new__(cls, (question, answer))

    @property
    def question(self) -> str:
        return self[0]

    @property
    def answer(self) -> str:
        return self[1]


@dataclass(frozen=True)
class ExemplarSet:
    """Per-stage ordered lists of teaching pairs (four per stage by default)."""

    by_stage: Mapping[StageId, tuple[Exemplar, ...]]

    def __post_init__(self) -> None:
        for stage, exemplars in self.by_stage.items():
            if not exemplars:
                raise MissingExemplarsError(f"stage {stage.value} has no exemplars")

    def for_stage(self, stage: StageId) -> tuple[Exemplar, ...]:
        try:
            return self.by_stage[stage]
        except KeyError:
            raise MissingExemplarsError(f"no exemplars for stage {stage.value}") from None


@dataclass(frozen=True)
class PromptBundle:
    """A fully rendered prompt plus its parts, for traces and golden tests."""

    stage: StageId
    exemplar_block: str
    data_block: str
    question: str
    text: str


#: Render order of families within a device line; matches reveal order of the
#: canonical chain and stays fixed for reordered chains.
_FAMILY_RENDER_ORDER = (
    AttributeFamily.SERVICES,
    AttributeFamily.COMMUNICATION,
    AttributeFamily.COMPUTING,
    AttributeFamily.RESULT_DELIVERY,
)


def _format_number(value: float) -> str:
    if value == int(value):
        return str(int(value))
    return str(value)


def _format_clock(ghz: float) -> str:
    if ghz < 1.0:
        return f"{_format_number(round(ghz * 1000, 6))} MHz"
    return f"{_format_number(ghz)} GHz"


def render_family_block(family: AttributeFamily, values) -> str:
    if family is AttributeFamily.SERVICES:
        return "{service : " + ", ".join(values) + "}"
    if family is AttributeFamily.COMMUNICATION:
        return (
            "{communication attributes: {communication rate: "
            + _format_number(values.rate_mb_per_s)
            + "MB/s; communication security: "
            + str(values.security)
            + "}}"
        )
    if family is AttributeFamily.COMPUTING:
        power = "CPU " + _format_clock(values.cpu_clock_ghz)
        if values.has_gpu:
            power += " + GPU"
        return (
            "{computing attributes: {computing power: "
            + power
            + "; computing security: "
            + str(values.security)
            + "}}"
        )
    return "{result delivery: " + str(values.loyalty) + "}"


def render_device_line(device_id: DeviceId, revealed: Mapping[AttributeFamily, object]) -> str:
    blocks = [
        render_family_block(family, revealed[family])
        for family in _FAMILY_RENDER_ORDER
        if family in revealed
    ]
    return f"{device_id} = {{{'; '.join(blocks)}}}"


def _merged_view(
    snapshot: FamilySnapshot, accumulated: RevealedView | None
) -> dict[DeviceId, dict[AttributeFamily, object]]:
    merged: dict[DeviceId, dict[AttributeFamily, object]] = {}
    for device_id, entry in snapshot.entries.items():
        revealed: dict[AttributeFamily, object] = {}
        if accumulated and device_id in accumulated:
            revealed.update(accumulated[device_id])
        revealed[snapshot.family] = entry.values
        merged[device_id] = revealed
    return merged


def _render_exemplar_block(exemplars: Sequence[Exemplar]) -> str:
    return "\n\n".join(f"Q: {ex.question}\nA: {ex.answer}" for ex in exemplars)


def _assemble(exemplar_block: str, body: str) -> str:
    return f"{exemplar_block}\n\nQ: {body}\nA:"


def build_prompt(
    stage: StageId,
    exemplars: ExemplarSet,
    snapshot: FamilySnapshot,
    accumulated: RevealedView | None,
    question: str,
) -> PromptBundle:
    """Render one evaluation stage's prompt.

    The data block lists every candidate once, sorted by device index, showing
    all families revealed so far plus this stage's; the subproblem question
    closes the prompt. Rendering is deterministic: identical inputs produce
    byte-identical text.
    """
    if not snapshot.entries:
        raise ValueError("cannot build a prompt over an empty candidate set")
    merged = _merged_view(snapshot, accumulated)
    lines = [render_device_line(device_id, merged[device_id]) for device_id in sorted(merged)]
    devices_text = ", ".join(lines)
    if stage is StageId.SERVICE_AVAILABILITY:
        sentence_question = question[0].upper() + question[1:]
        data_block = f"The collected devices and their supported services are described as: {devices_text}."
        body = f"{data_block} {sentence_question}"
    else:
        data_block = f"Devices {devices_text}"
        body = f"{data_block}, {question}"
    exemplar_block = _render_exemplar_block(exemplars.for_stage(stage))
    return PromptBundle(
        stage=stage,
        exemplar_block=exemplar_block,
        data_block=data_block,
        question=question,
        text=_assemble(exemplar_block, body),
    )


def build_decomposition_prompt(task: Task, exemplars: ExemplarSet) -> PromptBundle:
    exemplar_block = _render_exemplar_block(exemplars.for_stage(StageId.DECOMPOSITION))
    return PromptBundle(
        stage=StageId.DECOMPOSITION,
        exemplar_block=exemplar_block,
        data_block="",
        question=task.text,
        text=_assemble(exemplar_block, task.text),
    )


def build_single_pass_prompt(
    task: Task,
    view: RevealedView,
    exemplars: Sequence[Exemplar] = (),
    instruction: str | None = None,
) -> str:
    """One-shot baseline prompt: every device with every attribute, then the task."""
    lines = [render_device_line(device_id, view[device_id]) for device_id in sorted(view)]
    body = (
        "The collected devices and their attributes are described as: "
        + ", ".join(lines)
        + f". {task.text}"
    )
    if instruction:
        body += f" {instruction}"
    exemplar_block = _render_exemplar_block(exemplars)
    if exemplar_block:
        return _assemble(exemplar_block, body)
    return f"Q: {body}\nA:"


# ---------------------------------------------------------------------------
# Response parsing

_ID_TOKEN_RE = re.compile(r"\b[aA]_?\{?(\d+)\}?")
_NONE_RE = re.compile(r"\b(none|no devices?)\b", re.IGNORECASE)


def extract_device_ids(text: str) -> list[DeviceId]:
    """All device-id tokens in order of first appearance, deduplicated.

    Tolerates subscript markup and punctuation: a8, a_8, $a_{8}$ all match.
    """
    seen: dict[DeviceId, None] = {}
    for match in _ID_TOKEN_RE.finditer(text):
        index = int(match.group(1))
        if index >= 1:
            seen.setdefault(DeviceId(index))
    return list(seen)


@dataclass(frozen=True)
class ParsedSelection:
    survivors: frozenset[DeviceId]
    dropped: frozenset[DeviceId]


def parse_device_list(response: str, candidates: frozenset[DeviceId]) -> ParsedSelection:
    """Extract the surviving candidate set from a prose answer.

    Ids outside the candidate set are dropped (and reported); an answer with
    no id tokens counts as the empty set only when it contains an explicit
    "none"/"no devices" statement, otherwise it is unparseable.
    """
    mentioned = extract_device_ids(response)
    if not mentioned:
        if _NONE_RE.search(response):
            return ParsedSelection(frozenset(), frozenset())
        snippet = response.strip().replace("\n", " ")[:120]
        raise UnparseableResponseError(f"no device ids and no 'none' statement in: {snippet!r}")
    survivors = frozenset(device_id for device_id in mentioned if device_id in candidates)
    dropped = frozenset(device_id for device_id in mentioned if device_id not in candidates)
    return ParsedSelection(survivors=survivors, dropped=dropped)


_SUBPROBLEM_RE = re.compile(r"subproblem\s*(\d+)\s*:\s*(.+?)(?=subproblem\s*\d+\s*:|$)", re.IGNORECASE | re.DOTALL)


def parse_decomposition(response: str) -> list[str]:
    """Pull the ordered subproblem questions out of a decomposition answer."""
    found = [(int(num), text.strip()) for num, text in _SUBPROBLEM_RE.findall(response)]
    if not found:
        snippet = response.strip().replace("\n", " ")[:120]
        raise UnparseableResponseError(f"no 'subproblem N:' markers in: {snippet!r}")
    found.sort(key=lambda item: item[0])
    return [" ".join(text.split()) for _, text in found]


# ---------------------------------------------------------------------------
# Evaluator contract and implementations


@dataclass(frozen=True)
class StageJudgement:
    """One evaluator verdict: survivors plus the exchange that produced them."""

    survivors: frozenset[DeviceId]
    prompt: str
    raw_response: str
    dropped: frozenset[DeviceId] = frozenset()


@dataclass(frozen=True)
class DecompositionResult:
    subproblems: tuple[Subproblem, ...]
    prompt: str
    raw_response: str


@runtime_checkable
class Evaluator(Protocol):
    """Behavioral contract shared by rule and prompt backends."""

    name: str

    def decompose(self, task: Task) -> DecompositionResult: ...

    def judge(
        self,
        stage: StageId,
        question: str,
        task: Task,
        snapshot: FamilySnapshot,
        accumulated: RevealedView | None,
    ) -> StageJudgement: ...

    def judge_single(
        self, task: Task, view: RevealedView, *, chain_of_thought: bool
    ) -> StageJudgement: ...


def _survivor_sentence(survivors: frozenset[DeviceId]) -> str:
    if not survivors:
        return "No devices satisfy the requirement."
    listed = ", ".join(str(device_id) for device_id in sorted(survivors))
    return f"Devices {listed} satisfy the requirement."


class RuleEvaluator:
    """Deterministic evaluator: pure threshold predicates, no model calls."""

    def __init__(self, policy: RulePolicy | None = None):
        self.policy = policy or RulePolicy()
        self.name = "rule"

    def decompose(self, task: Task) -> DecompositionResult:
        subproblems = tuple(
            Subproblem(stage, stage_question(stage, task))
            for stage in enabled_evaluation_stages(task)
        )
        rendered = " ".join(
            f"subproblem {i}: {sub.question}" for i, sub in enumerate(subproblems, start=1)
        )
        return DecompositionResult(
            subproblems=subproblems,
            prompt=f"derive stage questions from task flags for: {task.text}",
            raw_response=(
                "The following subproblems need to be addressed sequentially: " + rendered
            ),
        )

    def judge(self, stage, question, task, snapshot, accumulated=None) -> StageJudgement:
        survivors = rule_judge(self.policy, stage, task, snapshot)
        return StageJudgement(
            survivors=survivors,
            prompt=describe_predicate(self.policy, stage, task),
            raw_response=_survivor_sentence(survivors),
        )

    def judge_single(self, task, view, *, chain_of_thought=False) -> StageJudgement:
        """Conjunction of every enabled stage predicate over a full-attribute view."""
        survivors = set()
        for device_id, revealed in view.items():
            if not service_offered(revealed[AttributeFamily.SERVICES], task.required_service):
                continue
            if not passes_communication(self.policy, task, revealed[AttributeFamily.COMMUNICATION]):
                continue
            if not passes_computing(self.policy, task, revealed[AttributeFamily.COMPUTING]):
                continue
            if task.wants_honest_delivery and not passes_delivery(
                self.policy, revealed[AttributeFamily.RESULT_DELIVERY]
            ):
                continue
            survivors.add(device_id)
        survivors = frozenset(survivors)
        return StageJudgement(
            survivors=survivors,
            prompt="apply all enabled stage predicates in a single pass",
            raw_response=_survivor_sentence(survivors),
        )


@dataclass(frozen=True)
class BaselinePrompts:
    """Editable wording for the single-prompt baseline modes."""

    cot_instruction: str = "Let's think step by step."
    cot_exemplars: tuple[Exemplar, ...] = ()


class LLMEvaluator:
    """Few-shot prompted evaluator over any completion transport."""

    def __init__(
        self,
        transport: Transport,
        exemplars: ExemplarSet,
        baselines: BaselinePrompts | None = None,
        name: str = "llm",
    ):
        self.transport = transport
        self.exemplars = exemplars
        self.baselines = baselines or BaselinePrompts()
        self.name = name

    def decompose(self, task: Task) -> DecompositionResult:
        bundle = build_decomposition_prompt(task, self.exemplars)
        raw = self.transport.complete(bundle.text)
        questions = parse_decomposition(raw)
        stages = enabled_evaluation_stages(task)
        if len(questions) != len(stages):
            raise UnparseableResponseError(
                f"expected {len(stages)} subproblems for this task, parsed {len(questions)}"
            )
        subproblems = tuple(
            Subproblem(stage, question) for stage, question in zip(stages, questions)
        )
        return DecompositionResult(subproblems=subproblems, prompt=bundle.text, raw_response=raw)

    def judge(self, stage, question, task, snapshot, accumulated=None) -> StageJudgement:
        bundle = build_prompt(stage, self.exemplars, snapshot, accumulated, question)
        raw = self.transport.complete(bundle.text)
        parsed = parse_device_list(raw, snapshot.candidates)
        return StageJudgement(
            survivors=parsed.survivors,
            prompt=bundle.text,
            raw_response=raw,
            dropped=parsed.dropped,
        )

    def judge_single(self, task, view, *, chain_of_thought=False) -> StageJudgement:
        if chain_of_thought:
            prompt = build_single_pass_prompt(
                task,
                view,
                exemplars=self.baselines.cot_exemplars,
                instruction=self.baselines.cot_instruction,
            )
        else:
            prompt = build_single_pass_prompt(task, view)
        raw = self.transport.complete(prompt)
        parsed = parse_device_list(raw, frozenset(view))
        return StageJudgement(
            survivors=parsed.survivors,
            prompt=prompt,
            raw_response=raw,
            dropped=parsed.dropped,
        )
