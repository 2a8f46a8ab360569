"""Domain types shared across the package.

A fleet is a set of collaborator devices, each carrying four independently
updated attribute families: the services it offers, its communication link
(rate and security), its computing resources (CPU clock, GPU, security), and
its record of honestly delivering results. A task names a required service
plus quality flags; trust evaluation filters the fleet against the task one
attribute family at a time.

Everything here is an immutable value type: safe to share between threads and
to embed in snapshots and traces.
"""

import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Mapping, NamedTuple


class _OrdinalLevel(IntEnum):
    """Three-step ordinal scale with case-insensitive parsing."""

    def __str__(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "_OrdinalLevel":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            names = ", ".join(str(level) for level in cls)
            raise ValueError(f"{cls.__name__} must be one of {names}, got {text!r}") from None


class SecurityLevel(_OrdinalLevel):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


class Loyalty(_OrdinalLevel):
    """How reliably a device has returned effective task results."""

    LOW = 0
    MEDIUM = 1
    HIGH = 2


_DEVICE_ID_RE = re.compile(r"a([1-9]\d*)")


@dataclass(frozen=True, order=True)
class DeviceId:
    """Fleet-wide device identifier, rendered as "a<index>" (e.g. "a8")."""

    index: int

    def __post_init__(self) -> None:
        if not isinstance(self.index, int) or isinstance(self.index, bool) or self.index < 1:
            raise ValueError(f"device index must be a positive integer, got {self.index!r}")

    def __str__(self) -> str:
        return f"a{self.index}"

    @classmethod
    def parse(cls, text: str) -> "DeviceId":
        match = _DEVICE_ID_RE.fullmatch(text.strip())
        if match is None:
            raise ValueError(f"device id must look like 'a8', got {text!r}")
        return cls(int(match.group(1)))


class AttributeFamily(str, Enum):
    """One independently collected and updated group of device attributes."""

    SERVICES = "services"
    COMMUNICATION = "communication"
    COMPUTING = "computing"
    RESULT_DELIVERY = "result_delivery"


class StageId(str, Enum):
    """One link of the evaluation chain, in canonical order."""

    DECOMPOSITION = "decomposition"
    SERVICE_AVAILABILITY = "service_availability"
    COMMUNICATION = "communication"
    COMPUTING = "computing"
    RESULT_DELIVERY = "result_delivery"


#: Canonical full chain; custom chains may reorder or drop evaluation stages.
DEFAULT_CHAIN: tuple[StageId, ...] = (
    StageId.DECOMPOSITION,
    StageId.SERVICE_AVAILABILITY,
    StageId.COMMUNICATION,
    StageId.COMPUTING,
    StageId.RESULT_DELIVERY,
)

#: Each evaluation stage inspects exactly one attribute family;
#: decomposition inspects none.
FAMILY_FOR_STAGE: Mapping[StageId, AttributeFamily] = {
    StageId.SERVICE_AVAILABILITY: AttributeFamily.SERVICES,
    StageId.COMMUNICATION: AttributeFamily.COMMUNICATION,
    StageId.COMPUTING: AttributeFamily.COMPUTING,
    StageId.RESULT_DELIVERY: AttributeFamily.RESULT_DELIVERY,
}

EVALUATION_STAGES: tuple[StageId, ...] = tuple(FAMILY_FOR_STAGE)


class DeviceClass(str, Enum):
    PHONE = "phone"
    SERVER = "server"
    ROSBOT_PLUS = "rosbot_plus"
    ROBOFLEET = "robofleet"
    GPU_WORKSTATION = "gpu_workstation"


@dataclass(frozen=True)
class CommAttributes:
    """Link from the task owner to this device: average rate and security."""

    rate_mb_per_s: float
    security: SecurityLevel


@dataclass(frozen=True)
class ComputeAttributes:
    """Available computing power and the security of the execution environment."""

    cpu_clock_ghz: float
    has_gpu: bool
    security: SecurityLevel


@dataclass(frozen=True)
class ResultDeliveryAttribute:
    loyalty: Loyalty


@dataclass(frozen=True)
class Device:
    """One collaborator: identity plus its four attribute families.

    ``family_timestamps`` records the logical time each family was last
    written; it is empty until the device is registered, after which the
    registry keeps it complete and monotone.
    """

    id: DeviceId
    device_class: DeviceClass
    services: tuple[str, ...]
    comm: CommAttributes
    compute: ComputeAttributes
    delivery: ResultDeliveryAttribute
    family_timestamps: Mapping[AttributeFamily, int] = field(default_factory=dict)


def normalize_service(name: str) -> str:
    """Trim, collapse internal whitespace, and lowercase a service name."""
    return " ".join(name.split()).lower()


def service_offered(services: Iterable[str], service: str) -> bool:
    wanted = normalize_service(service)
    return any(normalize_service(entry) == wanted for entry in services)


def device_supports(device: Device, service: str) -> bool:
    """True iff the device offers ``service`` under normalized comparison."""
    return service_offered(device.services, service)


def validate_device(device: Device) -> list[str]:
    """Check device invariants; returns a (possibly empty) list of violations.

    Violations are data, not faults: callers decide whether to reject.
    """
    violations = []
    if not device.services:
        violations.append("services empty")
    elif any(not normalize_service(name) for name in device.services):
        violations.append("blank service name")
    if device.comm.rate_mb_per_s < 0:
        violations.append("negative rate")
    if device.compute.cpu_clock_ghz < 0:
        violations.append("negative cpu clock")
    return violations


@dataclass(frozen=True)
class Task:
    """A task owner's request: required service plus structured quality flags.

    The flags are the structured mirror of ``text``; generated tasks keep the
    two consistent by construction.
    """

    owner: DeviceId
    text: str
    required_service: str
    wants_fast_comm: bool = True
    wants_secure_comm: bool = True
    wants_fast_compute: bool = True
    wants_secure_compute: bool = True
    wants_honest_delivery: bool = True

    def __post_init__(self) -> None:
        if not normalize_service(self.required_service):
            raise ValueError("required_service must be non-empty")


class Subproblem(NamedTuple):
    """One decomposed question, bound to the evaluation stage that answers it."""

    stage: StageId
    question: str
