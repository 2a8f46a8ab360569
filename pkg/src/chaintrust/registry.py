"""Central server's view of the fleet.

The registry stores devices, applies per-family attribute updates under a
logical clock, and serves stage-scoped snapshots. Every snapshot request is
metered in the collection log — one record per (device, family) fetched — so
the cost of a chain run can be compared against collecting everything at once.

Mutation is single-writer; snapshots are immutable values and safe to share.
"""

from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

from .model import (
    AttributeFamily,
    CommAttributes,
    ComputeAttributes,
    Device,
    DeviceId,
    FAMILY_FOR_STAGE,
    ResultDeliveryAttribute,
    StageId,
    validate_device,
)


class RegistryError(Exception):
    pass


class DuplicateDeviceError(RegistryError):
    pass


class UnknownDeviceError(RegistryError):
    pass


class DeviceValidationError(RegistryError):
    def __init__(self, device_id: DeviceId, violations: Sequence[str]):
        self.device_id = device_id
        self.violations = tuple(violations)
        super().__init__(f"device {device_id} invalid: {', '.join(violations)}")


class FamilyPayloadError(RegistryError):
    pass


class StaleAttributeError(RegistryError):
    pass


_PAYLOAD_TYPES = {
    AttributeFamily.COMMUNICATION: CommAttributes,
    AttributeFamily.COMPUTING: ComputeAttributes,
    AttributeFamily.RESULT_DELIVERY: ResultDeliveryAttribute,
}


def family_payload(device: Device, family: AttributeFamily):
    """The current value of one attribute family of a device."""
    if family is AttributeFamily.SERVICES:
        return device.services
    if family is AttributeFamily.COMMUNICATION:
        return device.comm
    if family is AttributeFamily.COMPUTING:
        return device.compute
    return device.delivery


@dataclass(frozen=True)
class SnapshotEntry:
    """One device's one family as of collection time."""

    values: object
    value_timestamp: int
    staleness: int


@dataclass(frozen=True)
class FamilySnapshot:
    """The latest data of a single attribute family for a set of devices."""

    family: AttributeFamily
    taken_at: int
    entries: Mapping[DeviceId, SnapshotEntry]

    @property
    def candidates(self) -> frozenset[DeviceId]:
        return frozenset(self.entries)

    def sorted_ids(self) -> list[DeviceId]:
        return sorted(self.entries)


@dataclass(frozen=True)
class CollectionRecord:
    """One metered snapshot request: which stage fetched which family for whom."""

    stage: StageId
    family: AttributeFamily
    device_ids: frozenset[DeviceId]
    taken_at: int

    @property
    def record_count(self) -> int:
        return len(self.device_ids)


class Registry:
    """Device store with logical-clock timestamps and metered collection.

    ``max_staleness``, when set, makes ``collect`` reject snapshots containing
    any entry older than that many ticks; by default staleness is reported in
    snapshot entries but never acted on.
    """

    def __init__(self, max_staleness: int | None = None):
        self._devices: dict[DeviceId, Device] = {}
        self._clock = 0
        self._collection_log: list[CollectionRecord] = []
        self.max_staleness = max_staleness

    @property
    def clock(self) -> int:
        return self._clock

    @property
    def collection_log(self) -> tuple[CollectionRecord, ...]:
        return tuple(self._collection_log)

    def collected_record_count(self) -> int:
        return sum(record.record_count for record in self._collection_log)

    def __len__(self) -> int:
        return len(self._devices)

    def __contains__(self, device_id: DeviceId) -> bool:
        return device_id in self._devices

    def ids(self) -> list[DeviceId]:
        return sorted(self._devices)

    def device(self, device_id: DeviceId) -> Device:
        try:
            return self._devices[device_id]
        except KeyError:
            raise UnknownDeviceError(f"unknown device {device_id}") from None

    def devices(self) -> list[Device]:
        return [self._devices[device_id] for device_id in self.ids()]

    def register(self, device: Device) -> None:
        """Store a new device and stamp all its families with the current clock."""
        if device.id in self._devices:
            raise DuplicateDeviceError(f"device {device.id} is already registered")
        violations = validate_device(device)
        if violations:
            raise DeviceValidationError(device.id, violations)
        self._clock += 1
        stamps = {family: self._clock for family in AttributeFamily}
        self._devices[device.id] = replace(device, family_timestamps=stamps)

    def update_family(self, device_id: DeviceId, family: AttributeFamily, values) -> None:
        """Replace one attribute family; other families keep their timestamps."""
        device = self.device(device_id)
        updated = self._with_family(device, family, values)
        violations = validate_device(updated)
        if violations:
            raise DeviceValidationError(device_id, violations)
        self._clock += 1
        stamps = dict(device.family_timestamps)
        stamps[family] = self._clock
        self._devices[device_id] = replace(updated, family_timestamps=stamps)

    @staticmethod
    def _with_family(device: Device, family: AttributeFamily, values) -> Device:
        if family is AttributeFamily.SERVICES:
            if isinstance(values, str) or not isinstance(values, Iterable):
                raise FamilyPayloadError("services payload must be an iterable of names")
            names = tuple(values)
            if not all(isinstance(name, str) for name in names):
                raise FamilyPayloadError("services payload must contain strings")
            return replace(device, services=names)
        expected = _PAYLOAD_TYPES[family]
        if not isinstance(values, expected):
            raise FamilyPayloadError(
                f"{family.value} payload must be {expected.__name__}, got {type(values).__name__}"
            )
        slot = {
            AttributeFamily.COMMUNICATION: "comm",
            AttributeFamily.COMPUTING: "compute",
            AttributeFamily.RESULT_DELIVERY: "delivery",
        }[family]
        return replace(device, **{slot: values})

    def collect(self, stage: StageId, ids: Iterable[DeviceId]) -> FamilySnapshot:
        """Fetch exactly one stage's attribute family for exactly ``ids``.

        Appends one collection-log entry (even for an empty id set) and never
        returns data from any other family.
        """
        family = FAMILY_FOR_STAGE.get(stage)
        if family is None:
            raise ValueError(f"stage {stage.value} has no attribute family to collect")
        wanted = frozenset(ids)
        self._clock += 1
        taken_at = self._clock
        entries = {}
        for device_id in sorted(wanted):
            device = self.device(device_id)
            value_timestamp = device.family_timestamps[family]
            entries[device_id] = SnapshotEntry(
                values=family_payload(device, family),
                value_timestamp=value_timestamp,
                staleness=taken_at - value_timestamp,
            )
        if self.max_staleness is not None:
            stale = [str(i) for i, e in sorted(entries.items()) if e.staleness > self.max_staleness]
            if stale:
                raise StaleAttributeError(
                    f"{family.value} data older than {self.max_staleness} ticks for: "
                    + ", ".join(stale)
                )
        self._collection_log.append(
            CollectionRecord(stage=stage, family=family, device_ids=wanted, taken_at=taken_at)
        )
        return FamilySnapshot(family=family, taken_at=taken_at, entries=entries)
