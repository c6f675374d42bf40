"""Simulation world: regions, edge servers, workload, and policy settings.

Scenarios are loaded from versioned JSON (``schema_version: 1``). Loading is
strict: unknown keys, wrong types and violated invariants are all reported as
:class:`Violation` records carrying a machine-readable code and the JSON path
of the offending value.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .deta import Policy
from .harvest import HarvestParams, HarvestProcess

SCHEMA_VERSION = 1
PLACEMENT_STREAM = 0x9A1  # keeps placement draws apart from harvest streams


class ModelKind(str, enum.Enum):
    MLP = "MLP"
    CNN = "CNN"
    LSTM = "LSTM"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Region:
    id: str
    intensity_series: tuple[tuple[int, float], ...]
    label: str = ""

    def intensity_at(self, slot: int) -> float:
        """Step-wise hold: value of the latest entry at or before ``slot``."""
        value = self.intensity_series[0][1]
        for s, v in self.intensity_series:
            if s > slot:
                break
            value = v
        return value

    @property
    def mean_intensity(self) -> float:
        return float(np.mean([v for _, v in self.intensity_series]))


@dataclass(frozen=True)
class EdgeServer:
    id: str
    region_id: str | None  # None: drawn uniformly at random from the seed
    static_power: float  # W
    compute_energy_per_unit: float  # kWh per work-unit (one sample-epoch)
    comm_energy_per_byte: float = 0.0  # kWh per byte exchanged with the coordinator
    battery_capacity: float = 0.0  # kWh
    battery_level: float = 0.0  # kWh
    harvester: HarvestParams = field(default_factory=HarvestParams.off)
    charge_efficiency: float = 1.0


@dataclass(frozen=True)
class WorkloadSpec:
    model_kind: ModelKind
    local_epochs: int
    batch_size: int
    total_samples: int
    model_bytes: int
    target_accuracy: float
    accuracy_curve: tuple[tuple[int, float], ...]
    sample_bytes: float = 0.0
    upload_energy_per_sample: float = 0.0  # kWh, user device + RAN
    receive_energy_per_sample: float = 0.0  # kWh, server side during preparation
    inferences: int = 0
    energy_per_inference: float = 0.0  # kWh
    serving_slots: int = 1

    def work_units(self, samples: int) -> float:
        """Work-units per round for a server holding ``samples`` samples."""
        return float(samples * self.local_epochs)

    @property
    def bytes_per_work_unit(self) -> float:
        # a sample is shipped once and then trained for E local epochs
        return self.sample_bytes / self.local_epochs

    def accuracy_at(self, round_index: int) -> float:
        rounds = [r for r, _ in self.accuracy_curve]
        accs = [a for _, a in self.accuracy_curve]
        return float(np.interp(round_index, rounds, accs))

    def rounds_to_target(self, max_rounds: int, target: float | None = None) -> tuple[int, bool]:
        target = self.target_accuracy if target is None else target
        for r in range(1, max_rounds + 1):
            if self.accuracy_at(r) >= target:
                return r, True
        return max_rounds, False


@dataclass(frozen=True)
class Coordinator:
    region_id: str | None = None  # None: charged at the backbone intensity
    energy_per_round: float = 0.0  # kWh for aggregating one round


@dataclass(frozen=True)
class Scenario:
    regions: tuple[Region, ...]
    servers: tuple[EdgeServer, ...]
    workload: WorkloadSpec
    policy: Policy = Policy.BASELINE
    alpha_energy: float = 0.5
    alpha_task: float = 0.5
    trading_loss: float = 0.05
    backbone_energy_per_byte: float = 0.0  # kWh/byte
    backbone_intensity: float | None = None  # None: mean of the region intensities
    slot_duration: float = 60.0  # s
    seed: int = 0
    max_rounds: int = 100
    deep_sleep: bool = False
    coordinator: Coordinator = field(default_factory=Coordinator)
    name: str = ""
    description: str = ""

    def region(self, region_id: str) -> Region:
        for r in self.regions:
            if r.id == region_id:
                return r
        raise KeyError(f"unknown region {region_id!r}")

    @property
    def effective_backbone_intensity(self) -> float:
        if self.backbone_intensity is not None:
            return self.backbone_intensity
        return float(np.mean([r.mean_intensity for r in self.regions]))

    def placement(self) -> tuple[str, ...]:
        """Region of every server; unassigned servers are drawn from the seed."""
        out = []
        for k, s in enumerate(self.servers):
            if s.region_id is not None:
                out.append(s.region_id)
            else:
                rng = np.random.default_rng([self.seed, PLACEMENT_STREAM, k])
                out.append(self.regions[int(rng.integers(len(self.regions)))].id)
        return tuple(out)

    def with_server_count(self, n: int) -> "Scenario":
        """First ``n`` servers; beyond the list, the last server is cloned with a random region."""
        if n < 1:
            raise ValueError("server count must be >= 1")
        servers = list(self.servers[:n])
        template = self.servers[-1]
        taken = {s.id for s in servers}
        k = len(servers)
        while len(servers) < n:
            sid = f"s{k}"
            while sid in taken:
                sid += "_"
            servers.append(replace(template, id=sid, region_id=None))
            taken.add(sid)
            k += 1
        return replace(self, servers=tuple(servers))

    def replace(self, **changes) -> "Scenario":
        return replace(self, **changes)


@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.code} at {self.path}: {self.message}"


class ScenarioError(Exception):
    pass


class ScenarioParseError(ScenarioError):
    pass


class ScenarioValidationError(ScenarioError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        first = violations[0]
        more = f" (+{len(violations) - 1} more)" if len(violations) > 1 else ""
        super().__init__(f"{first}{more}")


# ---------------------------------------------------------------------------
# validation


def validate_scenario(s: Scenario) -> list[Violation]:
    """Every broken invariant of ``s``, in document order. Empty means valid."""
    out: list[Violation] = []

    def bad(code: str, path: str, msg: str):
        out.append(Violation(code, path, msg))

    if not s.regions:
        bad("NoRegions", "regions", "at least one region is required")
    seen: set[str] = set()
    for i, r in enumerate(s.regions):
        p = f"regions[{i}]"
        if r.id in seen:
            bad("DuplicateId", f"{p}.id", f"region id {r.id!r} declared twice")
        seen.add(r.id)
        if not r.intensity_series:
            bad("EmptySeries", f"{p}.intensity_series", "intensity series is empty")
        prev = None
        for j, (slot, value) in enumerate(r.intensity_series):
            if value < 0:
                bad("NegativeIntensity", f"{p}.intensity_series[{j}]", f"intensity {value} < 0")
            if prev is not None and slot <= prev:
                bad("NonIncreasingSlots", f"{p}.intensity_series[{j}]", f"slot {slot} does not follow {prev}")
            prev = slot
    region_ids = {r.id for r in s.regions}

    if not s.servers:
        bad("NoServers", "servers", "at least one server is required")
    seen = set()
    for i, sv in enumerate(s.servers):
        p = f"servers[{i}]"
        if sv.id in seen:
            bad("DuplicateId", f"{p}.id", f"server id {sv.id!r} declared twice")
        seen.add(sv.id)
        if sv.region_id is not None and sv.region_id not in region_ids:
            bad("UnknownRegion", f"{p}.region_id", f"region {sv.region_id!r} is not declared")
        for name, key in (
            ("static_power", "static_power_w"),
            ("compute_energy_per_unit", "compute_energy_per_unit_kwh"),
            ("comm_energy_per_byte", "comm_energy_per_byte_kwh"),
            ("battery_capacity", "battery_capacity_kwh"),
            ("battery_level", "battery_level_kwh"),
        ):
            if getattr(sv, name) < 0:
                bad("NegativeValue", f"{p}.{key}", f"{key} must be >= 0")
        if sv.battery_level > sv.battery_capacity:
            bad("BatteryOverfull", f"{p}.battery_level_kwh",
                f"level {sv.battery_level} exceeds capacity {sv.battery_capacity}")
        if not 0 <= sv.charge_efficiency <= 1:
            bad("EfficiencyOutOfRange", f"{p}.charge_efficiency", "must lie in [0, 1]")
        h = sv.harvester
        if h.mean < 0:
            bad("NegativeValue", f"{p}.harvester.mean_kwh", "harvest mean must be >= 0")
        if h.stddev < 0:
            bad("NegativeValue", f"{p}.harvester.stddev_kwh", "harvest stddev must be >= 0")
        if h.process is HarvestProcess.TRACE and not h.trace_path:
            bad("MissingTracePath", f"{p}.harvester.trace_path", "trace process needs a trace_path")

    w = s.workload
    if w.local_epochs <= 0:
        bad("BadEpochs", "workload.local_epochs", "E must be > 0")
    if w.batch_size <= 0:
        bad("BadBatch", "workload.batch_size", "B must be > 0")
    if w.total_samples <= 0:
        bad("BadSamples", "workload.total_samples", "total_samples must be > 0")
    if w.model_bytes < 0:
        bad("NegativeValue", "workload.model_bytes", "model_bytes must be >= 0")
    if not 0 < w.target_accuracy <= 1:
        bad("TargetOutOfRange", "workload.target_accuracy", "target accuracy must lie in (0, 1]")
    if not w.accuracy_curve:
        bad("EmptyCurve", "workload.accuracy_curve", "accuracy curve is empty")
    prev_r, prev_a = None, None
    for j, (r, a) in enumerate(w.accuracy_curve):
        p = f"workload.accuracy_curve[{j}]"
        if not 0 <= a <= 1:
            bad("CurveOutOfRange", p, f"accuracy {a} outside [0, 1]")
        if prev_r is not None and r <= prev_r:
            bad("NonIncreasingRounds", p, f"round {r} does not follow {prev_r}")
        if prev_a is not None and a < prev_a:
            bad("NonMonotoneCurve", p, f"accuracy drops from {prev_a} to {a}")
        prev_r, prev_a = r, a
    for name, key in (
        ("sample_bytes", "sample_bytes"),
        ("upload_energy_per_sample", "upload_energy_per_sample_kwh"),
        ("receive_energy_per_sample", "receive_energy_per_sample_kwh"),
        ("inferences", "inferences"),
        ("energy_per_inference", "energy_per_inference_kwh"),
    ):
        if getattr(w, name) < 0:
            bad("NegativeValue", f"workload.{key}", f"{key} must be >= 0")
    if w.serving_slots < 1:
        bad("BadServingSlots", "workload.serving_slots", "serving_slots must be >= 1")

    for name in ("alpha_energy", "alpha_task"):
        if not 0 <= getattr(s, name) <= 1:
            bad("CapOutOfRange", name, f"{name}={getattr(s, name)} outside [0, 1]")
    if not 0 <= s.trading_loss < 1:
        bad("LossOutOfRange", "trading_loss", f"trading_loss={s.trading_loss} outside [0, 1)")
    if s.backbone_energy_per_byte < 0:
        bad("NegativeValue", "backbone_energy_per_byte_kwh", "must be >= 0")
    if s.backbone_intensity is not None and s.backbone_intensity < 0:
        bad("NegativeValue", "backbone_intensity", "must be >= 0")
    if s.slot_duration <= 0:
        bad("BadSlotDuration", "slot_duration_s", "slot duration must be > 0")
    if s.max_rounds < 1:
        bad("BadMaxRounds", "max_rounds", "max_rounds must be >= 1")
    c = s.coordinator
    if c.region_id is not None and c.region_id not in region_ids:
        bad("UnknownRegion", "coordinator.region_id", f"region {c.region_id!r} is not declared")
    if c.energy_per_round < 0:
        bad("NegativeValue", "coordinator.energy_per_round_kwh", "must be >= 0")
    return out


# ---------------------------------------------------------------------------
# JSON (de)serialisation


@lru_cache(maxsize=1)
def scenario_schema() -> dict:
    text = resources.files("carbonsim").joinpath("data/scenario.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


_SCHEMA_CODES = {
    "additionalProperties": "UnknownKey",
    "required": "MissingKey",
    "type": "BadType",
    "enum": "BadEnum",
    "const": "BadSchemaVersion",
    "minItems": "BadShape",
    "maxItems": "BadShape",
}


def _json_path(parts) -> str:
    out = ""
    for part in parts:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "$"


def _schema_violations(raw: Any) -> list[Violation]:
    validator = jsonschema.Draft202012Validator(scenario_schema())
    found = []
    for err in validator.iter_errors(raw):
        code = _SCHEMA_CODES.get(err.validator, "SchemaViolation")
        path = list(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            path = path + extra[:1]
        found.append(Violation(code, _json_path(path), err.message))
    found.sort(key=lambda v: v.path)
    return found


def load_regions_csv(path: str | Path, labels: dict[str, str] | None = None) -> tuple[Region, ...]:
    """Regions from a ``region_id,slot,intensity_gco2_per_kwh`` file, in first-seen order."""
    labels = labels or {}
    series: dict[str, list[tuple[int, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            series.setdefault(row["region_id"], []).append(
                (int(row["slot"]), float(row["intensity_gco2_per_kwh"]))
            )
    return tuple(Region(rid, tuple(pts), labels.get(rid, rid)) for rid, pts in series.items())


def _harvester_from(d: dict | None, base_dir: str | Path | None) -> HarvestParams:
    if d is None:
        return HarvestParams.off()
    trace = d.get("trace_path")
    if trace is not None and base_dir is not None and not Path(trace).is_absolute():
        trace = str((Path(base_dir) / trace).resolve())
    return HarvestParams(
        HarvestProcess(d["process"]),
        float(d.get("mean_kwh", 0.0)),
        float(d.get("stddev_kwh", 0.0)),
        trace,
    )


def scenario_from_dict(raw: Any, base_dir: str | Path | None = None) -> Scenario:
    """Build and validate a scenario; raises :class:`ScenarioValidationError`."""
    violations = _schema_violations(raw)
    if not violations and ("regions" in raw) == ("regions_csv" in raw):
        violations.append(Violation("RegionsSource", "regions",
                                    "give exactly one of 'regions' or 'regions_csv'"))
    if violations:
        raise ScenarioValidationError(violations)

    if "regions_csv" in raw:
        path = Path(raw["regions_csv"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            regions = load_regions_csv(path, raw.get("region_labels"))
        except (OSError, KeyError, ValueError) as exc:
            raise ScenarioParseError(f"cannot read regions_csv {path}: {exc}") from exc
    else:
        regions = tuple(
            Region(r["id"], tuple((int(s), float(v)) for s, v in r["intensity_series"]), r.get("label", r["id"]))
            for r in raw["regions"]
        )
    servers = tuple(
        EdgeServer(
            id=s["id"],
            region_id=s.get("region_id"),
            static_power=float(s["static_power_w"]),
            compute_energy_per_unit=float(s["compute_energy_per_unit_kwh"]),
            comm_energy_per_byte=float(s.get("comm_energy_per_byte_kwh", 0.0)),
            battery_capacity=float(s.get("battery_capacity_kwh", 0.0)),
            battery_level=float(s.get("battery_level_kwh", 0.0)),
            harvester=_harvester_from(s.get("harvester"), base_dir),
            charge_efficiency=float(s.get("charge_efficiency", 1.0)),
        )
        for s in raw["servers"]
    )
    w = raw["workload"]
    workload = WorkloadSpec(
        model_kind=ModelKind(w["model_kind"]),
        local_epochs=int(w["local_epochs"]),
        batch_size=int(w["batch_size"]),
        total_samples=int(w["total_samples"]),
        model_bytes=int(w["model_bytes"]),
        target_accuracy=float(w["target_accuracy"]),
        accuracy_curve=tuple((int(r), float(a)) for r, a in w["accuracy_curve"]),
        sample_bytes=float(w.get("sample_bytes", 0.0)),
        upload_energy_per_sample=float(w.get("upload_energy_per_sample_kwh", 0.0)),
        receive_energy_per_sample=float(w.get("receive_energy_per_sample_kwh", 0.0)),
        inferences=int(w.get("inferences", 0)),
        energy_per_inference=float(w.get("energy_per_inference_kwh", 0.0)),
        serving_slots=int(w.get("serving_slots", 1)),
    )
    c = raw.get("coordinator", {})
    bi = raw.get("backbone_intensity")
    scenario = Scenario(
        regions=regions,
        servers=servers,
        workload=workload,
        policy=Policy(raw.get("policy", Policy.BASELINE.value)),
        alpha_energy=float(raw.get("alpha_energy", 0.5)),
        alpha_task=float(raw.get("alpha_task", 0.5)),
        trading_loss=float(raw.get("trading_loss", 0.05)),
        backbone_energy_per_byte=float(raw.get("backbone_energy_per_byte_kwh", 0.0)),
        backbone_intensity=None if bi is None else float(bi),
        slot_duration=float(raw.get("slot_duration_s", 60.0)),
        seed=int(raw.get("seed", 0)),
        max_rounds=int(raw.get("max_rounds", 100)),
        deep_sleep=bool(raw.get("deep_sleep", False)),
        coordinator=Coordinator(c.get("region_id"), float(c.get("energy_per_round_kwh", 0.0))),
        name=raw.get("name", ""),
        description=raw.get("description", ""),
    )
    violations = validate_scenario(scenario)
    if violations:
        raise ScenarioValidationError(violations)
    return scenario


def scenario_to_dict(s: Scenario) -> dict:
    w = s.workload
    out = {
        "schema_version": SCHEMA_VERSION,
        "name": s.name,
        "description": s.description,
        "regions": [
            {"id": r.id, "label": r.label, "intensity_series": [[k, v] for k, v in r.intensity_series]}
            for r in s.regions
        ],
        "servers": [
            {
                "id": sv.id,
                "region_id": sv.region_id,
                "static_power_w": sv.static_power,
                "compute_energy_per_unit_kwh": sv.compute_energy_per_unit,
                "comm_energy_per_byte_kwh": sv.comm_energy_per_byte,
                "battery_capacity_kwh": sv.battery_capacity,
                "battery_level_kwh": sv.battery_level,
                "charge_efficiency": sv.charge_efficiency,
                "harvester": {
                    "process": sv.harvester.process.value,
                    "mean_kwh": sv.harvester.mean,
                    "stddev_kwh": sv.harvester.stddev,
                    "trace_path": sv.harvester.trace_path,
                },
            }
            for sv in s.servers
        ],
        "workload": {
            "model_kind": w.model_kind.value,
            "local_epochs": w.local_epochs,
            "batch_size": w.batch_size,
            "total_samples": w.total_samples,
            "model_bytes": w.model_bytes,
            "target_accuracy": w.target_accuracy,
            "accuracy_curve": [[r, a] for r, a in w.accuracy_curve],
            "sample_bytes": w.sample_bytes,
            "upload_energy_per_sample_kwh": w.upload_energy_per_sample,
            "receive_energy_per_sample_kwh": w.receive_energy_per_sample,
            "inferences": w.inferences,
            "energy_per_inference_kwh": w.energy_per_inference,
            "serving_slots": w.serving_slots,
        },
        "policy": s.policy.value,
        "alpha_energy": s.alpha_energy,
        "alpha_task": s.alpha_task,
        "trading_loss": s.trading_loss,
        "backbone_energy_per_byte_kwh": s.backbone_energy_per_byte,
        "backbone_intensity": s.backbone_intensity,
        "slot_duration_s": s.slot_duration,
        "seed": s.seed,
        "max_rounds": s.max_rounds,
        "deep_sleep": s.deep_sleep,
        "coordinator": {"region_id": s.coordinator.region_id, "energy_per_round_kwh": s.coordinator.energy_per_round},
    }
    return out


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ScenarioParseError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(raw, base_dir=path.parent)


def dump_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"


def fixture_path(name: str) -> Path:
    """Path of a scenario fixture shipped with the package."""
    return Path(str(resources.files("carbonsim").joinpath("data/fixtures", name)))


def data_path(name: str) -> Path:
    return Path(str(resources.files("carbonsim").joinpath("data", name)))
