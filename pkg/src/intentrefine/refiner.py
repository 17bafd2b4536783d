"""Core allocator: bind intents to topology facts, place enforcement devices,
emit rule artifacts, and maintain the reuse knowledge base.

Enforcement placement is an exact minimum set cover: instance sizes are tiny
(a handful of paths), so subsets are searched by increasing cardinality. A
greedy fallback exists for large synthetic instances but is off by default.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import re
from dataclasses import dataclass, field
from xml.etree import ElementTree as ET

from . import capability as cap
from . import topology as topo
from .capability import Catalog, CapabilityId, RequiredSet, control_satisfies
from .errors import (
    CorruptKnowledgeBase,
    DocumentSyntaxError,
    NoDerivableRequirement,
    NothingToEnforce,
    PersistError,
    Unenforceable,
    UnsupportedAction,
    ValidationError,
)
from .factbase import Fact, Knowledge
from .topology import Path, Topology

logger = logging.getLogger(__name__)

ACTION_DENY_ACCESS = "deny-access"
ACTION_SURFACE = "is not authorized to access"

STATES_FORWARD = "NEW,ESTABLISHED"
STATES_REVERSE = "ESTABLISHED,RELATED"

DIRECTION_FORWARD = "forward"
DIRECTION_REVERSE = "reverse"


@dataclass(frozen=True)
class HsplPolicy:
    id: str
    subject: str
    action: str
    object: str


@dataclass(frozen=True)
class CapabilityInstance:
    capability: CapabilityId
    detail: str


@dataclass(frozen=True)
class RuleArtifact:
    hsplid: str
    device: str
    nsf: str
    capabilities: tuple[CapabilityInstance, ...]

    def detail_of(self, capability: CapabilityId) -> str | None:
        for inst in self.capabilities:
            if inst.capability == capability:
                return inst.detail
        return None


@dataclass(frozen=True)
class ConditionBinding:
    """Concrete values for one rule of a requirement."""

    direction: str | None = None
    src_ip: str | None = None
    dst_ip: str | None = None
    host: str | None = None


@dataclass
class KnowledgeBase:
    topology_hash: str
    intents: dict[str, HsplPolicy] = field(default_factory=dict)
    paths: dict[str, list[Path]] = field(default_factory=dict)
    device_inventory: dict[str, tuple[str, ...]] = field(default_factory=dict)


@dataclass
class ReuseReport:
    """Which parts of a run came from the knowledge base."""

    hits: list[str] = field(default_factory=list)
    misses: list[str] = field(default_factory=list)
    inventory_reused: bool = False


# --- HSPL parsing -----------------------------------------------------------

def parse_hspl(document: str) -> list[HsplPolicy]:
    """Parse `<hspl id=...>` elements, in document order."""
    try:
        root = ET.fromstring(document)
    except ET.ParseError:
        try:
            root = ET.fromstring(f"<hspls>{document}</hspls>")
        except ET.ParseError as exc:
            raise DocumentSyntaxError(f"malformed HSPL document: {exc}")

    elements = [root] if root.tag == "hspl" else list(root.iter("hspl"))
    if not elements:
        raise DocumentSyntaxError("no <hspl> elements found")

    policies = []
    seen_ids = set()
    for el in elements:
        hspl_id = el.get("id", "").strip()
        subject = (el.findtext("subject") or "").strip()
        action = (el.findtext("action") or "").strip()
        obj = (el.findtext("object") or "").strip()
        if not hspl_id or not subject or not obj:
            raise DocumentSyntaxError("hspl element missing id, subject, or object")
        if hspl_id in seen_ids:
            raise ValidationError(f"duplicate hspl id {hspl_id!r}")
        seen_ids.add(hspl_id)
        if subject == obj:
            raise ValidationError(f"hspl {hspl_id!r}: subject equals object")
        if action != ACTION_SURFACE:
            raise UnsupportedAction(f"hspl {hspl_id!r}: unsupported action {action!r}")
        policies.append(
            HsplPolicy(id=hspl_id, subject=subject, action=ACTION_DENY_ACCESS, object=obj)
        )
    return policies


# --- intent binding ---------------------------------------------------------

def bind_intent(
    t: Topology, intent: HsplPolicy, k: Knowledge
) -> list[tuple[Fact, RequiredSet, list[ConditionBinding]]]:
    """Match knowledge facts to the intent's endpoints and produce concrete
    condition bindings for each implied requirement.

    A fact is relevant when one of its IP values equals the subject's or
    object's address, or a url value is among the object's served domains.
    """
    subject = topo.resolve_endpoint(t, intent.subject)
    obj = topo.resolve_endpoint(t, intent.object)

    results: list[tuple[Fact, RequiredSet, list[ConditionBinding]]] = []
    for fact in k.facts:
        try:
            required_sets = cap.derive_required(fact)
        except NoDerivableRequirement:
            logger.warning("skipping fact with no derivable requirement: %s", fact)
            continue
        for rset in required_sets:
            if rset.layer == cap.LAYER_NETWORK:
                ips = {v for name, v in fact.bindings if name.endswith("ip-address")}
                endpoint_ips = {subject.ip, obj.ip} - {None}
                if not (ips & endpoint_ips):
                    logger.warning(
                        "intent %s: fact IPs %s match no endpoint; skipped",
                        intent.id, sorted(ips),
                    )
                    continue
                bindings = [
                    ConditionBinding(
                        direction=DIRECTION_FORWARD, src_ip=subject.ip, dst_ip=obj.ip
                    ),
                    ConditionBinding(
                        direction=DIRECTION_REVERSE, src_ip=obj.ip, dst_ip=subject.ip
                    ),
                ]
            else:
                host = fact.get("url")
                if host is None or host.lower() not in obj.domains:
                    logger.warning(
                        "intent %s: url fact %r not served by %s; skipped",
                        intent.id, host, obj.id,
                    )
                    continue
                bindings = [ConditionBinding(host=host.lower())]
            results.append((fact, rset, bindings))

    if not results:
        raise NothingToEnforce(
            f"intent {intent.id!r}: no knowledge fact is relevant to "
            f"{intent.subject!r}/{intent.object!r}"
        )
    return results


# --- enforcement placement --------------------------------------------------

def _satisfying_controls(t: Topology, device: str, catalog: Catalog, r: RequiredSet):
    return sorted(
        name
        for name in t.nodes[device].controls
        if name in catalog.controls
        and control_satisfies(catalog.controls[name], r)
    )


def select_enforcement_set(
    paths: list[Path],
    t: Topology,
    catalog: Catalog,
    r: RequiredSet,
    greedy: bool = False,
) -> tuple[set[str], dict[str, str]]:
    """Minimum set of devices covering every path with a satisfying control.

    Exact search by increasing cardinality; ties break lexicographically on
    the sorted device-id tuple. Raises Unenforceable (carrying the offending
    path) when some path has no capable device.
    """
    if not paths:
        raise ValidationError("select_enforcement_set requires at least one path")

    capable_per_path: list[frozenset[str]] = []
    for path in paths:
        capable = frozenset(
            d for d in path.devices(t) if _satisfying_controls(t, d, catalog, r)
        )
        if not capable:
            raise Unenforceable(
                f"path {list(path.intermediate)} has no device with a "
                f"satisfying {r.layer}-layer control",
                path=path,
            )
        capable_per_path.append(capable)

    candidates = sorted(set().union(*capable_per_path))

    if greedy:
        chosen: set[str] = set()
        uncovered = list(capable_per_path)
        while uncovered:
            best = min(
                candidates, key=lambda d: (-sum(1 for s in uncovered if d in s), d)
            )
            chosen.add(best)
            uncovered = [s for s in uncovered if best not in s]
        selected = chosen
    else:
        selected = None
        for size in range(1, len(candidates) + 1):
            for combo in itertools.combinations(candidates, size):
                combo_set = set(combo)
                if all(combo_set & s for s in capable_per_path):
                    selected = combo_set
                    break
            if selected is not None:
                break
        assert selected is not None

    control_per_device = {
        d: _satisfying_controls(t, d, catalog, r)[0] for d in selected
    }
    return selected, control_per_device


# --- artifact construction --------------------------------------------------

def build_artifacts(
    intent: HsplPolicy,
    rset: RequiredSet,
    bindings: list[ConditionBinding],
    selection: tuple[set[str], dict[str, str]],
    catalog: Catalog,
) -> list[RuleArtifact]:
    """One artifact per selected device per binding, forward before reverse.

    Stateful network controls get a connection-state condition per direction;
    stateless ones omit it. Application requirements yield a single host rule.
    """
    devices, control_per_device = selection
    artifacts: list[RuleArtifact] = []
    for device in sorted(devices):
        control_name = control_per_device[device]
        control = catalog.controls[control_name]
        for binding in bindings:
            instances: list[CapabilityInstance] = []
            if rset.layer == cap.LAYER_NETWORK:
                instances.append(
                    CapabilityInstance(CapabilityId.IP_SOURCE, binding.src_ip)
                )
                instances.append(
                    CapabilityInstance(CapabilityId.IP_DESTINATION, binding.dst_ip)
                )
                if control.stateful:
                    states = (
                        STATES_FORWARD
                        if binding.direction == DIRECTION_FORWARD
                        else STATES_REVERSE
                    )
                    instances.append(CapabilityInstance(CapabilityId.STATE, states))
                instances.append(CapabilityInstance(CapabilityId.DROP, "drop"))
            else:
                instances.append(
                    CapabilityInstance(CapabilityId.HTTP_HOST, binding.host)
                )
                instances.append(CapabilityInstance(CapabilityId.DENY, "deny"))
            artifacts.append(
                RuleArtifact(
                    hsplid=intent.id,
                    device=device,
                    nsf=control_name,
                    capabilities=tuple(instances),
                )
            )
    return artifacts


def artifacts_to_json(artifacts: list[RuleArtifact]) -> str:
    doc = [
        {
            "hsplid": a.hsplid,
            "device": a.device,
            "nsf": a.nsf,
            "capabilities": [
                {"capability": inst.capability.value, "detail": inst.detail}
                for inst in a.capabilities
            ],
        }
        for a in artifacts
    ]
    return json.dumps(doc, indent=2) + "\n"


def artifacts_from_json(document: str) -> list[RuleArtifact]:
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise DocumentSyntaxError(f"malformed artifact document: {exc}")
    artifacts = []
    for entry in raw:
        artifacts.append(
            RuleArtifact(
                hsplid=entry["hsplid"],
                device=entry["device"],
                nsf=entry["nsf"],
                capabilities=tuple(
                    CapabilityInstance(CapabilityId(c["capability"]), c["detail"])
                    for c in entry["capabilities"]
                ),
            )
        )
    return artifacts


# --- knowledge base ---------------------------------------------------------

def kb_to_json(kb: KnowledgeBase) -> str:
    doc = {
        "topology_hash": kb.topology_hash,
        "intents": {
            i.id: {"subject": i.subject, "action": i.action, "object": i.object}
            for i in kb.intents.values()
        },
        "paths": {
            hid: [list(p.intermediate) for p in paths]
            for hid, paths in kb.paths.items()
        },
        "device_inventory": {
            d: list(controls) for d, controls in kb.device_inventory.items()
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def kb_from_json(document: str) -> KnowledgeBase:
    try:
        raw = json.loads(document)
        kb = KnowledgeBase(
            topology_hash=raw["topology_hash"],
            intents={
                hid: HsplPolicy(
                    id=hid,
                    subject=entry["subject"],
                    action=entry["action"],
                    object=entry["object"],
                )
                for hid, entry in raw["intents"].items()
            },
            paths={
                hid: [Path(intermediate=tuple(p)) for p in paths]
                for hid, paths in raw["paths"].items()
            },
            device_inventory={
                d: tuple(controls)
                for d, controls in raw["device_inventory"].items()
            },
        )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptKnowledgeBase(f"unreadable knowledge base: {exc}")
    if not re.fullmatch(r"[0-9a-f]{64}", kb.topology_hash or ""):
        raise CorruptKnowledgeBase("topology_hash is not a sha256 digest")
    for hid in kb.paths:
        if hid not in kb.intents:
            raise CorruptKnowledgeBase(f"paths present for unknown intent {hid!r}")
    return kb


def load_kb(path: str) -> KnowledgeBase | None:
    """Read a persisted knowledge base; a corrupt one is treated as absent."""
    if not os.path.exists(path):
        return None
    try:
        with open(path, encoding="utf-8") as fh:
            return kb_from_json(fh.read())
    except CorruptKnowledgeBase as exc:
        logger.warning("ignoring corrupt knowledge base %s: %s", path, exc)
        return None


def save_kb(kb: KnowledgeBase, path: str) -> None:
    try:
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(kb_to_json(kb))
        os.replace(tmp, path)
    except OSError as exc:
        raise PersistError(f"cannot persist knowledge base to {path}: {exc}")


def _build_inventory(t: Topology) -> dict[str, tuple[str, ...]]:
    return {
        n.id: n.controls
        for n in sorted(t.nodes.values(), key=lambda n: n.id)
        if n.kind == topo.DEVICE
    }


def kb_reconcile(
    kb: KnowledgeBase | None, t: Topology, intents: list[HsplPolicy]
) -> tuple[dict[str, list[Path]], dict[str, tuple[str, ...]], ReuseReport]:
    """Return per-intent paths and the device inventory, reusing cached
    results when the topology hash matches and the intent is unchanged."""
    report = ReuseReport()
    digest = t.digest()
    reusable = kb is not None and kb.topology_hash == digest

    paths: dict[str, list[Path]] = {}
    for intent in intents:
        if reusable and kb.intents.get(intent.id) == intent and intent.id in kb.paths:
            paths[intent.id] = list(kb.paths[intent.id])
            report.hits.append(intent.id)
        else:
            paths[intent.id] = topo.enumerate_paths(t, intent.subject, intent.object)
            report.misses.append(intent.id)

    if reusable:
        inventory = dict(kb.device_inventory)
        report.inventory_reused = True
    else:
        inventory = _build_inventory(t)
    return paths, inventory, report


def kb_update(
    kb: KnowledgeBase | None,
    t: Topology,
    intents: list[HsplPolicy],
    paths: dict[str, list[Path]],
) -> KnowledgeBase:
    """Merge new results into the knowledge base.

    A topology change evicts all old paths; the hash is always refreshed.
    """
    digest = t.digest()
    if kb is not None and kb.topology_hash == digest:
        merged = KnowledgeBase(
            topology_hash=digest,
            intents=dict(kb.intents),
            paths=dict(kb.paths),
            device_inventory=dict(kb.device_inventory),
        )
    else:
        merged = KnowledgeBase(topology_hash=digest)
    merged.device_inventory = _build_inventory(t)
    for intent in intents:
        merged.intents[intent.id] = intent
        merged.paths[intent.id] = list(paths[intent.id])
    return merged


# --- end-to-end refinement --------------------------------------------------

def refine(
    t: Topology,
    intents: list[HsplPolicy],
    k: Knowledge,
    catalog: Catalog,
    kb: KnowledgeBase | None = None,
    greedy: bool = False,
) -> tuple[list[RuleArtifact], dict[str, list[Path]], ReuseReport, KnowledgeBase]:
    """Run binding, placement, and artifact construction for every intent."""
    paths, _inventory, report = kb_reconcile(kb, t, intents)
    artifacts: list[RuleArtifact] = []
    for intent in intents:
        intent_paths = paths[intent.id]
        if not intent_paths:
            raise Unenforceable(
                f"intent {intent.id!r}: no path between "
                f"{intent.subject!r} and {intent.object!r}"
            )
        for _fact, rset, bindings in bind_intent(t, intent, k):
            selection = select_enforcement_set(
                intent_paths, t, catalog, rset, greedy=greedy
            )
            logger.info(
                "stage=refiner event=selection intent=%s layer=%s devices=%s",
                intent.id, rset.layer, ",".join(sorted(selection[0])),
            )
            artifacts.extend(
                build_artifacts(intent, rset, bindings, selection, catalog)
            )
    updated = kb_update(kb, t, intents, paths)
    return artifacts, paths, report, updated
