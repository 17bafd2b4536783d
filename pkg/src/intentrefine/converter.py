"""Aggregate rule artifacts into per-device MSPL policy documents.

Serialization is hand-rolled so the XML is byte-deterministic: fixed header,
two-space indentation, canonical condition order (source address, destination
address, state, host), and a trailing action element. parse_mspl is the exact
inverse, so serialize-parse-serialize is a fixpoint.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass
from enum import Enum
from xml.etree import ElementTree as ET

from .capability import ACTION_CAPABILITIES, CapabilityId
from .errors import DocumentSyntaxError, InconsistentNsf, NormalizationError
from .refiner import CapabilityInstance, RuleArtifact

XML_HEADER = "<?xml version='1.0' encoding='utf-8'?>"

STATE_ORDER = ("NEW", "ESTABLISHED", "RELATED")

CONDITION_ORDER = (
    CapabilityId.IP_SOURCE,
    CapabilityId.IP_DESTINATION,
    CapabilityId.STATE,
    CapabilityId.HTTP_HOST,
)

ELEMENT_NAMES = {
    CapabilityId.IP_SOURCE: "ipSourceAddressConditionCapability",
    CapabilityId.IP_DESTINATION: "ipDestinationAddressConditionCapability",
    CapabilityId.STATE: "stateConditionCapability",
    CapabilityId.HTTP_HOST: "httpHostHeaderConditionCapability",
}
CAPABILITY_BY_ELEMENT = {v: k for k, v in ELEMENT_NAMES.items()}

VALUE_CONTAINERS = {
    CapabilityId.IP_SOURCE: "capabilityIpValue",
    CapabilityId.IP_DESTINATION: "capabilityIpValue",
    CapabilityId.STATE: "capabilityStateValue",
    CapabilityId.HTTP_HOST: "capabilityStringValue",
}

ACTION_KEYWORDS = {CapabilityId.DROP: "drop", CapabilityId.DENY: "deny"}


class MatchOperator(str, Enum):
    EXACT = "exactMatch"
    RANGE = "range"
    UNION = "union"


@dataclass(frozen=True)
class MsplCondition:
    capability: CapabilityId
    operator: MatchOperator
    values: tuple[str, ...]


@dataclass(frozen=True)
class MsplRule:
    id: str
    conditions: tuple[MsplCondition, ...]
    action: str


@dataclass(frozen=True)
class MsplPolicy:
    nsf_name: str
    rules: tuple[MsplRule, ...]


# --- normalization ----------------------------------------------------------

def _ip_key(value: str) -> int:
    try:
        return int(ipaddress.IPv4Address(value))
    except (ipaddress.AddressValueError, ValueError):
        raise NormalizationError(f"not an IPv4 address: {value!r}")


def _normalize_address(capability: CapabilityId, detail: str) -> MsplCondition:
    detail = detail.strip()
    if "," in detail:
        values = tuple(v.strip() for v in detail.split(","))
        for v in values:
            _ip_key(v)
        return MsplCondition(capability, MatchOperator.UNION, values)
    if "-" in detail:
        begin, _, end = detail.partition("-")
        begin, end = begin.strip(), end.strip()
        if _ip_key(begin) > _ip_key(end):
            raise NormalizationError(f"descending address range {detail!r}")
        return MsplCondition(capability, MatchOperator.RANGE, (begin, end))
    _ip_key(detail)
    return MsplCondition(capability, MatchOperator.EXACT, (detail,))


def _normalize_state(detail: str) -> MsplCondition:
    states = {s.strip().upper() for s in detail.split(",") if s.strip()}
    unknown = states - set(STATE_ORDER)
    if unknown or not states:
        raise NormalizationError(f"bad connection-state set {detail!r}")
    ordered = tuple(s for s in STATE_ORDER if s in states)
    return MsplCondition(CapabilityId.STATE, MatchOperator.EXACT, ordered)


def _normalize_host(detail: str) -> MsplCondition:
    host = detail.strip().lower()
    if not host:
        raise NormalizationError("empty host value")
    return MsplCondition(CapabilityId.HTTP_HOST, MatchOperator.EXACT, (host,))


def _rule_from_instances(
    rule_id: str, instances: tuple[CapabilityInstance, ...]
) -> MsplRule:
    conditions: dict[CapabilityId, MsplCondition] = {}
    action = None
    for inst in instances:
        if inst.capability in ACTION_CAPABILITIES:
            action = ACTION_KEYWORDS[inst.capability]
        elif inst.capability in (CapabilityId.IP_SOURCE, CapabilityId.IP_DESTINATION):
            conditions[inst.capability] = _normalize_address(
                inst.capability, inst.detail
            )
        elif inst.capability == CapabilityId.STATE:
            conditions[inst.capability] = _normalize_state(inst.detail)
        elif inst.capability == CapabilityId.HTTP_HOST:
            conditions[inst.capability] = _normalize_host(inst.detail)
    if action is None:
        raise NormalizationError(f"rule {rule_id!r}: artifact carries no action")
    ordered = tuple(
        conditions[c] for c in CONDITION_ORDER if c in conditions
    )
    return MsplRule(id=rule_id, conditions=ordered, action=action)


def build_mspl(artifacts: list[RuleArtifact]) -> dict[str, MsplPolicy]:
    """One policy per device, artifact order preserved within each policy."""
    nsf_per_device: dict[str, str] = {}
    rules_per_device: dict[str, list[MsplRule]] = {}
    for artifact in artifacts:
        known = nsf_per_device.setdefault(artifact.device, artifact.nsf)
        if known != artifact.nsf:
            raise InconsistentNsf(
                f"device {artifact.device!r} assigned both {known!r} and "
                f"{artifact.nsf!r}"
            )
        rules_per_device.setdefault(artifact.device, []).append(
            _rule_from_instances(artifact.hsplid, artifact.capabilities)
        )
    return {
        device: MsplPolicy(nsf_name=nsf_per_device[device], rules=tuple(rules))
        for device, rules in rules_per_device.items()
    }


# --- serialization ----------------------------------------------------------

def _serialize_condition(cond: MsplCondition, indent: str) -> list[str]:
    name = ELEMENT_NAMES[cond.capability]
    container = VALUE_CONTAINERS[cond.capability]
    lines = [f'{indent}<{name} operator="{cond.operator.value}">']
    lines.append(f"{indent}  <{container}>")
    if cond.capability == CapabilityId.STATE:
        for value in cond.values:
            lines.append(f"{indent}    <state>{value}</state>")
    elif cond.operator == MatchOperator.RANGE:
        lines.append(f"{indent}    <range>")
        lines.append(f"{indent}      <begin>{cond.values[0]}</begin>")
        lines.append(f"{indent}      <end>{cond.values[1]}</end>")
        lines.append(f"{indent}    </range>")
    else:
        for value in cond.values:
            lines.append(f"{indent}    <exactMatch>{value}</exactMatch>")
    lines.append(f"{indent}  </{container}>")
    lines.append(f"{indent}</{name}>")
    return lines


def serialize_mspl(p: MsplPolicy) -> str:
    if not p.rules:
        return f'{XML_HEADER}\n<policy nsfName="{p.nsf_name}"/>\n'
    lines = [XML_HEADER, f'<policy nsfName="{p.nsf_name}">']
    for rule in p.rules:
        lines.append(f'  <rule id="{rule.id}">')
        for cond in rule.conditions:
            lines.extend(_serialize_condition(cond, "    "))
        lines.append(f"    <actionCapability>{rule.action}</actionCapability>")
        lines.append("  </rule>")
    lines.append("</policy>")
    return "\n".join(lines) + "\n"


def parse_mspl(document: str) -> MsplPolicy:
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise DocumentSyntaxError(f"malformed MSPL document: {exc}")
    if root.tag != "policy" or "nsfName" not in root.attrib:
        raise DocumentSyntaxError("MSPL root must be <policy nsfName=...>")

    rules = []
    for rule_el in root.findall("rule"):
        conditions = []
        action = None
        for el in rule_el:
            if el.tag == "actionCapability":
                action = (el.text or "").strip()
                continue
            capability = CAPABILITY_BY_ELEMENT.get(el.tag)
            if capability is None:
                raise DocumentSyntaxError(f"unknown condition element <{el.tag}>")
            try:
                operator = MatchOperator(el.get("operator", ""))
            except ValueError:
                raise DocumentSyntaxError(
                    f"unknown operator on <{el.tag}>: {el.get('operator')!r}"
                )
            container = el.find(VALUE_CONTAINERS[capability])
            if container is None:
                raise DocumentSyntaxError(f"<{el.tag}> missing its value container")
            if capability == CapabilityId.STATE:
                values = tuple(
                    (s.text or "").strip() for s in container.findall("state")
                )
            elif operator == MatchOperator.RANGE:
                rng = container.find("range")
                if rng is None:
                    raise DocumentSyntaxError("range operator without <range> element")
                values = (
                    (rng.findtext("begin") or "").strip(),
                    (rng.findtext("end") or "").strip(),
                )
            else:
                values = tuple(
                    (m.text or "").strip() for m in container.findall("exactMatch")
                )
            conditions.append(MsplCondition(capability, operator, values))
        if action not in ("drop", "deny"):
            raise DocumentSyntaxError(f"rule {rule_el.get('id')!r}: bad action {action!r}")
        rules.append(
            MsplRule(
                id=rule_el.get("id", ""),
                conditions=tuple(conditions),
                action=action,
            )
        )
    return MsplPolicy(nsf_name=root.get("nsfName", ""), rules=tuple(rules))
