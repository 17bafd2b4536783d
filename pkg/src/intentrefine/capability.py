"""Security capability model: control catalogs and per-fact requirements.

A control is eligible for a requirement when it operates at the same layer
and its capability set covers everything the requirement needs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .errors import DocumentSyntaxError, NoDerivableRequirement, ValidationError
from .factbase import Fact

LAYER_NETWORK = "network"
LAYER_APPLICATION = "application"
LAYERS = (LAYER_NETWORK, LAYER_APPLICATION)


class CapabilityId(str, Enum):
    IP_SOURCE = "IpSourceAddressConditionCapability"
    IP_DESTINATION = "IpDestinationAddressConditionCapability"
    STATE = "StateConditionCapability"
    HTTP_HOST = "HttpHostHeaderConditionCapability"
    DROP = "DropActionCapability"
    DENY = "DenyActionCapability"


ACTION_CAPABILITIES = frozenset({CapabilityId.DROP, CapabilityId.DENY})


@dataclass(frozen=True)
class ControlSpec:
    name: str
    layer: str
    stateful: bool
    capabilities: frozenset[CapabilityId]


@dataclass(frozen=True)
class Catalog:
    controls: dict[str, ControlSpec]


@dataclass(frozen=True)
class RequiredSet:
    layer: str
    capabilities: frozenset[CapabilityId]

    def __post_init__(self):
        actions = self.capabilities & ACTION_CAPABILITIES
        if not self.capabilities or len(actions) != 1:
            raise ValidationError(
                "a required set must contain exactly one action capability"
            )

    @property
    def action(self) -> CapabilityId:
        return next(iter(self.capabilities & ACTION_CAPABILITIES))


NETWORK_REQUIRED = RequiredSet(
    layer=LAYER_NETWORK,
    capabilities=frozenset(
        {CapabilityId.IP_SOURCE, CapabilityId.IP_DESTINATION, CapabilityId.DROP}
    ),
)
APPLICATION_REQUIRED = RequiredSet(
    layer=LAYER_APPLICATION,
    capabilities=frozenset({CapabilityId.HTTP_HOST, CapabilityId.DENY}),
)


def load_catalog(document: str) -> Catalog:
    """Parse and validate the control catalog JSON."""
    try:
        raw = json.loads(document)
    except json.JSONDecodeError as exc:
        raise DocumentSyntaxError(f"malformed catalog: {exc}", line=exc.lineno)
    if not isinstance(raw, dict):
        raise DocumentSyntaxError("catalog must be a JSON object of controls")

    controls: dict[str, ControlSpec] = {}
    for name, spec in raw.items():
        if not isinstance(spec, dict):
            raise DocumentSyntaxError(f"control {name!r}: spec must be an object")
        layer = spec.get("layer")
        if layer not in LAYERS:
            raise ValidationError(f"control {name!r}: unknown layer {layer!r}")
        caps = set()
        for cap_name in spec.get("capabilities") or []:
            try:
                caps.add(CapabilityId(cap_name))
            except ValueError:
                raise ValidationError(
                    f"control {name!r}: unknown capability {cap_name!r}"
                )
        if layer == LAYER_NETWORK and CapabilityId.HTTP_HOST in caps:
            raise ValidationError(
                f"control {name!r}: network-layer control cannot inspect HTTP host"
            )
        if layer == LAYER_APPLICATION and CapabilityId.STATE in caps:
            raise ValidationError(
                f"control {name!r}: application-layer control cannot track state"
            )
        controls[name] = ControlSpec(
            name=name,
            layer=layer,
            stateful=bool(spec.get("stateful", False)),
            capabilities=frozenset(caps),
        )
    return Catalog(controls=controls)


def serialize_catalog(c: Catalog) -> str:
    doc = {
        name: {
            "layer": spec.layer,
            "stateful": spec.stateful,
            "capabilities": sorted(cap.value for cap in spec.capabilities),
        }
        for name, spec in sorted(c.controls.items())
    }
    return json.dumps(doc, indent=2) + "\n"


def derive_required(fact: Fact) -> list[RequiredSet]:
    """The capability sets a fact demands, one per implied enforcement layer."""
    required: list[RequiredSet] = []
    slots = [name for name, _ in fact.bindings]
    if any(name.endswith("ip-address") for name in slots):
        required.append(NETWORK_REQUIRED)
    if any(name == "url" for name in slots):
        required.append(APPLICATION_REQUIRED)
    if not required:
        raise NoDerivableRequirement(
            f"fact on template {fact.template!r} binds no enforceable slot kind"
        )
    return required


def control_satisfies(c: ControlSpec, r: RequiredSet) -> bool:
    return c.layer == r.layer and r.capabilities <= c.capabilities
