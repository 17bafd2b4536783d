"""Render MSPL policies into each control's native configuration language.

Renderers are registered per control name; translation is a pure function of
the policy, so equal input yields byte-equal output. Union conditions expand
to one rendered rule per value combination before rendering.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

from .capability import Catalog, CapabilityId
from .converter import MatchOperator, MsplCondition, MsplPolicy, MsplRule
from .errors import UnknownControl, UnsupportedCapability, ValidationError

MODSEC_ESCAPE_RE = re.compile(r"[.\\+*?()\[\]{}|^$]")


@dataclass(frozen=True)
class LowLevelRule:
    control: str
    text: str


def _expand_unions(rule: MsplRule) -> list[MsplRule]:
    """One rule per member combination of the union conditions."""
    alternatives = []
    for cond in rule.conditions:
        if cond.operator == MatchOperator.UNION:
            alternatives.append(
                [
                    MsplCondition(cond.capability, MatchOperator.EXACT, (value,))
                    for value in cond.values
                ]
            )
        else:
            alternatives.append([cond])
    return [
        MsplRule(id=rule.id, conditions=tuple(combo), action=rule.action)
        for combo in itertools.product(*alternatives)
    ]


def _address_flags(cond: MsplCondition, exact_flag: str, range_flag: str) -> list[str]:
    if cond.operator == MatchOperator.RANGE:
        return ["-m", "iprange", range_flag, f"{cond.values[0]}-{cond.values[1]}"]
    return [exact_flag, cond.values[0]]


def render_iptables(r: MsplRule) -> LowLevelRule:
    """Single iptables command on the FORWARD chain, fixed flag order:
    conntrack state, source, destination, jump target."""
    allowed = {CapabilityId.IP_SOURCE, CapabilityId.IP_DESTINATION, CapabilityId.STATE}
    conditions = {c.capability: c for c in r.conditions}
    unsupported = set(conditions) - allowed
    if unsupported:
        raise UnsupportedCapability(
            f"iptables cannot render {sorted(c.value for c in unsupported)}"
        )
    if r.action != "drop":
        raise UnsupportedCapability(f"iptables renderer only drops, got {r.action!r}")

    parts = ["iptables", "-A", "FORWARD"]
    state = conditions.get(CapabilityId.STATE)
    if state is not None:
        parts += ["-m", "conntrack", "--ctstate", ",".join(state.values)]
    src = conditions.get(CapabilityId.IP_SOURCE)
    if src is not None:
        parts += _address_flags(src, "-s", "--src-range")
    dst = conditions.get(CapabilityId.IP_DESTINATION)
    if dst is not None:
        parts += _address_flags(dst, "-d", "--dst-range")
    parts += ["-j", "DROP"]
    return LowLevelRule(control="IpTables", text=" ".join(parts))


def escape_modsecurity_regex(host: str) -> str:
    return MODSEC_ESCAPE_RE.sub(lambda m: "\\" + m.group(0), host)


def render_modsecurity(r: MsplRule, rule_number: int) -> LowLevelRule:
    """Anchored host-header SecRule; ids are assigned per policy file."""
    if rule_number < 1:
        raise ValidationError("ModSecurity rule numbers start at 1")
    conditions = {c.capability: c for c in r.conditions}
    unsupported = set(conditions) - {CapabilityId.HTTP_HOST}
    if unsupported or CapabilityId.HTTP_HOST not in conditions:
        raise UnsupportedCapability(
            "ModSecurity renderer handles exactly one host-header condition"
        )
    if r.action != "deny":
        raise UnsupportedCapability(f"ModSecurity renderer only denies, got {r.action!r}")
    host = conditions[CapabilityId.HTTP_HOST].values[0]
    escaped = escape_modsecurity_regex(host)
    text = (
        f'SecRule REQUEST_HEADERS:Host "@rx ^{escaped}$" \\\n'
        f'  "deny, id:{rule_number}"'
    )
    return LowLevelRule(control="ModSecurity", text=text)


RENDERER_CAPABILITIES = {
    "IpTables": {
        CapabilityId.IP_SOURCE,
        CapabilityId.IP_DESTINATION,
        CapabilityId.STATE,
        CapabilityId.DROP,
    },
    "ModSecurity": {CapabilityId.HTTP_HOST, CapabilityId.DENY},
}


def check_renderer_totality(catalog: Catalog) -> None:
    """Every capability a renderable control declares must have a mapping.

    A declared-but-unrenderable capability is a configuration error caught at
    startup rather than during translation.
    """
    for name, spec in catalog.controls.items():
        supported = RENDERER_CAPABILITIES.get(name)
        if supported is None:
            continue
        missing = spec.capabilities - supported
        if missing:
            raise UnsupportedCapability(
                f"control {name!r} declares capabilities its renderer cannot "
                f"map: {sorted(c.value for c in missing)}"
            )


def translate_policy(p: MsplPolicy) -> list[LowLevelRule]:
    """Deterministically render a policy, one rule per expanded combination."""
    if p.nsf_name == "IpTables":
        return [
            render_iptables(expanded)
            for rule in p.rules
            for expanded in _expand_unions(rule)
        ]
    if p.nsf_name == "ModSecurity":
        expanded = [e for rule in p.rules for e in _expand_unions(rule)]
        return [
            render_modsecurity(rule, number)
            for number, rule in enumerate(expanded, start=1)
        ]
    raise UnknownControl(f"no renderer registered for control {p.nsf_name!r}")


def rules_file_content(rules: list[LowLevelRule]) -> str:
    return "".join(rule.text + "\n" for rule in rules)
