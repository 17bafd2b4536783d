"""Symbolic flow verifier: replay a synthetic flow against deployed artifacts.

No packets are processed; each path is walked device by device and the first
device whose artifacts match the flow blocks it. Network rules match on the
exact source/destination pair; application rules match the HTTP host, but
only on devices whose chosen control actually inspects the application layer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import topology as topo
from .capability import Catalog, CapabilityId, LAYER_APPLICATION
from .errors import ValidationError
from .refiner import RuleArtifact
from .topology import Path, Topology

logger = logging.getLogger(__name__)

OUTCOME_BLOCKED = "BLOCKED"
OUTCOME_ALLOWED = "ALLOWED"


@dataclass(frozen=True)
class FlowSpec:
    src_ip: str
    dst_ip: str
    l7_host: str | None = None

    def __post_init__(self):
        if self.src_ip == self.dst_ip:
            raise ValidationError("flow source and destination must differ")


@dataclass(frozen=True)
class PathVerdict:
    path: Path
    outcome: str
    device: str | None = None


def _artifact_matches(artifact: RuleArtifact, f: FlowSpec, catalog: Catalog) -> bool:
    host = artifact.detail_of(CapabilityId.HTTP_HOST)
    if host is not None:
        control = catalog.controls.get(artifact.nsf)
        if control is None or control.layer != LAYER_APPLICATION:
            return False
        return f.l7_host is not None and f.l7_host.lower() == host.lower()
    src = artifact.detail_of(CapabilityId.IP_SOURCE)
    dst = artifact.detail_of(CapabilityId.IP_DESTINATION)
    return src == f.src_ip and dst == f.dst_ip


def evaluate_flow(
    t: Topology,
    artifacts: list[RuleArtifact],
    catalog: Catalog,
    f: FlowSpec,
    subject: str,
    obj: str,
) -> list[PathVerdict]:
    """Verdict per enumerated path: first matching device blocks the flow."""
    per_device: dict[str, list[RuleArtifact]] = {}
    for artifact in artifacts:
        per_device.setdefault(artifact.device, []).append(artifact)

    verdicts = []
    for path in topo.enumerate_paths(t, subject, obj):
        blocked_by = None
        for node_id in path.intermediate:
            if any(
                _artifact_matches(a, f, catalog)
                for a in per_device.get(node_id, ())
            ):
                blocked_by = node_id
                break
        if blocked_by is None:
            verdicts.append(PathVerdict(path=path, outcome=OUTCOME_ALLOWED))
        else:
            verdicts.append(
                PathVerdict(path=path, outcome=OUTCOME_BLOCKED, device=blocked_by)
            )
    return verdicts


def verify_deployment(
    t: Topology,
    artifacts: list[RuleArtifact],
    catalog: Catalog,
    f: FlowSpec,
    subject: str,
    obj: str,
) -> tuple[bool, list[str]]:
    """True iff the flow is blocked on every path; report lists bypasses."""
    verdicts = evaluate_flow(t, artifacts, catalog, f, subject, obj)
    report = []
    if not verdicts:
        logger.warning("no paths between %s and %s; vacuously blocked", subject, obj)
        report.append(f"warning: no paths between {subject} and {obj}")
        return True, report
    blocked = True
    for v in verdicts:
        if v.outcome == OUTCOME_BLOCKED:
            report.append(f"BLOCKED path {list(v.path.intermediate)} at {v.device}")
        else:
            blocked = False
            report.append(f"ALLOWED (bypass) path {list(v.path.intermediate)}")
    return blocked, report
