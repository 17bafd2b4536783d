"""Exception hierarchy shared by all pipeline stages.

Every error maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class DocumentSyntaxError(PipelineError):
    """Malformed input document (topology, knowledge, catalog, HSPL, MSPL)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(PipelineError):
    """Well-formed document that violates a structural invariant."""


class UnknownEndpoint(PipelineError):
    """Name does not resolve to an endpoint node of the topology."""


class UnknownTemplate(PipelineError):
    """Fact or operation references a template that was never defined."""


class UnknownSlot(PipelineError):
    """Fact binds a slot the template does not declare."""


class DuplicateSlot(PipelineError):
    """Template extension would add an already-present slot."""


class NoDerivableRequirement(PipelineError):
    """Fact binds no slot kind that maps to an enforcement capability."""


class UnsupportedAction(PipelineError):
    """HSPL action string is not one this engine can refine."""


class NothingToEnforce(PipelineError):
    """No fact in the knowledge is relevant to the intent's endpoints."""


class Unenforceable(PipelineError):
    """At least one path has no device with a satisfying control."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class InconsistentNsf(PipelineError):
    """Artifacts assign different controls to the same device."""


class NormalizationError(PipelineError):
    """Capability detail cannot be normalized to its canonical form."""


class UnknownControl(PipelineError):
    """No renderer is registered for the policy's control."""


class UnsupportedCapability(PipelineError):
    """Renderer has no mapping for a condition; never silently dropped."""


class CorruptKnowledgeBase(PipelineError):
    """Persisted knowledge base fails its internal consistency checks."""


class PersistError(PipelineError):
    """Knowledge base or output file could not be written."""
