class ToolkitError(Exception):
    """Base class for every error raised by the toolkit."""


class RejectedInputError(ToolkitError, ValueError):
    """An operation was called outside its precondition."""


class UnsupportedCombinationError(ToolkitError, NotImplementedError):
    """No closed-form prox-step exists for the (geometry, set, h) triple."""

    def __init__(self, geometry_kind, set_kind, term_kind):
        self.geometry_kind = geometry_kind
        self.set_kind = set_kind
        self.term_kind = term_kind
        super().__init__(
            f"No closed-form prox-step for geometry={geometry_kind}, set={set_kind}, h={term_kind}"
        )


class ConfigError(ToolkitError, ValueError):
    """A solver or experiment configuration is invalid."""


class ReportIntegrityError(ToolkitError):
    """Stored aggregates of a report disagree with its per-replication rows."""
