"""Exception hierarchy shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PipelineError):
    """Invalid or incomplete configuration."""


class ManifestLoadError(PipelineError):
    """A manifest file could not be read or parsed.

    Distinct from a validation failure: a loadable manifest with bad
    content produces a validation report, not this error.
    """


class VocabularyError(PipelineError):
    """Malformed substitution vocabulary or overlapping slot matches."""


class AdapterError(PipelineError):
    """An external backend process failed; carries captured diagnostics."""

    def __init__(self, message, *, command=None, returncode=None, stderr=None):
        super().__init__(message)
        self.command = command
        self.returncode = returncode
        self.stderr = stderr


class ContractError(PipelineError):
    """An external backend ran but violated its output contract."""


class DegenerateInputError(PipelineError):
    """Input data is degenerate for the requested fit (e.g. zero variance)."""


class PoolScoringError(PipelineError):
    """Too large a fraction of a pool failed to score."""


class MatrixError(PipelineError):
    """Too many experiment-matrix cells failed."""
