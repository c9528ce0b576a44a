"""Error type shared by every module."""


class LabError(ValueError):
    """Raised on contract violations.

    ``kind`` is a short machine-readable tag ("shape", "rank", "numeric",
    "population", "sample", "domain", "degenerate", "no heterogeneity",
    "config", "rank-mismatch", "diverged").
    """

    def __init__(self, kind: str, message: str = ""):
        self.kind = kind
        super().__init__(f"{kind}: {message}" if message else kind)
