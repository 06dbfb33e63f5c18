"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration field is missing, malformed, or out of range."""

    def __init__(self, field, message):
        super().__init__(f"config field '{field}': {message}")
        self.field = field


class FormatError(ValueError):
    """A serialized file is malformed; ``offset`` is the failing byte position."""

    def __init__(self, offset, message):
        super().__init__(f"format error at byte {offset}: {message}")
        self.offset = offset


class MiningError(ValueError):
    """A batch cannot supply a positive/negative pair for some anchor label."""

    def __init__(self, labels, message):
        super().__init__(f"{message} (labels: {sorted(set(int(l) for l in labels))})")
        self.labels = list(labels)


class NormalizationError(ValueError):
    """A vector expected to be normalizable has zero (or non-finite) norm."""


class DegenerateStructureError(ValueError):
    """A neighborhood structure is empty everywhere; the operation is undefined."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the epoch/iteration position."""

    def __init__(self, epoch=None, iteration=None, message=""):
        where = f" at epoch {epoch}, iteration {iteration}" if epoch is not None else ""
        super().__init__(f"divergence{where}: {message}")
        self.epoch = epoch
        self.iteration = iteration
