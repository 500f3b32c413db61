"""Exception types shared across the pipeline."""


class SfmcError(Exception):
    """Base class for all pipeline errors."""


class NonPositiveDepth(SfmcError):
    """Projection or backprojection was asked to divide by a depth <= epsilon."""


class NearSingularRotation(SfmcError):
    """SE3 logarithm requested for a rotation too close to angle pi."""


class ShapeMismatch(SfmcError):
    """Tensor operation received incompatible shapes."""


class BackwardOnDetached(SfmcError):
    """backward() called on a tensor that is not part of a graph."""


class NonFiniteGradient(SfmcError):
    """Optimizer step received a NaN or infinite gradient."""


class ResolutionError(SfmcError):
    """Image resolution is not divisible by the encoder downscale factor."""


class NeedMultipleViews(SfmcError):
    """Cost volume construction needs at least two frames."""


class DegenerateGeometry(SfmcError):
    """Gauss-Newton normal equations are unusable (too few constraints or rank loss)."""


class EmptySupervision(SfmcError):
    """A masked reduction was asked to average over an empty pixel set."""


class EmptyInput(SfmcError):
    """An evaluation routine received no data."""


class EmptyDataset(SfmcError):
    """Training was started on a dataset with no usable windows."""


class NonFiniteLoss(SfmcError):
    """Training loss became NaN or infinite; the last checkpoint is kept on disk."""

    def __init__(self, message, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class InvalidConfig(SfmcError):
    """Scene configuration is geometrically impossible (e.g. camera inside geometry)."""


class RefusingOverwrite(SfmcError):
    """Output location already exists and --force was not given."""


class ConfigError(SfmcError):
    """Configuration file or value could not be parsed."""
