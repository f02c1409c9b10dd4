"""Exception types raised by chdkit."""


class ChdkitError(Exception):
    """Base class for all chdkit errors."""


class GridMismatchError(ChdkitError, ValueError):
    """Two volumes that must share a grid or physical extent do not."""


class MassMismatchError(ChdkitError, ValueError):
    """Weighted point sets passed to the transport solver carry unequal mass."""


class SolverError(ChdkitError, RuntimeError):
    """The transport solver failed to certify an optimal solution."""


class FingerprintMismatchError(ChdkitError, ValueError):
    """Case skeletons and template library were produced under different configs."""


class EmptyInputError(ChdkitError, ValueError):
    """An operation that requires non-empty input received an empty one."""


class FormatError(ChdkitError, ValueError):
    """A volume or record file is malformed."""


class PhantomSpecError(ChdkitError, ValueError):
    """A phantom specification is invalid or internally inconsistent."""
