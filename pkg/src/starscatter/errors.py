"""Exception types, one per rejectable condition.

Domain errors derive from StarScatterError; configuration problems from
ConfigError. The CLI maps the former to exit code 1 and the latter to 2.
"""


class StarScatterError(Exception):
    """Base class for all domain errors."""


class ConfigError(StarScatterError):
    """Bad run configuration (missing file, out-of-range override, ...)."""


# boundary conditions
class DimensionMismatch(StarScatterError):
    pass


class NotSelfAdjointBC(StarScatterError):
    pass


class RankDeficientBC(StarScatterError):
    pass


class SingularFreeJost(StarScatterError):
    pass


# potentials
class ParseError(StarScatterError):
    pass


class NotHermitian(StarScatterError):
    pass


class UnknownPreset(StarScatterError):
    pass


# Jost / scattering
class NonHermitianCell(StarScatterError):
    pass


class BranchError(StarScatterError):
    """Wavenumber neither real nor positive-imaginary."""


class MissingConjugateSample(StarScatterError):
    pass


class SingularJost(StarScatterError):
    pass


# spectrum
class ClusterTooDense(StarScatterError):
    pass


class GridMismatch(StarScatterError):
    pass


class RankAmbiguous(StarScatterError):
    pass


# kernels
class GridTooCoarse(StarScatterError):
    pass


class MissingNormalization(StarScatterError):
    pass


# evolution
class MissingKernelTables(StarScatterError):
    pass


class ZeroTime(StarScatterError):
    pass


class StepTooLarge(StarScatterError):
    pass


class SpectralValidityError(StarScatterError):
    """Requested time exceeds what the spectral k-grid can resolve."""


# harness
class NotAdmissible(StarScatterError):
    pass


class InadmissibleState(StarScatterError):
    pass


# folding
class NotHermitianCoupling(StarScatterError):
    pass
