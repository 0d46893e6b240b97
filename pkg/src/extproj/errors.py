"""Exception hierarchy shared by every module of the package."""


class ExtProjError(Exception):
    """Base class for all errors raised by this package."""


# simplicial complexes
class ComplexError(ExtProjError, ValueError):
    pass


class DegenerateSimplex(ComplexError):
    pass


class BadIndex(ComplexError, IndexError):
    pass


class ImpureComplex(ComplexError):
    pass


class OutsideSimplex(ComplexError):
    pass


class NotOnComplex(ComplexError):
    pass


class ParseError(ExtProjError, ValueError):
    pass


class IoError(ExtProjError, OSError):
    pass


# covers
class NotACovering(ExtProjError, ValueError):
    pass


class PatchCountMismatch(ExtProjError, ValueError):
    """Facet-connected preimage components over a simplex differ from the degree.

    Usually means the triangulation is too coarse for the cover.
    """


class BadDegree(ExtProjError, ValueError):
    pass


class OutOfDomain(ExtProjError, ValueError):
    pass


class MergeAmbiguity(ExtProjError, ValueError):
    pass


# networks
class DimMismatch(ExtProjError, ValueError):
    pass


class NotInRange(ExtProjError, ValueError):
    pass


class Diverged(ExtProjError, FloatingPointError):
    pass


class EmptyCandidates(ExtProjError, ValueError):
    pass


# metrics
class OutsideReach(ExtProjError, ValueError):
    pass


class SingularTangentMap(ExtProjError, ValueError):
    pass


class EmptySet(ExtProjError, ValueError):
    pass


class SizeMismatch(ExtProjError, ValueError):
    pass


class TooLarge(ExtProjError, ValueError):
    pass
