"""Exception hierarchy shared by all modules."""


class RegionSegError(Exception):
    """Base class for every error raised by regionseg."""


# nifti_io
class NiftiError(RegionSegError):
    pass


class BadMagic(NiftiError):
    pass


class UnsupportedDatatype(NiftiError):
    pass


class CorruptHeader(NiftiError):
    pass


class TruncatedData(NiftiError):
    pass


class NaNInData(NiftiError):
    pass


class IoFailure(NiftiError, OSError):
    pass


# geometry / shapes
class ShapeMismatch(RegionSegError, ValueError):
    pass


class ShrinkRequested(RegionSegError, ValueError):
    pass


class PlanMismatch(RegionSegError, ValueError):
    pass


class PatchLargerThanVolume(RegionSegError, ValueError):
    pass


# numerics
class DegenerateData(RegionSegError, ValueError):
    pass


class OddSpatialDim(RegionSegError, ValueError):
    pass


class DegenerateBatch(RegionSegError, ValueError):
    pass


class BadConfig(RegionSegError, ValueError):
    pass


class LabelOutOfRange(RegionSegError, ValueError):
    pass


class EmptyDataset(RegionSegError, ValueError):
    pass


class NonFiniteLoss(RegionSegError, ArithmeticError):
    pass


# evaluation
class EmptyStructure(RegionSegError, ValueError):
    pass


class AllZeroDifferences(RegionSegError, ValueError):
    pass


# phantoms
class StructureOutsideRegion(RegionSegError, ValueError):
    pass
