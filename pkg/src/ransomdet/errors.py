"""Exception types raised across the toolkit."""


class RansomdetError(Exception):
    """Base class for every error this package raises on purpose."""


# dataset
class DatasetError(RansomdetError):
    pass


class MissingColumn(DatasetError):
    def __init__(self, name):
        super().__init__(f"missing column: {name!r}")
        self.name = name


class UnparsableValue(DatasetError):
    def __init__(self, row, column, value):
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r}")
        self.row = row
        self.column = column
        self.value = value


class EmptyFile(DatasetError):
    pass


class DuplicateHeader(DatasetError):
    pass


class SchemaError(DatasetError):
    pass


class TooFewSamples(DatasetError):
    pass


class EmptyClass(DatasetError):
    pass


# pe
class PeError(RansomdetError):
    pass


class NotAnExecutable(PeError):
    pass


class TruncatedHeader(PeError):
    pass


class UnknownOptionalHeaderMagic(PeError):
    pass


class UnmappedColumn(RansomdetError):
    def __init__(self, name):
        super().__init__(f"schema column {name!r} has no PE header field")
        self.name = name


# trees and models
class EmptyNode(RansomdetError):
    pass


class FeatureIndexOutOfRange(RansomdetError):
    pass


class FeatureLengthMismatch(RansomdetError):
    pass


class SingleClassDataset(RansomdetError):
    pass


class NonFiniteLoss(RansomdetError):
    pass


# metrics
class LengthMismatch(RansomdetError):
    pass


class EmptyInput(RansomdetError):
    pass


class SingleClassTruth(RansomdetError):
    pass


# pipeline
class ConfigInvalid(RansomdetError):
    pass


class UnsupportedVersion(RansomdetError):
    pass


class CorruptModelFile(RansomdetError):
    pass
