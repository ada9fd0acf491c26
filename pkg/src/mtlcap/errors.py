"""Exception hierarchy for the mtlcap package.

Errors are grouped by the rough pipeline stage they come from so the CLI
can map them onto exit codes (data errors vs. runtime errors).
"""


class MtlcapError(Exception):
    """Base class for all package errors."""


class DataError(MtlcapError):
    """Problems with input files, manifests, or datasets."""


class RuntimeFailure(MtlcapError):
    """Problems that occur while running models or training."""


# corpus
class MissingFile(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, line_no, detail=""):
        self.line_no = line_no
        super().__init__(f"malformed line {line_no}" + (f": {detail}" if detail else ""))


class DuplicateImageId(DataError):
    def __init__(self, image_id):
        self.image_id = image_id
        super().__init__(f"duplicate image_id: {image_id}")


class UnsplitImage(DataError):
    def __init__(self, image_id):
        self.image_id = image_id
        super().__init__(f"image not present in any split file: {image_id}")


class BadIndex(DataError):
    def __init__(self, line_no, detail=""):
        self.line_no = line_no
        super().__init__(f"bad caption index on line {line_no}" + (f": {detail}" if detail else ""))


class EmptyClassDir(DataError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"class directory contains no images: {name}")


class NoClasses(DataError):
    pass


class TruncatedFile(DataError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"file size is not a multiple of the record length: {path}")


# text
class EmptyCorpus(DataError):
    pass


class DimMismatch(DataError):
    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"vector dimension {found} does not match expected {expected}")


class MalformedVectorLine(DataError):
    def __init__(self, line_no, detail=""):
        self.line_no = line_no
        super().__init__(f"malformed vector line {line_no}" + (f": {detail}" if detail else ""))


# features
class UndecodableImage(DataError):
    def __init__(self, path):
        self.path = path
        super().__init__(f"cannot decode image: {path}")


class ProviderUnavailable(RuntimeFailure):
    def __init__(self, name, reason=""):
        self.name = name
        super().__init__(f"no backbone provider registered for '{name}'" + (f" ({reason})" if reason else ""))


class ShapeMismatch(RuntimeFailure):
    pass


class NonSquareGrid(RuntimeFailure):
    def __init__(self, L):
        self.L = L
        super().__init__(f"grid has {L} positions, which is not a perfect square")


class CacheMiss(DataError):
    def __init__(self, image_id):
        self.image_id = image_id
        super().__init__(f"no cache entry for image_id: {image_id}")


class CorruptEntry(DataError):
    def __init__(self, image_id, detail=""):
        self.image_id = image_id
        super().__init__(f"corrupt cache entry for {image_id}" + (f": {detail}" if detail else ""))


# heads / decoder
class LabelOutOfRange(RuntimeFailure):
    def __init__(self, label, k):
        super().__init__(f"label {label} outside [0, {k})")


class EmptyTarget(RuntimeFailure):
    pass


# training
class EmptyDataset(DataError):
    pass


class IncompatibleCheckpoint(RuntimeFailure):
    pass


class PhaseOrderViolation(RuntimeFailure):
    pass


class CheckpointLacksDecoder(RuntimeFailure):
    pass


# metrics
class LengthMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class EmptyReferenceSet(DataError):
    pass


class MissingHypothesis(DataError):
    def __init__(self, image_ids):
        if isinstance(image_ids, str):
            image_ids = [image_ids]
        self.image_ids = list(image_ids)
        shown = ", ".join(self.image_ids[:10])
        more = "" if len(self.image_ids) <= 10 else f" (+{len(self.image_ids) - 10} more)"
        super().__init__(f"missing hypothesis for: {shown}{more}")


# cli / config
class ConfigError(MtlcapError):
    pass
