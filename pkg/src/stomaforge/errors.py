"""Exception hierarchy.

Every error carries a short ``code`` so the command line can emit a
machine-readable payload without string matching on messages.
"""


class StomaforgeError(ValueError):
    code = "StomaforgeError"

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self):
        out = {"error": self.code, "message": str(self)}
        out.update({k: v for k, v in self.details.items() if v is not None})
        return out


class MalformedJSONError(StomaforgeError):
    code = "MalformedJson"


class MissingFieldError(StomaforgeError):
    code = "MissingField"

    def __init__(self, path):
        super().__init__(f"missing required field: {path}", path=path)
        self.path = path


class DanglingReferenceError(StomaforgeError):
    code = "DanglingReference"

    def __init__(self, record, target):
        super().__init__(f"{record} references missing {target}", record=record, target=target)
        self.record = record
        self.target = target


class DuplicateIdError(StomaforgeError):
    code = "DuplicateId"

    def __init__(self, kind, id_):
        super().__init__(f"duplicate {kind} id {id_}", kind=kind, id=id_)
        self.kind = kind
        self.id = id_


class ScoreOutOfRangeError(StomaforgeError):
    code = "ScoreOutOfRange"


class DegeneratePolygonError(StomaforgeError):
    code = "DegeneratePolygon"


class CorruptRLEError(StomaforgeError):
    code = "CorruptRle"


class DimensionMismatchError(StomaforgeError):
    code = "DimensionMismatch"


class PatchLargerThanFrameError(StomaforgeError):
    code = "PatchLargerThanFrame"


class MissingThresholdError(StomaforgeError):
    code = "MissingThreshold"

    def __init__(self, category):
        super().__init__(f"no threshold for category {category!r}", category=category)
        self.category = category


class CategoryMismatchError(StomaforgeError):
    code = "CategoryMismatch"


class OutOfBoundsError(StomaforgeError):
    code = "OutOfBounds"


class UnparseableFilenameError(StomaforgeError):
    code = "UnparseableFilename"


class UnknownImageIdError(StomaforgeError):
    code = "UnknownImageId"


class OverlappingSplitsError(StomaforgeError):
    code = "OverlappingSplits"
