"""Exception hierarchy shared by every stage of the pipeline."""


class MedmatchError(Exception):
    """Base class for all errors raised by medmatch."""


class ConfigError(MedmatchError):
    pass


# ingest

class FileNotReadable(MedmatchError):
    def __init__(self, path, reason=""):
        self.path = str(path)
        self.reason = reason
        super().__init__(f"cannot read {self.path}" + (f": {reason}" if reason else ""))


class MalformedLine(MedmatchError):
    def __init__(self, line_number: int, content: str):
        self.line_number = line_number
        self.content = content
        super().__init__(f"line {line_number}: not a PMID: {content!r}")


class InvalidPmid(MedmatchError, ValueError):
    def __init__(self, raw):
        self.raw = raw
        super().__init__(f"invalid PMID: {raw!r}")


class InvalidUt(MedmatchError, ValueError):
    def __init__(self, raw):
        self.raw = raw
        super().__init__(f"invalid WoS UT: {raw!r}")


# query builder

class EmptyInput(MedmatchError, ValueError):
    pass


# url template

class NotAUrl(MedmatchError, ValueError):
    pass


class MissingDocParam(MedmatchError, ValueError):
    pass


class MalformedDocParam(MedmatchError, ValueError):
    pass


# fetcher

class FetchFailed(MedmatchError):
    """A document could not be retrieved.

    ``status`` is the last HTTP status seen, or None when the last attempt
    failed at the transport level (``reason`` then carries the error text).
    """

    def __init__(self, doc_index: int, status=None, reason: str = "", attempts: int = 1):
        self.doc_index = doc_index
        self.status = status
        self.reason = reason
        self.attempts = attempts
        what = f"HTTP {status}" if status is not None else (reason or "transport error")
        if status is not None and reason:
            what += f" ({reason})"
        super().__init__(f"doc {doc_index}: {what} after {attempts} attempt(s)")


class HardStop(FetchFailed):
    """The server refused access (HTTP 403); the whole run must stop."""


# page parser

class MalformedMarker(MedmatchError, ValueError):
    def __init__(self, line: str, reason: str = ""):
        self.line = line
        self.reason = reason
        shown = line if len(line) <= 120 else line[:117] + "..."
        super().__init__(f"malformed marker{': ' + reason if reason else ''} in line {shown!r}")


# match store

class StoreIOError(MedmatchError, OSError):
    pass


class DuplicateDocIndex(MedmatchError, ValueError):
    def __init__(self, doc_index: int):
        self.doc_index = doc_index
        super().__init__(f"doc index {doc_index} is already recorded")


class CorruptTableLine(MedmatchError, ValueError):
    def __init__(self, line_number: int, content: str = "", path=None):
        self.line_number = line_number
        self.content = content
        self.path = path
        where = f"{path}:" if path else "line "
        super().__init__(f"{where}{line_number}: unreadable match row {content!r}")


# mock service

class BindFailure(MedmatchError, OSError):
    pass
