from typing import Dict, List, Optional, Tuple


class ShuffleScanError(Exception):
    """Base class for every error raised by the library."""


# Patterns

class PatternError(ShuffleScanError):
    """A single pattern could not be compiled."""

    def __init__(self, message: str, pattern: str = "", offset: int = 0):
        super().__init__(message)
        self.message = message
        self.pattern = pattern
        self.offset = offset

    def __str__(self) -> str:
        return f"{self.message} at byte {self.offset}"


class RegexSyntaxError(PatternError):
    pass


class UnsupportedFeatureError(PatternError):
    pass


class PatternSetError(ShuffleScanError):
    """One or more patterns of a set failed to parse (or the set was empty)."""

    def __init__(self, errors: List[Tuple[int, PatternError]], lines: Optional[Dict[int, int]] = None):
        self.errors = errors
        self.lines = lines or {}  # pattern index -> rule-file line
        if not errors:
            super().__init__("no patterns")
        else:
            details = "; ".join(f"pattern {index}: {err}" for index, err in errors)
            super().__init__(f"{len(errors)} pattern(s) failed to compile: {details}")


# Capacity

class CapacityError(ShuffleScanError):
    pass


class NfaCapacityError(CapacityError):
    pass


class DeterminizationError(CapacityError):
    pass


class RegionCapacityError(CapacityError):
    pass


# Databases

class DatabaseError(ShuffleScanError):
    pass


class BadMagicError(DatabaseError):
    pass


class UnsupportedVersionError(DatabaseError):
    pass


class TruncatedDatabaseError(DatabaseError):
    pass


class CorruptDatabaseError(DatabaseError):
    pass


# Scanning

class ScanError(ShuffleScanError):
    pass


class StreamMismatchError(ScanError):
    pass


class BatchContractError(ScanError):
    pass
