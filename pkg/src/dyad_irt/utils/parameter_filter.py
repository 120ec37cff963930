import fnmatch
from collections.abc import Iterable


class ParameterFilter:
    """Utility class for selecting parameter names with shell-style patterns."""

    @staticmethod
    def is_match(name: str, patterns: Iterable[str]) -> bool:
        """Check if a parameter name matches any of the given patterns."""
        return any(fnmatch.fnmatchcase(name, pattern) for pattern in patterns)

    @staticmethod
    def include(names: Iterable[str], patterns: list[str] | None) -> list[str]:
        """Return names matching any pattern, in their original order. No patterns keeps everything."""
        if not patterns:
            return list(names)
        return [name for name in names if ParameterFilter.is_match(name, patterns)]
