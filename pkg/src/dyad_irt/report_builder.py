from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .model import Indeterminate

if TYPE_CHECKING:
    from collections.abc import Sequence

    import pandas as pd


@dataclass
class MarkdownSection:
    title: str
    content: str = ""
    heading_level: int = 2

    def render(self) -> str:
        """Render the section as markdown."""
        heading = "#" * self.heading_level
        if self.content:
            return f"{heading} {self.title}\n\n{self.content}"
        return f"{heading} {self.title}"


def format_value(value: object, digits: int = 4) -> str:
    if isinstance(value, Indeterminate):
        return "indeterminate"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.{digits}f}"
    return str(value)


def markdown_table(frame: pd.DataFrame, digits: int = 4) -> str:
    """Pipe table of a data frame; floats at fixed precision so the text is deterministic."""
    header = "| " + " | ".join(str(c) for c in frame.columns) + " |"
    rule = "|" + "|".join("---" for _ in frame.columns) + "|"
    rows = [
        "| " + " | ".join(format_value(_plain(v), digits) for v in row) + " |"
        for row in frame.itertuples(index=False, name=None)
    ]
    return "\n".join([header, rule, *rows])


def _plain(value: object) -> object:
    # numpy scalars render like their Python counterparts
    item = getattr(value, "item", None)
    return item() if callable(item) and not isinstance(value, Indeterminate) else value


class ReportBuilder:
    """Builds the markdown text reports written next to run outputs."""

    def __init__(self, title: str) -> None:
        self.sections: list[MarkdownSection] = [MarkdownSection(title=title, heading_level=1)]

    def add_text(self, title: str, text: str, *, heading_level: int = 2) -> None:
        self.sections.append(MarkdownSection(title=title, content=text.strip(), heading_level=heading_level))

    def add_facts(self, title: str, facts: Sequence[tuple[str, object]]) -> None:
        """Add a bullet list of ``label: value`` lines."""
        content = "\n".join(f"- **{label}:** {format_value(value)}" for label, value in facts)
        self.sections.append(MarkdownSection(title=title, content=content))

    def add_table(self, title: str, frame: pd.DataFrame, *, digits: int = 4, empty: str = "(none)") -> None:
        content = markdown_table(frame, digits) if len(frame) else empty
        self.sections.append(MarkdownSection(title=title, content=content))

    def build(self) -> str:
        """Build the final report."""
        return "\n\n".join(section.render() for section in self.sections) + "\n"
