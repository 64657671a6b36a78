"""Shared diagnostic machinery: source spans and the error hierarchy root."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Span:
    """Half-open source region, 1-based lines and columns."""

    line: int
    col: int
    end_line: int = 0
    end_col: int = 0

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


class ClampError(Exception):
    """Base class for every diagnostic the pipeline can raise.

    Carries an optional source span so front ends can render
    ``file:line:col: message``.
    """

    def __init__(self, message: str, span: Span | None = None):
        super().__init__(message)
        self.message = message
        self.span = span

    def diagnostic(self, filename: str = "<input>") -> str:
        if self.span is not None:
            return f"{filename}:{self.span.line}:{self.span.col}: {self.message}"
        return f"{filename}: {self.message}"
