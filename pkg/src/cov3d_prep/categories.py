"""Scan categories shared by the loss, folds and metrics modules."""

from __future__ import annotations

import enum


class Category(enum.IntEnum):
    """Ground-truth category of a scan.

    Values 0-4 are the class indices of the five model outputs.
    ``POSITIVE_UNKNOWN`` marks a COVID-19 positive scan without a severity
    annotation; it has no output index of its own.
    """

    POSITIVE_UNKNOWN = -1
    NEGATIVE = 0
    MILD = 1
    MODERATE = 2
    SEVERE = 3
    CRITICAL = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def is_positive(self) -> bool:
        return self is not Category.NEGATIVE

    @property
    def has_severity(self) -> bool:
        return self.value >= 1

    @classmethod
    def parse(cls, text: str) -> Category:
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown category {text!r}") from None


POSITIVE_UNKNOWN = Category.POSITIVE_UNKNOWN
SEVERITIES = (Category.MILD, Category.MODERATE, Category.SEVERE, Category.CRITICAL)
NUM_CLASSES = 5
