"""Shared number formatting for CSV output."""


def fmt(x):
    """Round-trippable 17-significant-digit decimal; negative zero prints as 0."""
    return f"{float(x) + 0.0:.17g}"
