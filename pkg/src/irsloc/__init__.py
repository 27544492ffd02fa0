"""IRS-aided cooperative localization: CRLB, time allocation and BS association."""

__version__ = "0.1.0"
