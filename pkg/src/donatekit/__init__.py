"""donatekit: local-first data donation toolkit.

Parses data download packages on the respondent's own device, transforms
them into minimal derived research variables, collects per-variable
informed consent, packages only what was approved, and gives researchers
the linkage, validation, and error-accounting tools to audit the result.
"""

__version__ = "0.1.0"
