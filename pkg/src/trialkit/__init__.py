"""Clinical trial registry curation, instruction dataset building and LLM benchmarking."""

from __future__ import annotations

__version__ = "0.1.0"
