"""Execution-grounded ranking rewards and GRPO tooling for code generation."""

__version__ = "0.1.0"
