"""Utilities module for reporting attack results."""
