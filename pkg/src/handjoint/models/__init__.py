"""Pydantic models of the files handjoint reads and writes."""
