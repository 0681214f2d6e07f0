"""Recursive hand-landmark, rigid-body and joint estimation."""
