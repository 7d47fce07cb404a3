"""Physically interpretable world models from weak supervision."""
