"""Discrete toolkit for principal U(1)/SU(2) bundles given by cocycles over covers."""
