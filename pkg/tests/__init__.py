"""
Test suite for the casimir_cusp package
"""
