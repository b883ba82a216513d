"""
Test suite for the AutoCF experiment engine.
"""
