"""
Test suite for pymcgs
"""
