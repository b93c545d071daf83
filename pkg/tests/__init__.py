"""
Test suite for the graphon chaos laboratory
"""
