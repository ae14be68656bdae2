"""
Test suite for recurnet
"""
