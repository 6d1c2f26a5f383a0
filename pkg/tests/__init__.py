"""
Test suite for the storyline toolkit
"""
