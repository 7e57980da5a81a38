"""
Backend package for the eductive runtime
"""
