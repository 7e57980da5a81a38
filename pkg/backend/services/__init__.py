"""
Services package for the eductive runtime
"""
