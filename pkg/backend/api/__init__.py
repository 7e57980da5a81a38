"""
API package: instance control plane and its HTTP client
"""
