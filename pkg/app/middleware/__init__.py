"""HTTP middleware.

Files:
  request_log.py  per-request timing log
"""
