"""Pydantic schemas package.

Folder intent:
  common.py        CamelModel base + HealthResponse (all schemas inherit CamelModel)
  problem_file.py  validated problem-file contents
  reports.py       report models returned by services, CLI and API
"""
