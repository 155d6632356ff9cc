"""v1 router package: all /api/v1/* endpoints live here.

Files:
  problems.py  examples and problem-file commands (reformulate, compare, check)

Rule: Routers only handle HTTP (request parsing, response shaping).
      All logic delegates to app/services/.
"""
