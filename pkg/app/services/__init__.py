"""Services package: all workbench logic lives here, never in routers.

Files:
  parser.py       s-expressions, problem files and point literals
  calculus.py     evaluation, gradients, Hessians and convexity certificates
  lp.py / polyhedra.py / solver.py   LP, vertex enumeration and convex solves
  lower_level.py  L, φ, Ψ and Λ of the lower level
  duality.py / reform.py / cq.py / verify.py   the reformulation toolkit
  catalog.py / examples.py   built-in problems and the worked-example suite
  commands.py / report.py    CLI/API commands and report rendering

Rule: no FastAPI imports in services.
"""
