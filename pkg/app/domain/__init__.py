"""Domain package: expressions and the programs built from them.

Folder intent:
  expr.py     VarSpace, Point and the polynomial expression tree
  problem.py  Nlp, BilevelProblem, polyhedra and reformulated programs
"""
