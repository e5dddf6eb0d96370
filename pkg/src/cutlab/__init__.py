"""cutlab: a desk-scale laboratory for learning cutting-plane selection.

A self-contained LP/cut engine (bounded-variable simplex, tableau and cover
separators, budgeted branch-and-bound), hierarchical sequence/set selection
policies with their score-function and clipped-surrogate trainers, a
finitely terminating lexicographic cutting-plane algorithm, and order-rule
extraction, plus instance generators and an experiment CLI.
"""

__version__ = "0.1.0"
