"""Suite-wide solution audit.

Every assignment any solver returns during the test run is re-checked by the
independent feasibility checker before the calling test sees it, and the tally
is exposed so the acceptance suite can assert the audit actually fired.  The
wrappers are installed at collection time, before any test module binds the
solver names.
"""
from __future__ import annotations

import importlib

# the package re-exports solve() as a top-level function, which shadows the
# submodule attribute that `import lineage_ilp.solve as ...` would bind
pipeline_mod = importlib.import_module("lineage_ilp.pipeline")
solve_mod = importlib.import_module("lineage_ilp.solve")

SOLUTION_AUDIT = {"solve": 0, "greedy": 0, "bruteforce": 0}
AUDIT_VIOLATIONS: list[str] = []


def _audit(instance, result, which: str) -> None:
    if result.x is None:
        return
    bad = solve_mod.check_solution(instance, result.x)
    if result.objective is not None:
        direct = solve_mod.objective_value(instance, result.x)
        if abs(direct - result.objective) > 1e-9 + 1e-9 * abs(direct):
            bad.append(
                f"reported objective {result.objective!r} != costs @ x = {direct!r}"
            )
    if bad:
        AUDIT_VIOLATIONS.extend(f"{which}: {b}" for b in bad)
        raise AssertionError(f"{which} returned a bad solution: {bad}")
    SOLUTION_AUDIT[which] += 1


_solve = solve_mod.solve
_greedy = solve_mod.solve_greedy
_brute = solve_mod.solve_bruteforce


def _checked_solve(instance, **kwargs):
    result = _solve(instance, **kwargs)
    _audit(instance, result, "solve")
    return result


def _checked_greedy(graph, varmap):
    result = _greedy(graph, varmap)
    instance, _ = solve_mod.formulate(graph)
    _audit(instance, result, "greedy")
    return result


def _checked_bruteforce(instance, *args, **kwargs):
    result = _brute(instance, *args, **kwargs)
    _audit(instance, result, "bruteforce")
    return result


solve_mod.solve = _checked_solve
solve_mod.solve_greedy = _checked_greedy
solve_mod.solve_bruteforce = _checked_bruteforce
# the pipeline imports the solver entry points by name
pipeline_mod.solve = _checked_solve
pipeline_mod.solve_greedy = _checked_greedy
