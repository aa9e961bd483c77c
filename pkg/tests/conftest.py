from functools import lru_cache

import pytest

from pointscatter import TorusSpec, build_norm_table

SQUARE = TorusSpec.square()
# a^2 = sqrt(2): a^4 = 2 is rational, so this lattice is rational
ROOT2 = TorusSpec.from_strings("sqrt(2)")
# a^2 = 2**(1/4): a^4 = sqrt(2) is irrational
QUARTIC = TorusSpec.from_strings("irr:1.1892071150027210667174999705604759152929720924638")
GENERIC3 = TorusSpec.from_strings("irr:1.4142135623730950488016887242096980785696718753769",
                                  "irr:1.7320508075688772935274463415058723669428052538104")


@lru_cache(maxsize=None)
def cached_table(torus: TorusSpec, cutoff: float):
    return build_norm_table(torus, cutoff)


@pytest.fixture(scope="session")
def table():
    return cached_table


def pytest_terminal_summary(terminalreporter):
    import sys
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(module.RESULTS, key=lambda k: (int(str(k).rstrip("b")), str(k))):
        terminalreporter.write_line(module.RESULTS[key])
