import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ifs_julia.cli import corpus_names, load_corpus  # noqa: E402
from ifs_julia.ifs_core import ifs_from_dict  # noqa: E402

OSC_SYSTEMS = ("cantor_third", "tri_quarter")
ALL_SYSTEMS = ("cantor_third", "tri_quarter", "overlap_half", "four_map")


@functools.lru_cache(maxsize=None)
def corpus_ifs(name):
    return ifs_from_dict(load_corpus(name))


@functools.lru_cache(maxsize=None)
def corpus_semigroup(name):
    from ifs_julia.semigroup import build_semigroup
    return build_semigroup(corpus_ifs(name))


@functools.lru_cache(maxsize=None)
def corpus_uqr(name):
    from ifs_julia.uqr import build_uqr, plan_uqr
    return build_uqr(plan_uqr(corpus_ifs(name)))


@pytest.fixture(scope="session")
def corpus():
    assert set(corpus_names()) == set(ALL_SYSTEMS)
    return corpus_ifs


@pytest.fixture(scope="session")
def semigroup_of():
    return corpus_semigroup


@pytest.fixture(scope="session")
def uqr_of():
    return corpus_uqr


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
