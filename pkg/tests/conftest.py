import numpy as np
import pytest

from thmm import kernels
from thmm.corpus import DepTree
from thmm.model import ModelMeta, init_random
from thmm.synthetic import dirichlet_params, sample_corpus


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    prev = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev.name)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_generator():
    rng = np.random.default_rng(7)
    return dirichlet_params(ModelMeta(4, 12, 3), rng, trans_conc=0.3, emis_conc=0.2)


@pytest.fixture(scope="session")
def small_corpus(small_generator):
    trees, _ = sample_corpus(small_generator, 200, np.random.default_rng(8))
    return trees


@pytest.fixture
def example_tree():
    # six tokens rooted at token 3, which has two dependents
    return DepTree.from_arrays([0, 1, 2, 3, 4, 5], [0, 1, 2, 3, 0, 1],
                               [2, 3, 0, 3, 6, 4])


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
