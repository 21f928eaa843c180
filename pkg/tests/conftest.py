import random
from pathlib import Path

import pytest
from hypothesis import strategies as st

from gpae.tree import PRIMITIVES, Const, ExprTree, Feature, Func

FIXTURES = Path(__file__).parent / "fixtures"
MNIST_TRAIN = FIXTURES / "mnist5k-train-images-idx3-ubyte.gz"
MNIST_TEST = FIXTURES / "mnist5k-test-images-idx3-ubyte.gz"


def nodes(n_visible: int, max_depth: int = 4):
    """Hypothesis strategy for raw node structures of bounded depth."""
    leaf = st.one_of(
        st.builds(Const, st.floats(-10, 10, allow_nan=False)),
        st.builds(Feature, st.integers(0, n_visible - 1)),
    )

    def grow(depth):
        if depth == 0:
            return leaf
        child = grow(depth - 1)
        return st.one_of(
            leaf,
            st.builds(lambda p, a, b: Func(p, (a,) if p.arity == 1 else (a, b)),
                      st.sampled_from(PRIMITIVES), child, child),
        )

    return grow(max_depth)


def trees(n_visible: int = 4, max_depth: int = 4):
    return nodes(n_visible, max_depth).map(lambda r: ExprTree(r, tuple(range(n_visible)), max_depth))


@pytest.fixture
def rng():
    return random.Random(1234)
