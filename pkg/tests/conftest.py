import numpy as np
import pytest

from pgket import data
from pgket.numerics import SeededRng

_ACCEPTANCE = []


def write_digits_idx(directory):
    """scikit-learn's bundled 8x8 handwritten digits, rescaled to 0..255 and stored as IDX."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    images = np.rint(digits.images * (255.0 / 16.0)).astype(np.uint8)
    data.write_idx(directory / "train-images-idx3-ubyte", images)
    data.write_idx(directory / "train-labels-idx1-ubyte", digits.target.astype(np.uint8))
    return directory


@pytest.fixture(scope="session")
def digits_dir(tmp_path_factory):
    return write_digits_idx(tmp_path_factory.mktemp("digits"))


@pytest.fixture
def rng():
    return SeededRng(1234)


@pytest.fixture
def acceptance_report():
    def report(number, title, passed, detail=""):
        _ACCEPTANCE.append(f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {title}  {detail}")
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
