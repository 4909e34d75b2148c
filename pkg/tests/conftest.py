import numpy as np
import pytest
from scipy.stats import chisquare

from pohmmkit.data import AlphabetSpec, SequenceDataset
from pohmmkit.hmm import Hmm
from pohmmkit.product import ProductHmm


def random_hmm(rng, alphabet, S, scale=1.0):
    return Hmm(alphabet, rng.normal(size=S) * scale, rng.normal(size=(S, S)) * scale,
               [rng.normal(size=(S, v)) * scale for v in alphabet.cardinalities])


def random_seqs(rng, alphabet, n, T):
    return np.stack([rng.integers(0, v, size=(n, T)) for v in alphabet.cardinalities], axis=2)


def random_dataset(rng, alphabet, n, T):
    return SequenceDataset(alphabet, list(random_seqs(rng, alphabet, n, T)))


def tiny_product(seed=0, S=3):
    """Two experts over two binary dims; T=6 gives 4096 sequences."""
    rng = np.random.default_rng(seed)
    a = AlphabetSpec((2, 2))
    return ProductHmm([random_hmm(rng, a, S, 1.5), random_hmm(rng, a, S, 1.5)])


def seq_codes(seqs, alphabet):
    """Index of each sequence in the oracle's lexicographic enumeration."""
    T = seqs.shape[1]
    radices = np.tile(np.asarray(alphabet.cardinalities), T)
    flat = seqs.reshape(seqs.shape[0], -1)
    code = np.zeros(seqs.shape[0], dtype=np.int64)
    for pos in range(flat.shape[1]):
        code = code * radices[pos] + flat[:, pos]
    return code


def pooled_chisquare(counts, probs, min_expected=5.0):
    """Chi-square p-value after merging every cell with expected count below ``min_expected``."""
    expected = probs * counts.sum()
    small = expected < min_expected
    obs = np.append(counts[~small], counts[small].sum())
    exp = np.append(expected[~small], expected[small].sum())
    if exp[-1] == 0:
        obs, exp = obs[:-1], exp[:-1]
    return chisquare(obs, exp * obs.sum() / exp.sum()).pvalue


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def binary2():
    return AlphabetSpec((2, 2))


_VERDICTS = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py::test_criterion_" in report.nodeid:
        n = int(report.nodeid.split("test_criterion_")[1][:2])
        _VERDICTS[n] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(f"criterion {n}: {_VERDICTS[n]}")
