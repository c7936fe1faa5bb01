import numpy as np
import pytest

from rfnet.kernels import get_backend


def _backends():
    params = [pytest.param("python", id="python")]
    try:
        get_backend("cython")
        params.append(pytest.param("cython", id="cython"))
    except ImportError:
        params.append(pytest.param("cython", id="cython",
                                   marks=pytest.mark.skip(reason="compiled kernels not built")))
    return params


@pytest.fixture(params=_backends())
def backend(request):
    return get_backend(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, k, shift=1.0):
    A = rng.standard_normal((k, k))
    return A @ A.T + shift * np.eye(k)


# -- acceptance summary --------------------------------------------------------

_ACCEPTANCE = {}


class _Recorder:
    def __call__(self, number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def record():
    """Record one acceptance criterion; the terminal summary lists them all."""
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
