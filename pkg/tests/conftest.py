import numpy as np
import pytest

from ood_complexity.data import Dataset, ImageTensor, synth_constant, synth_noise


@pytest.fixture(scope="session")
def noise_ds():
    return synth_noise(8, seed=1234)


@pytest.fixture(scope="session")
def constant_ds():
    return synth_constant(8, seed=4321)


def gradient_image(dx: int = 3, dy: int = 5, offset: int = 0) -> ImageTensor:
    y, x = np.mgrid[0:32, 0:32]
    planes = [(offset + c * 40 + dx * x + dy * y) % 256 for c in range(3)]
    return ImageTensor(np.stack(planes).astype(np.uint8))


def random_images(n: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    return Dataset.from_array("rand", rng.integers(0, 256, size=(n, 3, 32, 32), dtype=np.uint8))


_ACCEPTANCE: list[tuple[int, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance line, then assert it so pytest sees the same verdict."""
    def record(number: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE.append((number, bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, f"criterion {number}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_ACCEPTANCE, key=lambda t: t[0]):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
