import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tstep_surveillance.config import from_dict, load_default  # noqa: E402
from tstep_surveillance.lattice_stats import precompute_all  # noqa: E402


@pytest.fixture(scope="session")
def default_cfg():
    return load_default()


@pytest.fixture(scope="session")
def default_stats(default_cfg):
    cfg = default_cfg
    return precompute_all(cfg.lattice, cfg.sources, cfg.target_speed, cfg.quadrature_n, cfg.bin_width)


@pytest.fixture(scope="session")
def small_cfg():
    """A 200 x 160 zone with coarse quadrature; cheap to precompute."""
    return from_dict(
        {
            "zone": {"width": 200, "height": 160},
            "lattice": {"cell_size": 10, "fov_side": 40},
            "sources": {"count": 8, "offset": 10},
            "sensors": {"count": 3},
            "steps": 60,
            "quadrature_n": 512,
        }
    )


@pytest.fixture(scope="session")
def small_stats(small_cfg):
    cfg = small_cfg
    return precompute_all(cfg.lattice, cfg.sources, cfg.target_speed, cfg.quadrature_n, cfg.bin_width)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
