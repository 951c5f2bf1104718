import pytest

from tiermem.geometry import MemoryGeometry, Unit


def tiny_geometries(dram_rows=8, dram_near=2, pcm_rows=8, pcm_near=2):
    """Eight-page DRAM and PCM units, one frame per row, single rank."""
    dram = MemoryGeometry(Unit.DRAM, 64 * 2 * 8 * dram_rows * 4, channels=2, ranks_per_channel=1,
                          banks_per_rank=8, groups_per_bank=1, tiles_per_group=1,
                          rows_per_tile=dram_rows, near_rows=dram_near)
    pcm = MemoryGeometry(Unit.PCM, 64 * 4 * 8 * pcm_rows * 2, channels=4, ranks_per_channel=1,
                         banks_per_rank=8, groups_per_bank=1, tiles_per_group=1,
                         rows_per_tile=pcm_rows, near_rows=pcm_near)
    return {Unit.DRAM: dram, Unit.PCM: pcm}


@pytest.fixture
def tiny():
    return tiny_geometries()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
