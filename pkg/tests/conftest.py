# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

from __future__ import annotations

from pathlib import Path

import pytest
import tomli as toml

from fragment_shuffle.randomizers import RandomStream


@pytest.fixture
def pyproject() -> dict:
    """Return the pyproject.toml as a dictionary."""

    pyproject_path = Path(__file__).resolve().parents[1] / "pyproject.toml"
    with open(pyproject_path, "rb") as pyproject_file:
        return toml.load(pyproject_file)


@pytest.fixture
def stream() -> RandomStream:
    """Seeded random stream shared by the Monte-Carlo tests."""
    return RandomStream(20240101)


@pytest.fixture
def tiny_pgm(tmp_path: Path) -> Path:
    """3x2 binary image with luminosities 0, 1, 2, 3, 254, 255."""
    path = tmp_path / "tiny.pgm"
    path.write_bytes(b"P5\n# tiny\n3 2\n255\n" + bytes([0, 1, 2, 3, 254, 255]))
    return path
