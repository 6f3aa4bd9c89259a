# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

"""
Respondent datasets: grayscale images read as per-cell respondent counts, power-law
heavy-hitter mixtures and "index,count" CSV files.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fragment_shuffle.errors import PgmFormatError, ReportFormatError
from fragment_shuffle.estimation import HistogramEstimate
from fragment_shuffle.randomizers import RandomStream


logger = logging.getLogger(__name__)

PGM_MAXVAL = 255


@dataclass(frozen=True, eq=False)
class CountsDataset:
    """Number of respondents holding each value of a domain of size k."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size == 0:
            raise ReportFormatError("Counts must be a nonempty vector.")
        if np.any(counts < 0):
            raise ValueError("Counts must be nonnegative.")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def k(self) -> int:
        return self.counts.size

    @property
    def total_n(self) -> int:
        return int(self.counts.sum())

    @property
    def frequencies(self) -> np.ndarray:
        """Fraction of respondents holding each value."""
        return self.counts / max(self.total_n, 1)


@dataclass(frozen=True, eq=False)
class GridDataset(CountsDataset):
    """
    Image cells as values: a cell of luminosity l holds round(scale * l) respondents.

    Counts are stored row-major, width * height entries.
    """

    width: int = 0
    height: int = 0
    scale: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if self.width < 1 or self.height < 1:
            raise ValueError("Grid dimensions must be positive.")
        if self.counts.size != self.width * self.height:
            raise ReportFormatError(
                f"{self.counts.size} counts do not fill a {self.width}x{self.height} grid."
            )
        if not self.scale > 0:
            raise ValueError("Attribute 'scale' must be positive.")


@dataclass(frozen=True)
class PowerLawSpec:
    """
    Mixture of heavy hitters and a p(x) ∝ x^-exponent tail over [0, domain_size).

    :param heavy_hitters: (index, mass) pairs placed on top of the tail.
    """

    domain_size: int
    exponent: float
    heavy_hitters: tuple[tuple[int, float], ...]
    total_n: int

    def __post_init__(self):
        if self.domain_size < 1 or self.total_n < 0:
            raise ValueError("Require domain_size >= 1 and total_n >= 0.")
        if not self.exponent > 0:
            raise ValueError("Attribute 'exponent' must be positive.")
        indices = [index for index, _ in self.heavy_hitters]
        if len(set(indices)) != len(indices) or any(
            not 0 <= index < self.domain_size for index in indices
        ):
            raise ValueError("Heavy hitters must be distinct indices of the domain.")
        masses = [mass for _, mass in self.heavy_hitters]
        if any(mass < 0 for mass in masses) or sum(masses) > 1.0 + 1e-12:
            raise ValueError("Heavy-hitter masses must be nonnegative and sum to <= 1.")

    def pmf(self) -> np.ndarray:
        """Exact mixture probabilities, summing to 1."""
        tail = np.arange(1, self.domain_size + 1, dtype=float) ** -self.exponent
        heavy_mass = sum(mass for _, mass in self.heavy_hitters)
        pmf = (1.0 - heavy_mass) * tail / tail.sum()
        for index, mass in self.heavy_hitters:
            pmf[index] += mass
        return pmf / pmf.sum()


def _token(data: bytes, position: int) -> tuple[bytes, int, int]:
    """Next whitespace separated header token, skipping comments."""
    size = len(data)
    while position < size:
        if data[position : position + 1].isspace():
            position += 1
        elif data[position] == ord("#"):
            while position < size and data[position] not in (0x0A, 0x0D):
                position += 1
        else:
            break
    start = position
    while position < size and not data[position : position + 1].isspace():
        if data[position] == ord("#"):
            break
        position += 1
    if start == position:
        raise PgmFormatError("Unexpected end of PGM data", start)
    return data[start:position], start, position


def _integer(data: bytes, position: int, name: str) -> tuple[int, int, int]:
    token, start, position = _token(data, position)
    if not token.isdigit():
        raise PgmFormatError(f"Invalid {name} {token!r}", start)
    return int(token), start, position


def read_pgm(path: str | Path) -> tuple[int, int, np.ndarray]:
    """
    Read a binary (P5) or ASCII (P2) 8-bit PGM file.

    :return: width, height and the row-major luminosities.
    """
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise PgmFormatError(f"Unsupported magic number {magic!r}", 0)

    width, start, position = _integer(data, 2, "width")
    height, _, position = _integer(data, position, "height")
    if width < 1 or height < 1:
        raise PgmFormatError("Image dimensions must be positive", start)
    maxval, start, position = _integer(data, position, "maxval")
    if maxval != PGM_MAXVAL:
        raise PgmFormatError(f"Expected maxval {PGM_MAXVAL}, found {maxval}", start)

    size = width * height
    if magic == b"P5":
        raster_start = position + 1
        raster = data[raster_start : raster_start + size]
        if len(raster) < size:
            raise PgmFormatError(
                f"Truncated raster: {len(raster)} of {size} bytes",
                raster_start + len(raster),
            )
        return width, height, np.frombuffer(raster, dtype=np.uint8).copy()

    values = np.empty(size, dtype=np.uint8)
    for index in range(size):
        value, start, position = _integer(data, position, "pixel")
        if value > maxval:
            raise PgmFormatError(f"Pixel {value} exceeds maxval", start)
        values[index] = value
    return width, height, values


def load_grid_from_pgm(path: str | Path, scale: float = 1.0) -> GridDataset:
    """
    Load an image as a grid of respondent counts, round(scale * luminosity) per cell.

    Rounding is half to even.
    """
    if not scale > 0:
        raise ValueError("Attribute 'scale' must be positive.")
    width, height, luminosity = read_pgm(path)
    counts = np.rint(scale * luminosity.astype(float)).astype(np.int64)
    logger.debug("Loaded %dx%d image from %s (n=%d).", width, height, path, counts.sum())
    return GridDataset(counts, width=width, height=height, scale=scale)


def write_grid_to_pgm(
    source: GridDataset | HistogramEstimate,
    path: str | Path,
    scale: float | None = None,
    shape: tuple[int, int] | None = None,
) -> Path:
    """
    Write a grid, or a frequency estimate over a grid, as a binary PGM.

    Values are divided by ``scale`` (the dataset scale by default), frequency estimates
    are first multiplied by their respondent count, and luminosities are clamped to
    [0, 255].

    :param shape: (width, height) of the grid, required for estimates.
    """
    if isinstance(source, GridDataset):
        width, height = source.width, source.height
        values = source.counts.astype(float)
        scale = source.scale if scale is None else scale
    else:
        if shape is None:
            raise ValueError("Grid shape is required to write an estimate.")
        width, height = shape
        if source.k != width * height:
            raise ReportFormatError("Estimate length does not match the grid shape.")
        values = source.h_hat * source.n
        scale = 1.0 if scale is None else scale

    luminosity = np.clip(np.rint(values / scale), 0, PGM_MAXVAL).astype(np.uint8)
    path = Path(path)
    with open(path, "wb") as file:
        file.write(f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii"))
        file.write(luminosity.tobytes())
    return path


def write_counts_csv(dataset: CountsDataset, path: str | Path) -> Path:
    """Write ``index,count`` rows under a one-line header."""
    path = Path(path)
    table = np.column_stack([np.arange(dataset.k), dataset.counts])
    np.savetxt(path, table, fmt="%d", delimiter=",", header="index,count", comments="")
    return path


def load_counts_csv(path: str | Path) -> CountsDataset:
    """Read a file written by :func:`write_counts_csv`."""
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    except ValueError as error:
        raise ReportFormatError(f"Malformed counts file {path}: {error}") from error
    if table.shape[1] != 2 or table.shape[0] == 0:
        raise ReportFormatError(f"Counts file {path} must hold 'index,count' rows.")
    indices, values = table[:, 0], table[:, 1]
    if np.any(indices < 0) or len(np.unique(indices)) != len(indices):
        raise ReportFormatError("Counts indices must be distinct and nonnegative.")

    counts = np.zeros(int(indices.max()) + 1, dtype=np.int64)
    counts[indices] = values
    return CountsDataset(counts)


def default_heavy_hitters(
    domain_size: int, count: int = 100, total_mass: float = 0.3
) -> tuple[tuple[int, float], ...]:
    """
    Synthetic heavy hitters: ``count`` evenly spread indices with 1/rank masses.
    """
    count = min(count, domain_size)
    indices = np.unique(np.linspace(0, domain_size - 1, count).astype(int))
    weights = 1.0 / np.arange(1, indices.size + 1)
    masses = total_mass * weights / weights.sum()
    return tuple((int(i), float(m)) for i, m in zip(indices, masses))


def sample_powerlaw(spec: PowerLawSpec, rng: RandomStream) -> CountsDataset:
    """Counts of ``total_n`` i.i.d. draws from the mixture."""
    return CountsDataset(rng.generator.multinomial(spec.total_n, spec.pmf()))


def synthetic_image(
    width: int, height: int, rng: RandomStream, blobs: int = 6
) -> GridDataset:
    """Smooth image made of Gaussian blobs, peaking at luminosity 255."""
    rows, cols = np.mgrid[0:height, 0:width].astype(float)
    image = np.zeros((height, width))
    for _ in range(blobs):
        row, col = rng.generator.uniform(0, height), rng.generator.uniform(0, width)
        radius = rng.generator.uniform(0.08, 0.25) * min(width, height)
        amplitude = rng.generator.uniform(0.3, 1.0)
        image += amplitude * np.exp(
            -((rows - row) ** 2 + (cols - col) ** 2) / (2.0 * radius**2)
        )
    luminosity = np.rint(PGM_MAXVAL * image / image.max()).astype(np.int64)
    return GridDataset(luminosity.ravel(), width=width, height=height, scale=1.0)
