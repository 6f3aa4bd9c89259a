# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''
#  This file is part of fragment-shuffle-app package.                               '
#                                                                                   '
#  fragment-shuffle-app is distributed under the terms and conditions of the MIT    '
#  License (see LICENSE file at the root of this source code package).              '
# '''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''''

"""
LDP-SGD for convex empirical risk minimisation.

Clients clip their gradient and report a single unit-sphere direction; the server
averages the shuffled directions, debiases them and takes a projected step.
"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln
from tqdm import tqdm

from fragment_shuffle.accounting import (
    CentralGuarantee,
    SgdPrivacyQuery,
    flip_probability,
    ldp_sgd_central,
)
from fragment_shuffle.errors import PreconditionError
from fragment_shuffle.randomizers import RandomStream, debias_factors
from fragment_shuffle.shuffler import ShufflerInstance, ingest, release_shuffled


logger = logging.getLogger(__name__)

STEP_SCHEDULES = ("decaying", "constant")


@dataclass(frozen=True)
class SgdConfig:  # pylint: disable=too-many-instance-attributes
    """
    LDP-SGD parameters.

    :param d: Model dimension.
    :param clip_norm: Clipping norm L.
    :param diameter: Radius of the l2 constraint ball.
    :param epsilon_le: Local budget of each epoch report.
    :param epochs: Number of epochs T.
    :param tau: Reports per respondent and epoch.
    :param seed: Root seed of the run.
    :param delta: Central delta of the accounting.
    :param step_scale: Step constant c of c/sqrt(t); derived when omitted.
    :param step_schedule: "decaying" for steps c/sqrt(t), "constant" for the fixed step
        ||C||·sqrt(n)/(L·sqrt(d))·(e^ε-1)/(e^ε+1); ``step_scale`` overrides either constant.
    """

    d: int
    clip_norm: float
    diameter: float
    epsilon_le: float
    epochs: int
    tau: int = 1
    seed: int = 0
    delta: float = 1e-5
    step_scale: float | None = None
    step_schedule: str = "decaying"

    def __post_init__(self):
        if self.d < 1 or self.epochs < 1 or self.tau < 1:
            raise ValueError("Attributes 'd', 'epochs' and 'tau' must be positive counts.")
        if not (self.clip_norm > 0 and self.diameter > 0):
            raise ValueError("Attributes 'clip_norm' and 'diameter' must be positive.")
        if not self.epsilon_le >= 0:
            raise ValueError("Attribute 'epsilon_le' must be nonnegative.")
        if self.step_scale is not None and not self.step_scale > 0:
            raise ValueError("Attribute 'step_scale' must be positive.")
        if self.step_schedule not in STEP_SCHEDULES:
            raise ValueError(
                f"Attribute 'step_schedule' must be one of {STEP_SCHEDULES}, "
                f"not {self.step_schedule!r}."
            )


@dataclass(frozen=True, eq=False)
class ModelState:
    """Model iterate, kept inside the constraint ball."""

    theta: np.ndarray


@dataclass(frozen=True, eq=False)
class GradientReport:
    """Unit-norm gradient direction sent by one client."""

    direction: np.ndarray

    def __post_init__(self):
        if abs(float(np.linalg.norm(self.direction)) - 1.0) > 1e-9:
            raise ValueError("Gradient reports must have unit norm.")


@dataclass(frozen=True, eq=False)
class SgdData:
    """Features (n, d) and labels (n,) of a training set."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("Features must be (n, d) with one label per row.")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class SgdRun:
    """Result of :func:`run_ldp_sgd`."""

    model: ModelState
    guarantee: CentralGuarantee | None
    losses: list[float] = field(default_factory=list)


class LossFamily(ABC):
    """Convex loss with per-example gradients."""

    @abstractmethod
    def value(self, theta: np.ndarray, data: SgdData) -> float:
        """Mean loss over the data."""

    @abstractmethod
    def gradients(self, theta: np.ndarray, data: SgdData) -> np.ndarray:
        """Per-example gradients, shape (n, d)."""


class LogisticLoss(LossFamily):
    """log(1 + exp(-y <theta, x>)) with labels in {-1, +1}."""

    def value(self, theta: np.ndarray, data: SgdData) -> float:
        margins = data.labels * (data.features @ theta)
        return float(np.mean(np.logaddexp(0.0, -margins)))

    def gradients(self, theta: np.ndarray, data: SgdData) -> np.ndarray:
        margins = data.labels * (data.features @ theta)
        weights = -data.labels * expit(-margins)
        return weights[:, None] * data.features


class SquaredLoss(LossFamily):
    """(<theta, x> - y)^2 / 2."""

    def value(self, theta: np.ndarray, data: SgdData) -> float:
        residuals = data.features @ theta - data.labels
        return float(np.mean(residuals**2) / 2.0)

    def gradients(self, theta: np.ndarray, data: SgdData) -> np.ndarray:
        residuals = data.features @ theta - data.labels
        return residuals[:, None] * data.features


def clip_gradient(gradient: np.ndarray, clip_norm: float) -> np.ndarray:
    """Scale ``gradient`` by min(1, L/||g||)."""
    if not clip_norm > 0:
        raise ValueError("Clipping norm must be positive.")
    gradient = np.asarray(gradient, dtype=float)
    norm = float(np.linalg.norm(gradient))
    if norm <= clip_norm:
        return gradient.copy()
    return gradient * (clip_norm / norm)


def project_ball(theta: np.ndarray, diameter: float) -> np.ndarray:
    """l2 projection onto the ball of radius ``diameter``."""
    if not diameter > 0:
        raise ValueError("Attribute 'diameter' must be positive.")
    theta = np.asarray(theta, dtype=float)
    norm = float(np.linalg.norm(theta))
    if norm <= diameter:
        return theta.copy()
    return theta * (diameter / norm)


def sample_unit_sphere(d: int, rng: RandomStream, size: int = 1) -> np.ndarray:
    """Uniform directions of S^{d-1} from normalised Gaussians, shape (size, d)."""
    draws = rng.generator.standard_normal((size, d))
    norms = np.linalg.norm(draws, axis=1, keepdims=True)
    while np.any(norms == 0):
        zero = norms[:, 0] == 0
        draws[zero] = rng.generator.standard_normal((int(zero.sum()), d))
        norms = np.linalg.norm(draws, axis=1, keepdims=True)
    return draws / norms


def client_directions(
    gradients: np.ndarray, cfg: SgdConfig, rng: RandomStream
) -> np.ndarray:
    """
    Randomized unit directions for a batch of gradients, shape (n, d).

    Row-wise equivalent of :func:`ldp_sgd_client`. A zero gradient uses a uniformly
    random axis, which keeps the report mean at 0.
    """
    gradients = np.atleast_2d(np.asarray(gradients, dtype=float))
    n, d = gradients.shape
    norms = np.linalg.norm(gradients, axis=1)
    scale = np.minimum(1.0, cfg.clip_norm / np.where(norms > 0, norms, 1.0))
    clipped_norms = norms * scale

    axes = np.zeros_like(gradients)
    moving = norms > 0
    axes[moving] = gradients[moving] / norms[moving, None]
    if not np.all(moving):
        picks = rng.generator.integers(d, size=int((~moving).sum()))
        axes[np.flatnonzero(~moving), picks] = 1.0

    positive = rng.generator.random(n) < 0.5 + clipped_norms / (2.0 * cfg.clip_norm)
    z = np.where(positive, 1.0, -1.0)[:, None] * axes

    v = sample_unit_sphere(d, rng, n)
    signs = np.sign(np.sum(z * v, axis=1))
    signs[signs == 0] = 1.0
    flips = rng.generator.random(n) < flip_probability(cfg.epsilon_le)
    signs[flips] *= -1.0

    return signs[:, None] * v


def ldp_sgd_client(
    gradient: np.ndarray, cfg: SgdConfig, rng: RandomStream
) -> GradientReport:
    """Unit-sphere report of one clipped gradient."""
    return GradientReport(client_directions(gradient, cfg, rng)[0])


def report_fragment_batch(
    gradient: np.ndarray, cfg: SgdConfig, rng: RandomStream
) -> list[GradientReport]:
    """tau independent reports of the same gradient."""
    tiled = np.tile(np.asarray(gradient, dtype=float), (cfg.tau, 1))
    return [GradientReport(row) for row in client_directions(tiled, cfg, rng)]


def debias_constant(d: int, epsilon_le: float, clip_norm: float) -> float:
    """
    Factor B with B·E[report] = clip(g).

    B = (L√π/2)·d·Γ((d+1)/2)/Γ(d/2+1)·(e^ε+1)/(e^ε−1)
    """
    if d < 1 or not clip_norm > 0:
        raise ValueError("Require d >= 1 and clip_norm > 0.")
    coth, _ = debias_factors(epsilon_le)
    gamma_ratio = math.exp(gammaln((d + 1) / 2.0) - gammaln(d / 2.0 + 1.0))
    return clip_norm * math.sqrt(math.pi) / 2.0 * d * gamma_ratio * coth


def sgd_step_scale(cfg: SgdConfig, n: int) -> float:
    """Step constant c = ||C||/G with G² = L² + B²/(n·tau)."""
    bias = debias_constant(cfg.d, cfg.epsilon_le, cfg.clip_norm)
    return cfg.diameter / math.sqrt(cfg.clip_norm**2 + bias**2 / (n * cfg.tau))


def constant_step_size(cfg: SgdConfig, n: int) -> float:
    """Fixed step η = ||C||·sqrt(n)/(L·sqrt(d))·(e^ε-1)/(e^ε+1)."""
    coth, _ = debias_factors(cfg.epsilon_le)
    return cfg.diameter * math.sqrt(n) / (cfg.clip_norm * math.sqrt(cfg.d) * coth)


def step_size(cfg: SgdConfig, n: int, epoch: int) -> float:
    """Step of ``epoch`` (1-based) under ``cfg.step_schedule``."""
    if cfg.step_schedule == "constant":
        return cfg.step_scale or constant_step_size(cfg, n)
    return (cfg.step_scale or sgd_step_scale(cfg, n)) / math.sqrt(epoch)


def _shuffle_directions(directions: np.ndarray, rng: RandomStream) -> np.ndarray:
    instance = ShufflerInstance(0, [0])
    for respondent, row in enumerate(directions):
        ingest(instance, 0, row.tobytes(), respondent)
    released = release_shuffled(instance, 0, rng)
    return np.vstack([np.frombuffer(payload, dtype=float) for payload in released])


def ldp_sgd_server(
    data: SgdData, loss: LossFamily, cfg: SgdConfig, losses: list[float] | None = None
) -> ModelState:
    """
    Projected LDP-SGD with the step schedule of ``cfg``.

    :param data: Training set, one respondent per example.
    :param loss: Convex loss family.
    :param cfg: Run parameters.
    :param losses: Optional list receiving the loss after every epoch.
    """
    n = len(data)
    if n == 0:
        raise ValueError("Cannot train on an empty dataset.")
    if data.features.shape[1] != cfg.d:
        raise ValueError(f"Features have dimension {data.features.shape[1]}, not {cfg.d}.")

    stream = RandomStream(cfg.seed)
    bias = debias_constant(cfg.d, cfg.epsilon_le, cfg.clip_norm)
    theta = np.zeros(cfg.d)

    for epoch in tqdm(range(1, cfg.epochs + 1), desc="LDP-SGD", disable=None):
        gradients = np.repeat(loss.gradients(theta, data), cfg.tau, axis=0)
        reports = client_directions(gradients, cfg, stream.child(epoch, 0))
        shuffled = _shuffle_directions(reports, stream.child(epoch, 1))
        noisy = bias * shuffled.mean(axis=0)
        theta = project_ball(theta - step_size(cfg, n, epoch) * noisy, cfg.diameter)
        if losses is not None:
            losses.append(loss.value(theta, data))

    return ModelState(theta)


def run_ldp_sgd(data: SgdData, loss: LossFamily, cfg: SgdConfig) -> SgdRun:
    """Train with :func:`ldp_sgd_server` and attach the central guarantee of the run."""
    losses: list[float] = []
    model = ldp_sgd_server(data, loss, cfg, losses)

    guarantee = None
    try:
        guarantee = ldp_sgd_central(
            SgdPrivacyQuery(cfg.epsilon_le, cfg.epochs, len(data), cfg.delta)
        )
    except PreconditionError as error:
        logger.warning("No central guarantee for this run: %s", error)

    return SgdRun(model, guarantee, losses)


def nonprivate_sgd(
    data: SgdData, loss: LossFamily, epochs: int, diameter: float, step_scale: float = 1.0
) -> ModelState:
    """Full-batch projected gradient descent with steps c/sqrt(t)."""
    theta = np.zeros(data.features.shape[1])
    for epoch in range(1, epochs + 1):
        gradient = loss.gradients(theta, data).mean(axis=0)
        theta = project_ball(theta - step_scale / math.sqrt(epoch) * gradient, diameter)
    return ModelState(theta)


def make_separable_data(
    n: int, rng: RandomStream, d: int = 2, margin: float = 0.1
) -> SgdData:
    """
    Linearly separable points of [-1, 1]^d pushed ``margin`` away from a random hyperplane
    through the origin.
    """
    normal = sample_unit_sphere(d, rng)[0]
    features = rng.generator.uniform(-1.0, 1.0, size=(n, d))
    labels = np.where(features @ normal >= 0, 1.0, -1.0)
    features = features + margin * labels[:, None] * normal
    return SgdData(features, labels)


def train_accuracy(theta: np.ndarray, data: SgdData) -> float:
    """Fraction of examples whose label matches sign(<theta, x>)."""
    predictions = np.where(data.features @ theta > 0, 1.0, -1.0)
    return float(np.mean(predictions == data.labels))
