"""Display patterns, evaluated in display pixel coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Sinusoid:
    """``A + B cos(2 pi u / period + shift)``, u = x_D (vertical) or y_D (horizontal stripes).

    ``direction`` names the stripe orientation: ``"vertical"`` stripes
    encode x_D, ``"horizontal"`` stripes encode y_D.
    """

    direction: str = "vertical"
    period: float = 160.0
    phase_offset: float = 0.0
    bias: float = 0.5
    amplitude: float = 0.5

    def __post_init__(self):
        if self.direction not in ("vertical", "horizontal"):
            raise ValueError("direction must be 'vertical' or 'horizontal'")
        if self.bias - self.amplitude < -1e-12 or self.bias + self.amplitude > 1 + 1e-12:
            raise ValueError("A +/- B must stay within [0, 1]")

    def evaluate(self, xd, yd):
        u = xd if self.direction == "vertical" else yd
        return self.bias + self.amplitude * np.cos(2 * np.pi * np.asarray(u) / self.period + self.phase_offset)

    def phase(self, xd, yd):
        u = xd if self.direction == "vertical" else yd
        return 2 * np.pi * np.asarray(u) / self.period


@dataclass(frozen=True)
class CrossSinusoid:
    """``A + B [cos(2 pi x_D / px) + cos(2 pi y_D / py)]``."""

    period_x: float = 160.0
    period_y: float = 160.0
    bias: float = 0.5
    amplitude: float = 0.25

    def __post_init__(self):
        if self.bias - 2 * self.amplitude < -1e-12 or self.bias + 2 * self.amplitude > 1 + 1e-12:
            raise ValueError("A +/- 2B must stay within [0, 1]")

    def evaluate(self, xd, yd):
        return self.bias + self.amplitude * (
            np.cos(2 * np.pi * np.asarray(xd) / self.period_x) + np.cos(2 * np.pi * np.asarray(yd) / self.period_y)
        )


@dataclass(frozen=True)
class Checkerboard:
    cell: float = 64.0
    bias: float = 0.5
    amplitude: float = 0.5

    def evaluate(self, xd, yd):
        parity = (np.floor(np.asarray(xd) / self.cell) + np.floor(np.asarray(yd) / self.cell)) % 2
        return self.bias + self.amplitude * np.where(parity == 0, 1.0, -1.0)


@dataclass(frozen=True)
class Uniform:
    level: float = 0.5

    def evaluate(self, xd, yd):
        return np.full(np.broadcast(np.asarray(xd), np.asarray(yd)).shape, float(self.level))


def sample(pattern, xd, yd, mode="bilinear"):
    """Sample a pattern at display coordinates.

    ``bilinear`` interpolates between values at integer pixel centres,
    like a physical pixel grid seen slightly out of focus; ``analytic``
    evaluates the continuous function.
    """
    if mode == "analytic":
        return pattern.evaluate(xd, yd)
    if mode != "bilinear":
        raise ValueError(f"unknown sampling mode {mode!r}")
    x0 = np.floor(xd)
    y0 = np.floor(yd)
    fx = xd - x0
    fy = yd - y0
    v00 = pattern.evaluate(x0, y0)
    v10 = pattern.evaluate(x0 + 1, y0)
    v01 = pattern.evaluate(x0, y0 + 1)
    v11 = pattern.evaluate(x0 + 1, y0 + 1)
    return (1 - fy) * ((1 - fx) * v00 + fx * v10) + fy * ((1 - fx) * v01 + fx * v11)


def pattern_to_dict(p) -> dict:
    from dataclasses import asdict

    return {"kind": type(p).__name__, **asdict(p)}


def pattern_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    classes = {c.__name__: c for c in (Sinusoid, CrossSinusoid, Checkerboard, Uniform)}
    if kind not in classes:
        raise ValueError(f"unknown pattern kind {kind!r}")
    return classes[kind](**d)
