"""Warm-basis vectors: angle-controlled synthetic priors for theory
experiments and file-loaded priors (e.g. network predictions).

Every producer returns a unit vector; on load the magnitude is discarded
deliberately, only the direction carries information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io

from .errors import ValidationError


class WarmBasisFileError(ValidationError):
    """Warm-basis file could not be parsed."""


class WarmBasisLengthError(ValidationError):
    """Warm-basis vector has the wrong length for the problem."""


class WarmBasisZeroError(ValidationError):
    """Warm-basis vector is (numerically) zero."""


@dataclass(frozen=True)
class WarmBasisSpec:
    """How to obtain the prior direction.

    mode: "exact" (the normalized ground truth), "angle" (synthetic at
    theta_deg from the truth), "file" (load from path), or "random".
    """

    mode: str
    theta_deg: float = 0.0
    path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "angle", "file", "random"):
            raise ValidationError(f"unknown warm-basis mode {self.mode!r}")
        if self.mode == "angle" and not 0.0 <= self.theta_deg <= 90.0:
            raise ValidationError("warm-basis angle must lie in [0, 90] degrees")
        if self.mode == "file" and not self.path:
            raise ValidationError("file mode needs a path")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "WarmBasisSpec":
        """Parse CLI syntax: exact | angle:<deg> | file:<path> | random."""
        mode, _, arg = text.partition(":")
        if mode == "angle":
            try:
                theta = float(arg)
            except ValueError as exc:
                raise ValidationError(f"bad warm-basis angle {arg!r}") from exc
            return cls(mode="angle", theta_deg=theta, seed=seed)
        if mode == "file":
            return cls(mode="file", path=arg, seed=seed)
        return cls(mode=mode, seed=seed)

    def realize(self, x_star: np.ndarray | None = None,
                n: int | None = None) -> np.ndarray:
        if self.mode == "exact":
            if x_star is None:
                raise ValidationError("exact warm basis needs the ground truth")
            return synthetic_warm_basis(x_star, 0.0, self.seed)
        if self.mode == "angle":
            if x_star is None:
                raise ValidationError("angle warm basis needs the ground truth")
            return synthetic_warm_basis(x_star, self.theta_deg, self.seed)
        if self.mode == "file":
            return load_warm_basis(self.path, expected_len=n)
        if n is None:
            raise ValidationError("random warm basis needs the problem size")
        return random_unit(n, self.seed)


def random_unit(n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def synthetic_warm_basis(x_star: np.ndarray, theta_deg: float,
                         seed: int) -> np.ndarray:
    """Unit vector at exactly theta_deg to the ground truth:

        x_hat = cos(theta) x*/||x*|| + sin(theta) w,

    with w a seeded random unit vector orthogonal to x*.
    """
    x_star = np.asarray(x_star, dtype=float)
    nrm = np.linalg.norm(x_star)
    if nrm == 0:
        raise ValidationError("ground truth must be nonzero")
    if not 0.0 <= theta_deg <= 90.0:
        raise ValidationError("theta must lie in [0, 90] degrees")
    x_unit = x_star / nrm
    if theta_deg == 0.0:
        return x_unit.copy()
    if x_star.size == 1:
        raise ValidationError("no orthogonal direction exists in one dimension")
    rng = np.random.default_rng(seed)
    for _ in range(16):
        w = rng.standard_normal(x_star.size)
        w -= x_unit * (x_unit @ w)
        nw = np.linalg.norm(w)
        if nw > 1e-12:
            break
    else:  # pragma: no cover - probability zero
        raise ValidationError("failed to draw an orthogonal direction")
    w /= nw
    w -= x_unit * (x_unit @ w)  # polish orthogonality
    w /= np.linalg.norm(w)
    theta = np.deg2rad(theta_deg)
    out = np.cos(theta) * x_unit + np.sin(theta) * w
    return out / np.linalg.norm(out)


def load_warm_basis(path, expected_len: int | None = None) -> np.ndarray:
    """Read a Matrix Market array vector and normalize it to unit 2-norm.

    Negative entries are allowed (network outputs are unconstrained);
    length mismatches, zero vectors and unparsable files raise distinct
    error types.
    """
    try:
        raw = scipy.io.mmread(path)
    except Exception as exc:
        raise WarmBasisFileError(f"cannot parse warm-basis file {path}: {exc}") from exc
    v = np.asarray(raw, dtype=float).ravel()
    if expected_len is not None and v.size != expected_len:
        raise WarmBasisLengthError(
            f"warm basis has length {v.size}, expected {expected_len}")
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise WarmBasisZeroError(f"warm-basis file {path} holds a zero vector")
    return v / nrm


def save_warm_basis(path, v: np.ndarray) -> None:
    """Write a vector as a Matrix Market dense array (full double precision)."""
    scipy.io.mmwrite(path, np.asarray(v, dtype=float).reshape(-1, 1), precision=17)
