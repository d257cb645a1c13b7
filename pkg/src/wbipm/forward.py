"""Desk-scale FMT-analog forward model.

Builds dense sensitivity operators for a slab geometry: two diffusion
systems (excitation and emission) are discretized with a cell-centered
7-point finite-difference stencil, Robin boundary conditions are applied
through ghost-point elimination, and the measurement row for a
(source, detector) pair is obtained by reciprocity from one excitation
solve per source and one adjoint emission solve per detector.

Also provides ellipsoidal phantoms and exactly-calibrated additive noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .errors import NumericalError, ValidationError


@dataclass(frozen=True)
class Grid3:
    """Regular voxel grid over a slab.

    Voxel (ix, iy, iz) maps to linear index ix + nx*(iy + ny*iz):
    x runs fastest, then y, then z.  Counts must be >= 2 on every axis
    and pitches (mm) must be positive.
    """

    nx: int
    ny: int
    nz: int
    hx: float = 1.0
    hy: float = 1.0
    hz: float = 1.0

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 2:
            raise ValidationError(
                f"grid counts must all be >= 2, got {(self.nx, self.ny, self.nz)}"
            )
        if min(self.hx, self.hy, self.hz) <= 0:
            raise ValidationError(
                f"voxel pitches must be positive, got {(self.hx, self.hy, self.hz)}"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def n_voxels(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def extents(self) -> tuple[float, float, float]:
        """Slab side lengths (mm)."""
        return (self.nx * self.hx, self.ny * self.hy, self.nz * self.hz)

    @property
    def voxel_volume(self) -> float:
        return self.hx * self.hy * self.hz

    def linear_index(self, ix: int, iy: int, iz: int) -> int:
        return ix + self.nx * (iy + self.ny * iz)

    def centers(self) -> np.ndarray:
        """Voxel centers as an (N, 3) array in linear-index order."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        z = (np.arange(self.nz) + 0.5) * self.hz
        zz, yy, xx = np.meshgrid(z, y, x, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])

    def z_of_voxels(self) -> np.ndarray:
        """z-coordinate (mm) of each voxel center, linear-index order."""
        return self.centers()[:, 2]


def _as_voxel_field(value, grid: Grid3, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(grid.n_voxels, float(arr))
    if arr.shape != (grid.n_voxels,):
        raise ValidationError(
            f"{name} must be a scalar or a length-{grid.n_voxels} vector"
        )
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValidationError(f"{name} must be finite and positive everywhere")
    return arr


@dataclass(frozen=True)
class OpticalCoefficients:
    """Optical properties of the slab, per wavelength.

    Absorption (1/mm) and diffusion (mm) may be scalars or per-voxel
    vectors; eta is the fluorophore efficiency constant and robin_coeff
    is the boundary impedance (the whole factor multiplying the normal
    derivative in the Robin condition), collapsed to one scalar.
    """

    mu_a_ex: float | np.ndarray = 0.01
    mu_a_em: float | np.ndarray = 0.01
    kappa_ex: float | np.ndarray = 0.33
    kappa_em: float | np.ndarray = 0.33
    eta: float = 1.0
    robin_coeff: float = 0.66

    def validate(self, grid: Grid3) -> None:
        _as_voxel_field(self.mu_a_ex, grid, "mu_a_ex")
        _as_voxel_field(self.mu_a_em, grid, "mu_a_em")
        _as_voxel_field(self.kappa_ex, grid, "kappa_ex")
        _as_voxel_field(self.kappa_em, grid, "kappa_em")
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ValidationError("eta must be finite and positive")
        if not (np.isfinite(self.robin_coeff) and self.robin_coeff >= 0):
            raise ValidationError("robin_coeff must be finite and nonnegative")


@dataclass(frozen=True)
class SourceDetectorLayout:
    """Boundary optode positions: sources on the bottom face (z = 0),
    detectors on the top face (z = Lz).  Positions are (x, y) in mm.
    """

    sources: np.ndarray
    detectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sources", np.atleast_2d(np.asarray(self.sources, float)))
        object.__setattr__(self, "detectors", np.atleast_2d(np.asarray(self.detectors, float)))
        for name, pos in (("sources", self.sources), ("detectors", self.detectors)):
            if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] == 0:
                raise ValidationError(f"{name} must be a nonempty (n, 2) array of (x, y) mm")

    @property
    def n_rows(self) -> int:
        """Operator row count M = |sources| * |detectors|."""
        return self.sources.shape[0] * self.detectors.shape[0]

    def validate(self, grid: Grid3) -> None:
        lx, ly, _ = grid.extents
        for name, pos in (("sources", self.sources), ("detectors", self.detectors)):
            if np.any(pos[:, 0] < 0) or np.any(pos[:, 0] > lx) or \
               np.any(pos[:, 1] < 0) or np.any(pos[:, 1] > ly):
                raise ValidationError(f"{name} positions fall outside the boundary face")

    @classmethod
    def regular(cls, grid: Grid3, n_src: tuple[int, int], n_det: tuple[int, int]) -> "SourceDetectorLayout":
        """Uniform n_src = (sx, sy) source and n_det = (dx, dy) detector arrays."""
        lx, ly, _ = grid.extents

        def mesh(nx_, ny_):
            xs = (np.arange(nx_) + 0.5) * (lx / nx_)
            ys = (np.arange(ny_) + 0.5) * (ly / ny_)
            gy, gx = np.meshgrid(ys, xs, indexing="ij")
            return np.column_stack([gx.ravel(), gy.ravel()])

        return cls(sources=mesh(*n_src), detectors=mesh(*n_det))


class LinearOperator:
    """Minimal forward-map interface: apply and adjoint-apply.

    Matrix-free implementations only need shape, apply and adjoint_apply.
    """

    shape: tuple[int, int]

    def apply(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint_apply(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class DenseMatrixOperator(LinearOperator):
    """Dense row-major sensitivity matrix with exact transpose adjoint."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.ascontiguousarray(np.asarray(matrix, dtype=float))
        if matrix.ndim != 2:
            raise ValidationError("operator matrix must be 2-D")
        if not np.all(np.isfinite(matrix)):
            raise ValidationError("operator matrix must have finite entries")
        self.matrix = matrix
        self.shape = matrix.shape

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def adjoint_apply(self, u: np.ndarray) -> np.ndarray:
        return self.matrix.T @ u


def as_dense_array(op: LinearOperator) -> np.ndarray:
    """Materialize an operator as a dense array (dense-scale diagnostics only)."""
    if isinstance(op, DenseMatrixOperator):
        return op.matrix
    m, n = op.shape
    cols = [op.apply(e) for e in np.eye(n)]
    return np.column_stack(cols)


def _diffusion_system(grid: Grid3, kappa: np.ndarray, mu_a: np.ndarray,
                      robin: float) -> sps.csr_matrix:
    """Cell-centered 7-point discretization of -div(kappa grad) + mu_a.

    Face diffusivities are harmonic means of the adjacent cells; the Robin
    condition  phi + robin * d_nu(phi) = 0  is folded into boundary-cell
    diagonals by eliminating the ghost value.  The result is a symmetric
    M-matrix (per unit volume), so solutions with nonnegative sources are
    nonnegative.
    """
    nx, ny, nz = grid.shape
    n = grid.n_voxels
    k = kappa.reshape(nz, ny, nx)  # [iz, iy, ix], matching linear order
    idx = np.arange(n).reshape(nz, ny, nx)

    diag = mu_a.astype(float).copy()
    rows, cols, vals = [], [], []

    # interior faces per axis: harmonic-mean conductance / h^2
    for axis, h in ((2, grid.hx), (1, grid.hy), (0, grid.hz)):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        k_lo, k_hi = k[tuple(lo)], k[tuple(hi)]
        k_face = 2.0 * k_lo * k_hi / (k_lo + k_hi)
        w = (k_face / h**2).ravel()
        i_lo = idx[tuple(lo)].ravel()
        i_hi = idx[tuple(hi)].ravel()
        np.add.at(diag, i_lo, w)
        np.add.at(diag, i_hi, w)
        rows.extend([i_lo, i_hi])
        cols.extend([i_hi, i_lo])
        vals.extend([-w, -w])

        # boundary faces on both ends of this axis (ghost elimination)
        for end in (0, -1):
            face = [slice(None)] * 3
            face[axis] = end
            kb = k[tuple(face)].ravel()
            ib = idx[tuple(face)].ravel()
            np.add.at(diag, ib, 2.0 * kb / (h * (2.0 * robin + h)))

    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    mat = sps.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )
    return mat.tocsr()


def _nearest_boundary_voxels(grid: Grid3, positions: np.ndarray, top: bool) -> np.ndarray:
    """Linear indices of the boundary-layer voxels nearest to (x, y) positions."""
    ix = np.clip(np.floor(positions[:, 0] / grid.hx).astype(int), 0, grid.nx - 1)
    iy = np.clip(np.floor(positions[:, 1] / grid.hy).astype(int), 0, grid.ny - 1)
    iz = grid.nz - 1 if top else 0
    return ix + grid.nx * (iy + grid.ny * iz)


def assemble_fmt_operator(grid: Grid3, coeff: OpticalCoefficients,
                          layout: SourceDetectorLayout) -> DenseMatrixOperator:
    """Assemble the dense sensitivity operator for the slab.

    Row (s, d) (source-major) holds
        A[(s,d), j] = eta * phi_ex_s(r_j) * g_em_d(r_j) * voxel_volume,
    where phi_ex_s solves the excitation system for a unit point source
    at the boundary voxel nearest source s, and g_em_d is the emission
    Green's function seeded at the boundary voxel nearest detector d
    (reciprocity: the emission stencil is symmetric, so the adjoint solve
    is a plain solve).
    """
    coeff.validate(grid)
    layout.validate(grid)

    vol = grid.voxel_volume
    sys_ex = _diffusion_system(grid, _as_voxel_field(coeff.kappa_ex, grid, "kappa_ex"),
                               _as_voxel_field(coeff.mu_a_ex, grid, "mu_a_ex"),
                               coeff.robin_coeff)
    sys_em = _diffusion_system(grid, _as_voxel_field(coeff.kappa_em, grid, "kappa_em"),
                               _as_voxel_field(coeff.mu_a_em, grid, "mu_a_em"),
                               coeff.robin_coeff)

    try:
        lu_ex = splu(sys_ex.tocsc())
        lu_em = splu(sys_em.tocsc())
    except RuntimeError as exc:  # pragma: no cover - positive coefficients prevent this
        raise NumericalError(f"diffusion system factorization failed: {exc}") from exc

    src_idx = _nearest_boundary_voxels(grid, layout.sources, top=False)
    det_idx = _nearest_boundary_voxels(grid, layout.detectors, top=True)

    def point_solves(lu, indices):
        rhs = np.zeros((grid.n_voxels, len(indices)))
        rhs[indices, np.arange(len(indices))] = 1.0 / vol  # unit point strength
        return lu.solve(rhs).T  # (n_points, N)

    phi_ex = point_solves(lu_ex, src_idx)   # (n_src, N)
    g_em = point_solves(lu_em, det_idx)     # (n_det, N)

    n_src, n_det = phi_ex.shape[0], g_em.shape[0]
    a = coeff.eta * vol * np.einsum("sj,dj->sdj", phi_ex, g_em)
    return DenseMatrixOperator(a.reshape(n_src * n_det, grid.n_voxels))


@dataclass(frozen=True)
class Ellipsoid:
    """Axis-aligned ellipsoidal inclusion: center and semi-axes in mm."""

    center: tuple[float, float, float]
    semi_axes: tuple[float, float, float]
    amplitude: float

    def __post_init__(self):
        if len(self.center) != 3 or len(self.semi_axes) != 3:
            raise ValidationError("ellipsoid center and semi_axes must have 3 entries")
        if min(self.semi_axes) <= 0:
            raise ValidationError("ellipsoid semi-axes must be positive")
        if self.amplitude <= 0:
            raise ValidationError("ellipsoid amplitude must be positive")

    def validate_inside(self, grid: Grid3) -> None:
        for c, a, extent in zip(self.center, self.semi_axes, grid.extents):
            if c - a < 0 or c + a > extent:
                raise ValidationError(
                    f"ellipsoid (center {self.center}, semi-axes {self.semi_axes}) "
                    f"extends outside the slab"
                )

    def contains(self, points: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center)
        a = np.asarray(self.semi_axes)
        return np.sum(((points - c) / a) ** 2, axis=1) <= 1.0


def random_inclusions(grid: Grid3, count: int, seed: int,
                      amplitude_range: tuple[float, float] = (0.5, 2.0)) -> list[Ellipsoid]:
    """Draw `count` random ellipsoids fully inside the slab, reproducibly."""
    if not 1 <= count <= 3:
        raise ValidationError("inclusion count must be between 1 and 3")
    rng = np.random.default_rng(seed)
    extents = np.asarray(grid.extents)
    pitches = np.asarray([grid.hx, grid.hy, grid.hz])
    out = []
    for _ in range(count):
        # semi-axes at least one voxel so the inclusion hits voxel centers
        semi = np.maximum(rng.uniform(0.10, 0.22, size=3) * extents, pitches)
        center = rng.uniform(semi, extents - semi)
        amp = rng.uniform(*amplitude_range)
        out.append(Ellipsoid(tuple(center), tuple(semi), float(amp)))
    return out


def generate_phantom(grid: Grid3, inclusions, seed: int = 0) -> np.ndarray:
    """Sparse fluorophore phantom: sum of ellipsoid amplitudes at voxel centers.

    `inclusions` is either an explicit list of Ellipsoid (validated against
    the slab) or an integer 1..3 requesting that many seeded random ones.
    """
    if isinstance(inclusions, (int, np.integer)):
        inclusions = random_inclusions(grid, int(inclusions), seed)
    if not 1 <= len(inclusions) <= 3:
        raise ValidationError("phantom needs between 1 and 3 inclusions")
    pts = grid.centers()
    x = np.zeros(grid.n_voxels)
    for ell in inclusions:
        ell.validate_inside(grid)
        x += ell.amplitude * ell.contains(pts)
    return x


def add_noise(b_clean: np.ndarray, sigma: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Additive Gaussian noise rescaled so ||eta|| = sigma * ||b_clean|| exactly.

    Returns (b_noisy, eta); sigma is the noise level ||eta|| / ||A x*||.
    """
    b_clean = np.asarray(b_clean, dtype=float)
    if sigma < 0:
        raise ValidationError("noise level sigma must be >= 0")
    if sigma == 0:
        return b_clean.copy(), np.zeros_like(b_clean)
    norm_b = np.linalg.norm(b_clean)
    if norm_b == 0:
        raise ValidationError("noise level is undefined for a zero clean measurement")
    rng = np.random.default_rng(seed)
    eta = rng.standard_normal(b_clean.shape)
    eta *= sigma * norm_b / np.linalg.norm(eta)
    return b_clean + eta, eta
