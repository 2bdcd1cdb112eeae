"""Numerical machinery for the rotation group SO(3).

Everything here is float64 numpy and pure: real spherical harmonics,
Wigner-D matrices, Clebsch-Gordan coefficients, Haar rotation sampling,
edge-aligned frames, and the block container for spherical-tensor features.
Precomputed tables (generators, CG blocks) are immutable after construction
and safe to share across threads.

Basis convention (fixed once, used everywhere)
----------------------------------------------
Real orthonormal spherical harmonics with the *polar axis along +y*, so that
a direction aligned with (0, 1, 0) excites only the m = 0 component of every
order.  Concretely, ``Y_l(r) := S_l(P r)`` where ``S_l`` is the textbook real
spherical harmonic with z polar axis and ``P`` is the cyclic axis permutation
x -> y -> z -> x.  In this basis the order-1 harmonic of a unit vector is
``sqrt(3/4pi) * (x, y, z)`` with m ordered (-1, 0, +1), and the order-1
Wigner-D matrix of a rotation R is R itself.

Wigner-D matrices are generated by ``D_l(R) = expm(theta * <G_l, n>)`` from
real so(3) generator matrices G_l derived from the complex ladder operators,
so the homomorphism property holds by construction.

Real CG coefficients are obtained from exact complex coefficients (Racah's
formula evaluated in rational arithmetic) conjugated into the real basis.
Each (l1, l2, l3) block is purely real up to a per-block phase that we fix by
taking whichever of the real/imaginary parts is nonzero; all identities used
downstream (orthogonality, selection rules, the SO(2) kernel relations) are
invariant under that per-block sign choice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.linalg import expm
from scipy.spatial.transform import Rotation as _ScipyRotation

from .errors import ConfigError, NormalizationError

__all__ = [
    "CGTable",
    "IrrepsTensor",
    "act_on_irreps",
    "clebsch_gordan",
    "edge_frame",
    "is_rotation",
    "quaternion_to_matrix",
    "real_spherical_harmonics",
    "real_sh_block",
    "sample_rotation",
    "sh_pole_value",
    "wigner_d",
]

# cyclic permutation x -> y -> z -> x; maps the +y pole of our basis onto the
# +z pole of the textbook convention
_P_CYCLE = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

_ROTATION_TOL = 1e-12
_UNIT_TOL = 1e-8


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0:
        raise NormalizationError("zero quaternion has no rotation")
    w, x, y, z = q / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def sample_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation matrix via a uniformly random unit quaternion."""
    q = rng.normal(size=4)
    while np.linalg.norm(q) < 1e-12:  # pragma: no cover - measure zero
        q = rng.normal(size=4)
    return quaternion_to_matrix(q)


def is_rotation(mat: np.ndarray, tol: float = _ROTATION_TOL) -> bool:
    """True if ``mat`` is orthogonal with determinant +1 within ``tol``."""
    mat = np.asarray(mat, dtype=float)
    if mat.shape != (3, 3):
        return False
    return (
        np.abs(mat @ mat.T - np.eye(3)).max() <= tol
        and abs(np.linalg.det(mat) - 1.0) <= tol
    )


# ---------------------------------------------------------------------------
# real spherical harmonics
# ---------------------------------------------------------------------------


def _real_sh_zpolar(l: int, vecs: np.ndarray) -> np.ndarray:
    """Textbook real orthonormal SH (z polar axis), columns m = -l..l.

    Evaluated as polynomials in the Cartesian components: the azimuthal
    factors sin^m(theta)*{cos,sin}(m*phi) come from powers of (x + i y) and
    the polar factors from the rescaled Legendre functions
    Q_lm = P_lm / sin^m(theta).  This avoids the sqrt(1 - cos^2) roundoff
    blowup of the spherical parametrization near the poles.
    """
    x, y, ct = vecs[:, 0], vecs[:, 1], vecs[:, 2]
    n = vecs.shape[0]
    out = np.empty((n, 2 * l + 1))

    # sin^m(theta) * (cos(m phi), sin(m phi)) via (x + i y)^m
    cm = np.ones(n)
    sm = np.zeros(n)

    # q[j] = Q_{l, m} needs the full recurrence per m; build all Q_{l m}
    for m in range(0, l + 1):
        # diagonal start Q_mm = (2m - 1)!!
        q = np.full(n, float(_double_factorial(2 * m - 1)))
        if l > m:
            q_prev = q
            q = (2 * m + 1) * ct * q_prev  # Q_{m+1, m}
            for ll in range(m + 2, l + 1):
                q, q_prev = (
                    ((2 * ll - 1) * ct * q - (ll + m - 1) * q_prev) / (ll - m),
                    q,
                )
        norm = math.sqrt(
            (2 * l + 1) / (4 * math.pi) * math.factorial(l - m) / math.factorial(l + m)
        )
        if m == 0:
            out[:, l] = norm * q
        else:
            out[:, l + m] = math.sqrt(2.0) * norm * q * cm
            out[:, l - m] = math.sqrt(2.0) * norm * q * sm
        if m < l:
            cm, sm = cm * x - sm * y, cm * y + sm * x
    return out


@lru_cache(maxsize=None)
def _double_factorial(n: int) -> int:
    if n <= 0:
        return 1
    return n * _double_factorial(n - 2)


def real_sh_block(directions: np.ndarray, l: int) -> np.ndarray:
    """Order-l real SH values for an (N, 3) array of unit directions.

    Does not re-check normalization; callers on untrusted input should go
    through :func:`real_spherical_harmonics`.
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    return _real_sh_zpolar(l, directions @ _P_CYCLE.T)


def real_spherical_harmonics(direction: np.ndarray, l_max: int) -> list[np.ndarray]:
    """Per-order real SH vectors of a single unit direction, orders 0..l_max."""
    direction = np.asarray(direction, dtype=float).reshape(3)
    nrm = np.linalg.norm(direction)
    if abs(nrm - 1.0) > _UNIT_TOL:
        raise NormalizationError(f"direction must be unit length, got |r| = {nrm!r}")
    return [real_sh_block(direction[None, :], l)[0] for l in range(l_max + 1)]


def sh_pole_value(l: int) -> float:
    """Value of the m = 0 real SH at the +y pole: sqrt((2l+1)/4pi)."""
    return math.sqrt((2 * l + 1) / (4 * math.pi))


# ---------------------------------------------------------------------------
# Wigner-D matrices
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _u_complex_to_real(l: int) -> np.ndarray:
    """Unitary change of basis, real SH = U @ complex SH (rows: real m)."""
    U = np.zeros((2 * l + 1, 2 * l + 1), dtype=complex)
    s = 1.0 / math.sqrt(2.0)
    for m in range(-l, l + 1):
        if m == 0:
            U[l, l] = 1.0
        elif m > 0:
            U[m + l, m + l] = ((-1) ** m) * s
            U[m + l, -m + l] = s
        else:
            am = -m
            U[m + l, am + l] = -1j * ((-1) ** am) * s
            U[m + l, -am + l] = 1j * s
    return U


@lru_cache(maxsize=None)
def _generators(l: int) -> np.ndarray:
    """Real so(3) generators (3, 2l+1, 2l+1) in the edge-aligned basis."""
    dim = 2 * l + 1
    jp = np.zeros((dim, dim))
    jm = np.zeros((dim, dim))
    for m in range(-l, l):
        jp[m + 1 + l, m + l] = math.sqrt(l * (l + 1) - m * (m + 1))
    for m in range(-l + 1, l + 1):
        jm[m - 1 + l, m + l] = math.sqrt(l * (l + 1) - m * (m - 1))
    gx_c = 1j * (jp + jm) / 2.0
    gy_c = (jm - jp) / 2.0
    gz_c = 1j * np.diag(np.arange(-l, l + 1).astype(float))
    U = _u_complex_to_real(l)
    reals = []
    for g in (gx_c, gy_c, gz_c):
        gr = U @ g @ U.conj().T
        assert np.abs(gr.imag).max() < 1e-12
        reals.append(gr.real)
    gx, gy, gz = reals
    # relabel axes for the cyclic permutation that moves the pole to +y
    out = np.stack([gy, gz, gx])
    out.flags.writeable = False
    return out


def wigner_d(rotation: np.ndarray, l: int) -> np.ndarray:
    """Real Wigner-D matrix: Y_l(R r) = D_l(R) @ Y_l(r)."""
    if l < 0:
        raise ConfigError(f"order must be >= 0, got {l}")
    if l == 0:
        return np.ones((1, 1))
    rotvec = _ScipyRotation.from_matrix(np.asarray(rotation, dtype=float)).as_rotvec()
    if l == 1:
        # order-1 real SH are proportional to (x, y, z): D_1 is the rotation
        return _ScipyRotation.from_rotvec(rotvec).as_matrix()
    G = _generators(l)
    return expm(rotvec[0] * G[0] + rotvec[1] * G[1] + rotvec[2] * G[2])


# ---------------------------------------------------------------------------
# Clebsch-Gordan coefficients
# ---------------------------------------------------------------------------


def _cg_complex(j1: int, m1: int, j2: int, m2: int, j3: int, m3: int) -> float:
    """Exact complex CG coefficient via Racah's formula (rational arithmetic)."""
    if m3 != m1 + m2 or j3 < abs(j1 - j2) or j3 > j1 + j2:
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m3) > j3:
        return 0.0
    f = math.factorial
    pref2 = Fraction(
        (2 * j3 + 1) * f(j3 + j1 - j2) * f(j3 - j1 + j2) * f(j1 + j2 - j3),
        f(j1 + j2 + j3 + 1),
    ) * Fraction(f(j3 + m3) * f(j3 - m3) * f(j1 - m1) * f(j1 + m1) * f(j2 - m2) * f(j2 + m2))
    total = Fraction(0)
    kmin = max(0, -(j3 - j2 + m1), -(j3 - j1 - m2))
    kmax = min(j1 + j2 - j3, j1 - m1, j2 + m2)
    for k in range(kmin, kmax + 1):
        den = (
            f(k)
            * f(j1 + j2 - j3 - k)
            * f(j1 - m1 - k)
            * f(j2 + m2 - k)
            * f(j3 - j2 + m1 + k)
            * f(j3 - j1 - m2 + k)
        )
        total += Fraction((-1) ** k, den)
    return math.sqrt(float(pref2)) * float(total)


@lru_cache(maxsize=None)
def _cg_real_block(l1: int, l2: int, l3: int) -> np.ndarray:
    """Real-basis CG block, shape (2l1+1, 2l2+1, 2l3+1)."""
    d1, d2, d3 = 2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1
    if l3 < abs(l1 - l2) or l3 > l1 + l2:
        z = np.zeros((d1, d2, d3))
        z.flags.writeable = False
        return z
    Cc = np.zeros((d1, d2, d3))
    for m1 in range(-l1, l1 + 1):
        for m2 in range(-l2, l2 + 1):
            m3 = m1 + m2
            if abs(m3) <= l3:
                Cc[m1 + l1, m2 + l2, m3 + l3] = _cg_complex(l1, m1, l2, m2, l3, m3)
    U1, U2, U3 = (_u_complex_to_real(l) for l in (l1, l2, l3))
    T = np.einsum("Aa,Bb,Cc,abc->ABC", U1.conj(), U2.conj(), U3, Cc)
    re, im = np.abs(T.real).max(), np.abs(T.imag).max()
    # per-block phase: exactly one of the parts carries the tensor
    if re >= im:
        assert im < 1e-12, (l1, l2, l3, im)
        out = T.real.copy()
    else:
        assert re < 1e-12, (l1, l2, l3, re)
        out = T.imag.copy()
    out[np.abs(out) < 1e-15] = 0.0
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class CGTable:
    """Precomputed real Clebsch-Gordan coefficients up to ``l_max``."""

    l_max: int
    _blocks: dict = field(repr=False)

    def block(self, l1: int, l2: int, l3: int) -> np.ndarray:
        """Dense (2l1+1, 2l2+1, 2l3+1) coefficient block (zeros if forbidden)."""
        for l in (l1, l2, l3):
            if l < 0 or l > self.l_max:
                raise ConfigError(f"order {l} outside table range 0..{self.l_max}")
        return self._blocks[(l1, l2, l3)]

    def coeff(self, l1: int, m1: int, l2: int, m2: int, l3: int, m3: int) -> float:
        """Single coefficient C^{(l3 m3)}_{(l1 m1),(l2 m2)}."""
        if abs(m1) > l1 or abs(m2) > l2 or abs(m3) > l3:
            raise ConfigError("m index out of range for its order")
        return float(self.block(l1, l2, l3)[m1 + l1, m2 + l2, m3 + l3])


def clebsch_gordan(l_max: int) -> CGTable:
    """Build the real CG table for all orders up to ``l_max`` (<= 8)."""
    if l_max < 0 or l_max > 8:
        raise ConfigError(f"l_max must be in 0..8, got {l_max}")
    blocks = {}
    for l1 in range(l_max + 1):
        for l2 in range(l_max + 1):
            for l3 in range(l_max + 1):
                blocks[(l1, l2, l3)] = _cg_real_block(l1, l2, l3)
    return CGTable(l_max=l_max, _blocks=blocks)


# ---------------------------------------------------------------------------
# edge-aligned frames
# ---------------------------------------------------------------------------

_Y_AXIS = np.array([0.0, 1.0, 0.0])
_FLIP_X = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])  # pi about x
_ANTIPODAL_COS = -1.0 + 1e-6


def edge_frame(r_uv: np.ndarray) -> np.ndarray:
    """Rotation R with R @ rhat_uv = (0, 1, 0).

    Deterministic: the in-plane freedom is fixed by rotating about the axis
    rhat x yhat; directions within 1e-6 of antipodal are first flipped by the
    fixed pi-rotation about x and then aligned, so the result is exact there
    too.
    """
    r_uv = np.asarray(r_uv, dtype=float).reshape(3)
    nrm = np.linalg.norm(r_uv)
    if nrm == 0.0:
        raise NormalizationError("zero-length edge has no frame")
    rhat = r_uv / nrm
    c = float(rhat @ _Y_AXIS)
    if c < _ANTIPODAL_COS:
        return _align_generic(_FLIP_X @ rhat) @ _FLIP_X
    return _align_generic(rhat)


def _align_generic(rhat: np.ndarray) -> np.ndarray:
    axis = np.cross(rhat, _Y_AXIS)
    s = np.linalg.norm(axis)
    c = float(rhat @ _Y_AXIS)
    if s < 1e-14:
        return np.eye(3) if c > 0 else _FLIP_X.copy()
    angle = math.atan2(s, c)
    return _ScipyRotation.from_rotvec(axis / s * angle).as_matrix()


# ---------------------------------------------------------------------------
# irreps container
# ---------------------------------------------------------------------------


@dataclass
class IrrepsTensor:
    """Concatenated order-l spherical-tensor blocks with channel multiplicity.

    ``blocks[l]`` has shape (channels, 2l+1); the total flattened dimension is
    channels * (l_max + 1)**2.
    """

    l_max: int
    channels: int
    blocks: list

    def __post_init__(self):
        if len(self.blocks) != self.l_max + 1:
            raise ConfigError(
                f"expected {self.l_max + 1} blocks, got {len(self.blocks)}"
            )
        blocks = []
        for l, b in enumerate(self.blocks):
            b = np.asarray(b, dtype=float)
            if b.shape != (self.channels, 2 * l + 1):
                raise ConfigError(
                    f"block {l} has shape {b.shape}, expected {(self.channels, 2 * l + 1)}"
                )
            blocks.append(b)
        self.blocks = blocks

    @property
    def dim(self) -> int:
        return self.channels * (self.l_max + 1) ** 2

    @classmethod
    def zeros(cls, l_max: int, channels: int) -> "IrrepsTensor":
        return cls(l_max, channels, [np.zeros((channels, 2 * l + 1)) for l in range(l_max + 1)])

    @classmethod
    def random(cls, l_max: int, channels: int, rng: np.random.Generator) -> "IrrepsTensor":
        return cls(
            l_max, channels, [rng.normal(size=(channels, 2 * l + 1)) for l in range(l_max + 1)]
        )

    def to_flat(self) -> np.ndarray:
        """(channels, (l_max+1)^2) layout with order-l block at columns l^2:(l+1)^2."""
        return np.concatenate(self.blocks, axis=1)

    @classmethod
    def from_flat(cls, flat: np.ndarray, l_max: int) -> "IrrepsTensor":
        flat = np.asarray(flat, dtype=float)
        blocks, off = [], 0
        for l in range(l_max + 1):
            blocks.append(flat[:, off : off + 2 * l + 1])
            off += 2 * l + 1
        return cls(l_max, flat.shape[0], blocks)

    def copy(self) -> "IrrepsTensor":
        return IrrepsTensor(self.l_max, self.channels, [b.copy() for b in self.blocks])


def act_on_irreps(rotation: np.ndarray, t: IrrepsTensor) -> IrrepsTensor:
    """Rotate an irreps tensor: each order-l block right-multiplied by D_l(R)^T."""
    return IrrepsTensor(
        t.l_max,
        t.channels,
        [t.blocks[l] @ wigner_d(rotation, l).T for l in range(t.l_max + 1)],
    )
