"""Angular momentum algebra for the cesium ground manifold.

Conventions
-----------
* Condon-Shortley phases throughout.
* Coupling coefficients are evaluated with exact integer factorials
  (``fractions.Fraction``); floating point enters only in the final
  square root, so results are good to ~1e-15.
* ``spin_matrices(f)`` uses the basis m = f, f-1, ..., -f (descending).
* ``coupled_space()`` orders the 16-dim cesium basis as
  (f=3, m=-3..3) then (f=4, m=-4..4) (ascending m inside each block).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .halfint import HalfInt, Spin, half, m_values, triangle_ok

__all__ = [
    "SpinMatrices",
    "CoupledSpace",
    "SPHERICAL_Q",
    "spherical_basis_vector",
    "spin_matrices",
    "clebsch_gordan",
    "wigner6j",
    "coupled_space",
    "o_coeff",
    "c2_coeff",
    "dipole_raising",
]

# Spherical unit vectors e_q for q = +1, 0, -1 (Condon-Shortley).
SPHERICAL_Q = (1, 0, -1)


def spherical_basis_vector(q: int) -> np.ndarray:
    """e_{+1} = -(x+iy)/sqrt2, e_0 = z, e_{-1} = (x-iy)/sqrt2."""
    if q == 1:
        return np.array([-1.0, -1.0j, 0.0]) / math.sqrt(2)
    if q == 0:
        return np.array([0.0, 0.0, 1.0])
    if q == -1:
        return np.array([1.0, -1.0j, 0.0]) / math.sqrt(2)
    raise ValueError(f"q must be one of {SPHERICAL_Q}, got {q}")


# ---------------------------------------------------------------------------
# spin matrices


@dataclass(frozen=True)
class SpinMatrices:
    """Dimensionless spin-f operators (hbar factored out)."""

    f: HalfInt
    fx: np.ndarray
    fy: np.ndarray
    fz: np.ndarray
    fplus: np.ndarray
    fminus: np.ndarray

    @property
    def dim(self) -> int:
        return self.f.twice + 1


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def _spin_matrices_cached(twice_f: int) -> SpinMatrices:
    f = HalfInt(twice_f)
    ms = [m.value for m in m_values(f)]
    d = len(ms)
    fz = np.diag(np.array(ms, dtype=complex))
    fplus = np.zeros((d, d), dtype=complex)
    fv = f.value
    for i in range(1, d):
        m = ms[i]
        fplus[i - 1, i] = math.sqrt(fv * (fv + 1) - m * (m + 1))
    fminus = fplus.conj().T.copy()
    fx = (fplus + fminus) / 2
    fy = (fplus - fminus) / 2j
    return SpinMatrices(
        f=f,
        fx=_freeze(fx),
        fy=_freeze(fy),
        fz=_freeze(fz),
        fplus=_freeze(fplus),
        fminus=_freeze(fminus),
    )


def spin_matrices(f: Spin) -> SpinMatrices:
    """Spin matrices for spin f in the basis m = f..-f; f >= 0, half-integer."""
    hf = half(f)
    if hf.twice < 0:
        raise ValueError(f"spin must be non-negative, got {hf}")
    return _spin_matrices_cached(hf.twice)


# ---------------------------------------------------------------------------
# coupling coefficients (exact integer arithmetic, Racah formulas)


def _fact(n: int) -> int:
    if n < 0:
        raise ValueError("negative factorial")
    return math.factorial(n)


@lru_cache(maxsize=None)
def _cg_twice(t1: int, tm1: int, t2: int, tm2: int, tj: int, tm: int) -> float:
    if tm1 + tm2 != tm:
        return 0.0
    if abs(tm1) > t1 or abs(tm2) > t2 or abs(tm) > tj:
        return 0.0
    if (t1 + tm1) % 2 or (t2 + tm2) % 2 or (tj + tm) % 2:
        return 0.0
    if not triangle_ok(HalfInt(t1), HalfInt(t2), HalfInt(tj)):
        return 0.0

    a1 = (t1 + tm1) // 2
    a2 = (t1 - tm1) // 2
    b1 = (t2 + tm2) // 2
    b2 = (t2 - tm2) // 2
    c1 = (tj + tm) // 2
    c2 = (tj - tm) // 2
    g = (t1 + t2 - tj) // 2
    e1 = (tj - t2 + tm1) // 2
    e2 = (tj - t1 - tm2) // 2

    delta = Fraction(
        _fact(g) * _fact((t1 - t2 + tj) // 2) * _fact((-t1 + t2 + tj) // 2),
        _fact((t1 + t2 + tj) // 2 + 1),
    )
    norm = Fraction(tj + 1) * delta
    norm *= _fact(c1) * _fact(c2) * _fact(a1) * _fact(a2) * _fact(b1) * _fact(b2)

    ksum = Fraction(0)
    for k in range(max(0, -e1, -e2), min(g, a2, b1) + 1):
        den = (
            _fact(k)
            * _fact(g - k)
            * _fact(a2 - k)
            * _fact(b1 - k)
            * _fact(e1 + k)
            * _fact(e2 + k)
        )
        ksum += Fraction(-1 if k % 2 else 1, den)
    if ksum == 0:
        return 0.0
    sign = 1.0 if ksum > 0 else -1.0
    return sign * math.sqrt(float(norm * ksum * ksum))


def clebsch_gordan(j1: Spin, m1: Spin, j2: Spin, m2: Spin, j: Spin, m: Spin) -> float:
    """<j1 m1; j2 m2 | j m> with Condon-Shortley phases."""
    t = [half(x).twice for x in (j1, m1, j2, m2, j, m)]
    if t[0] < 0 or t[2] < 0 or t[4] < 0:
        raise ValueError("spins must be non-negative")
    return _cg_twice(*t)


@lru_cache(maxsize=None)
def _wigner6j_twice(t1: int, t2: int, t3: int, t4: int, t5: int, t6: int) -> float:
    triads = ((t1, t2, t3), (t1, t5, t6), (t4, t2, t6), (t4, t5, t3))
    for ta, tb, tc in triads:
        if not triangle_ok(HalfInt(ta), HalfInt(tb), HalfInt(tc)):
            return 0.0

    s = [(ta + tb + tc) // 2 for ta, tb, tc in triads]
    q = [
        (t1 + t2 + t4 + t5) // 2,
        (t2 + t3 + t5 + t6) // 2,
        (t3 + t1 + t6 + t4) // 2,
    ]

    def tri_delta(ta: int, tb: int, tc: int) -> Fraction:
        return Fraction(
            _fact((ta + tb - tc) // 2)
            * _fact((ta - tb + tc) // 2)
            * _fact((-ta + tb + tc) // 2),
            _fact((ta + tb + tc) // 2 + 1),
        )

    norm = Fraction(1)
    for ta, tb, tc in triads:
        norm *= tri_delta(ta, tb, tc)

    total = Fraction(0)
    for t in range(max(s), min(q) + 1):
        den = _fact(t - s[0]) * _fact(t - s[1]) * _fact(t - s[2]) * _fact(t - s[3])
        den *= _fact(q[0] - t) * _fact(q[1] - t) * _fact(q[2] - t)
        term = Fraction(_fact(t + 1), den)
        total += -term if t % 2 else term
    if total == 0:
        return 0.0
    sign = 1.0 if total > 0 else -1.0
    return sign * math.sqrt(float(norm * total * total))


def wigner6j(j1: Spin, j2: Spin, j3: Spin, j4: Spin, j5: Spin, j6: Spin) -> float:
    """{j1 j2 j3; j4 j5 j6}; returns 0 for non-admissible arguments."""
    t = [half(x).twice for x in (j1, j2, j3, j4, j5, j6)]
    if any(tv < 0 for tv in t):
        raise ValueError("spins must be non-negative")
    return _wigner6j_twice(*t)


# ---------------------------------------------------------------------------
# cesium ground manifold: K = 7/2 nucleus coupled to s = 1/2 electron

K_NUCLEAR = HalfInt(7)
S_ELECTRON = HalfInt(1)
F_MANIFOLDS = (HalfInt(6), HalfInt(8))  # f = 3, 4
DIM_GROUND = 16


@dataclass(frozen=True)
class CoupledSpace:
    """Coupled |f m> basis of K=7/2 (x) s=1/2 with all 16-dim operators.

    Basis order: (f=3, m=-3..3) then (f=4, m=-4..4).  ``cg_matrix`` maps
    product-basis vectors (|K mK> (x) |s ms>, both m descending) to the
    coupled basis: coupled = cg_matrix @ product.
    """

    dim: int
    basis_labels: tuple[tuple[HalfInt, HalfInt], ...]
    cg_matrix: np.ndarray
    fx: np.ndarray
    fy: np.ndarray
    fz: np.ndarray
    kx: np.ndarray
    ky: np.ndarray
    kz: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    k_dot_s: np.ndarray

    def block_slice(self, f: Spin) -> slice:
        hf = half(f)
        if hf == HalfInt(6):
            return slice(0, 7)
        if hf == HalfInt(8):
            return slice(7, 16)
        raise ValueError(f"no manifold f={hf} in the cesium ground state")

    def projector(self, f: Spin) -> np.ndarray:
        p = np.zeros((self.dim, self.dim), dtype=complex)
        s = self.block_slice(f)
        p[s, s] = np.eye(s.stop - s.start)
        return p

    @property
    def f_ops(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.fx, self.fy, self.fz)

    @property
    def s_ops(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.sx, self.sy, self.sz)


@lru_cache(maxsize=1)
def coupled_space() -> CoupledSpace:
    """Build the 16-dim coupled space once; arrays are read-only."""
    nuc = spin_matrices(K_NUCLEAR)
    ele = spin_matrices(S_ELECTRON)
    eye_n = np.eye(nuc.dim)
    eye_e = np.eye(ele.dim)

    k_prod = [np.kron(getattr(nuc, c), eye_e) for c in ("fx", "fy", "fz")]
    s_prod = [np.kron(eye_n, getattr(ele, c)) for c in ("fx", "fy", "fz")]

    labels: list[tuple[HalfInt, HalfInt]] = []
    for f in F_MANIFOLDS:
        labels.extend((f, HalfInt(tm)) for tm in range(-f.twice, f.twice + 2, 2))

    mk_list = m_values(K_NUCLEAR)
    ms_list = m_values(S_ELECTRON)
    cg = np.zeros((DIM_GROUND, DIM_GROUND))
    for c, (f, m) in enumerate(labels):
        for ik, mk in enumerate(mk_list):
            for ie, ms in enumerate(ms_list):
                cg[c, ik * 2 + ie] = clebsch_gordan(
                    K_NUCLEAR, mk, S_ELECTRON, ms, f, m
                )

    def rot(op: np.ndarray) -> np.ndarray:
        return _freeze(cg @ op @ cg.T)

    kx, ky, kz = (rot(op) for op in k_prod)
    sx, sy, sz = (rot(op) for op in s_prod)
    k_dot_s = _freeze(kx @ sx + ky @ sy + kz @ sz)

    return CoupledSpace(
        dim=DIM_GROUND,
        basis_labels=tuple(labels),
        cg_matrix=_freeze(cg),
        fx=_freeze(np.asarray(kx + sx)),
        fy=_freeze(np.asarray(ky + sy)),
        fz=_freeze(np.asarray(kz + sz)),
        kx=kx,
        ky=ky,
        kz=kz,
        sx=sx,
        sy=sy,
        sz=sz,
        k_dot_s=k_dot_s,
    )


# ---------------------------------------------------------------------------
# dipole coupling coefficients for the D1 line (j = j' = 1/2)


def _check_manifold(f: Spin, j: Spin, k_nuc: Spin, name: str) -> HalfInt:
    hf, hj, hk = half(f), half(j), half(k_nuc)
    if not triangle_ok(hk, hj, hf):
        raise ValueError(f"{name}={hf} does not couple K={hk} with j={hj}")
    return hf


def o_coeff(
    f: Spin,
    fp: Spin,
    j: Spin = HalfInt(1),
    jp: Spin = HalfInt(1),
    k_nuc: Spin = K_NUCLEAR,
) -> float:
    """Relative oscillator strength amplitude o for the f -> f' transition.

    o = (-1)^(f'+1+j'+K) sqrt((2j'+1)(2f+1)) {f K j'; j 1 f'}.
    """
    hf = _check_manifold(f, j, k_nuc, "f")
    hfp = _check_manifold(fp, jp, k_nuc, "fp")
    hj, hjp, hk = half(j), half(jp), half(k_nuc)
    texp = hfp.twice + 2 + hjp.twice + hk.twice
    if texp % 2:
        raise ValueError("phase exponent f'+1+j'+K must be an integer")
    phase = -1.0 if ((texp // 2) % 2) else 1.0
    return (
        phase
        * math.sqrt((hjp.twice + 1) * (hf.twice + 1))
        * wigner6j(hf, hk, hjp, hj, 1, hfp)
    )


def c2_coeff(
    fp: Spin,
    f: Spin,
    j: Spin = HalfInt(1),
    jp: Spin = HalfInt(1),
    k_nuc: Spin = K_NUCLEAR,
) -> float:
    """Rank-2 ac-Stark coefficient C2 for ground f via excited f'.

    C2 = (-1)^(3f-f') sqrt(30) (2f'+1)
         / sqrt(f(f+1)(2f+1)(2f-1)(2f+3)) {f 1 f'; 1 f 2} |o|^2
    """
    hf, hfp = half(f), half(fp)
    if not hf.is_integer or not hfp.is_integer:
        raise ValueError("c2_coeff expects integer f, f' manifolds")
    texp = 3 * hf.twice - hfp.twice
    if texp % 2:
        raise ValueError("phase exponent 3f-f' must be an integer")
    phase = -1.0 if ((texp // 2) % 2) else 1.0
    fv = hf.value
    denom = math.sqrt(fv * (fv + 1) * (2 * fv + 1) * (2 * fv - 1) * (2 * fv + 3))
    o = o_coeff(f, fp, j=j, jp=jp, k_nuc=k_nuc)
    return (
        phase
        * math.sqrt(30.0)
        * (hfp.twice + 1)
        / denom
        * wigner6j(hf, 1, hfp, 1, hf, 2)
        * o
        * o
    )


def dipole_raising(
    f: Spin,
    fp: Spin,
    j: Spin = HalfInt(1),
    jp: Spin = HalfInt(1),
    k_nuc: Spin = K_NUCLEAR,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spherical components of the raising dipole D+ from ground f to excited f'.

    Returns (D_{+1}, D_0, D_{-1}); component q has matrix elements
    o * <f' m+q | f m; 1 q> at row (m+q), column m, with both manifold
    bases ordered by ascending m.  Shape (2f'+1, 2f+1).
    """
    hf = _check_manifold(f, j, k_nuc, "f")
    hfp = _check_manifold(fp, jp, k_nuc, "fp")
    if not triangle_ok(hf, 1, hfp):
        raise ValueError(f"dipole cannot connect f={hf} to f'={hfp}")
    o = o_coeff(hf, hfp, j=j, jp=jp, k_nuc=k_nuc)
    out = []
    for q in SPHERICAL_Q:
        d = np.zeros((hfp.twice + 1, hf.twice + 1), dtype=complex)
        for im, tm in enumerate(range(-hf.twice, hf.twice + 2, 2)):
            tmp = tm + 2 * q
            if abs(tmp) > hfp.twice:
                continue
            imp = (tmp + hfp.twice) // 2
            d[imp, im] = o * clebsch_gordan(
                hf, HalfInt(tm), 1, q, hfp, HalfInt(tmp)
            )
        out.append(_freeze(d))
    return tuple(out)
