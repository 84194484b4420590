"""Dense linear-algebra and statistical primitives shared by the other modules.

Everything here is a pure function of its inputs.  Randomized routines take an
explicit seed so reports are bit-reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

__all__ = [
    "Subspace",
    "orthonormalize",
    "project",
    "project_complement",
    "operator_norm",
    "normal_cdf",
    "probit",
    "clopper_pearson",
]


@dataclass(frozen=True)
class Subspace:
    """Orthonormal basis (rows of ``basis``) for a subspace of R^d."""

    ambient_dim: int
    basis: np.ndarray  # shape (k, d)

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float).reshape(-1, self.ambient_dim)
        basis.setflags(write=False)
        object.__setattr__(self, "basis", basis)

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    def projector(self) -> np.ndarray:
        """Dense d x d orthogonal projector B^T B."""
        return self.basis.T @ self.basis

    def is_orthonormal(self, tol: float = 1e-10) -> bool:
        gram = self.basis @ self.basis.T
        return bool(np.all(np.abs(gram - np.eye(self.dim)) <= tol))


def _as_finite(a, name):
    arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def orthonormalize(vectors, rank_tol: float = 1e-10, ambient_dim: int | None = None) -> Subspace:
    """Orthonormal basis for the span of ``vectors`` (rows).

    Modified Gram-Schmidt with a second re-orthogonalization pass.  A vector is
    dropped when its residual norm falls below ``rank_tol`` times the largest
    input norm.
    """
    if rank_tol <= 0:
        raise ValueError("rank_tol must be positive")
    vecs = _as_finite(vectors, "vectors")
    if vecs.size == 0:
        if ambient_dim is None:
            ambient_dim = vecs.shape[-1] if vecs.ndim == 2 else 0
        return Subspace(ambient_dim, np.zeros((0, ambient_dim)))
    if vecs.ndim == 1:
        vecs = vecs[None, :]
    d = vecs.shape[1]
    if ambient_dim is not None and ambient_dim != d:
        raise ValueError(f"vectors have length {d}, expected {ambient_dim}")

    scale = np.max(np.linalg.norm(vecs, axis=1))
    if scale == 0.0:
        return Subspace(d, np.zeros((0, d)))
    cutoff = rank_tol * scale

    basis: list[np.ndarray] = []
    for v in vecs:
        r = v.copy()
        for _ in range(2):
            for q in basis:
                r -= (q @ r) * q
        nrm = np.linalg.norm(r)
        if nrm > cutoff:
            basis.append(r / nrm)
            if len(basis) == d:
                break
    return Subspace(d, np.array(basis) if basis else np.zeros((0, d)))


def _check_dim(v, s: Subspace):
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != s.ambient_dim:
        raise ValueError(f"vector length {v.shape[-1]} does not match ambient dimension {s.ambient_dim}")
    return v


def project(v, s: Subspace) -> np.ndarray:
    """Orthogonal projection of ``v`` (or each row of ``v``) onto ``s``."""
    v = _check_dim(v, s)
    return (v @ s.basis.T) @ s.basis


def project_complement(v, s: Subspace) -> np.ndarray:
    """Component of ``v`` orthogonal to ``s``; ``project + project_complement == v``."""
    v = _check_dim(v, s)
    return v - project(v, s)


def operator_norm(m, tol: float = 1e-12, seed: int = 0, max_iter: int = 100_000) -> float:
    """Largest singular value of ``m`` by power iteration on m^T m.

    Iterates until successive estimates differ by less than ``tol`` relative.
    """
    m = _as_finite(m, "matrix")
    if m.ndim != 2 or m.size == 0:
        raise ValueError("operator_norm needs a non-empty 2-D matrix")
    if not np.any(m):
        return 0.0
    gram = m.T @ m
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(gram.shape[0])
    u /= np.linalg.norm(u)
    est = 0.0
    for _ in range(max_iter):
        z = gram @ u
        nz = np.linalg.norm(z)
        if nz == 0.0:
            # start vector landed in the null space; restart from a fresh draw
            u = rng.standard_normal(gram.shape[0])
            u /= np.linalg.norm(u)
            continue
        new = float(u @ z)
        u = z / nz
        if abs(new - est) <= tol * abs(new):
            est = new
            break
        est = new
    # Rayleigh quotient of the converged vector; sqrt of the top eigenvalue of m^T m
    return math.sqrt(max(float(u @ gram @ u), 0.0))


def normal_cdf(z):
    """Standard normal CDF, accurate in both tails (erfc based)."""
    z = np.asarray(z, dtype=float)
    out = 0.5 * special.erfc(-z / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


# Wichura (1988), algorithm AS241 PPND16.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coefs, x):
    acc = 0.0
    for c in reversed(coefs):
        acc = acc * x + c
    return acc


def _probit_scalar(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"probit is only defined on (0, 1); got {p!r}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        z = q * _poly(_A, r) / _poly(_B, r)
    else:
        r = p if q < 0 else 1.0 - p
        r = math.sqrt(-math.log(r))
        if r <= 5.0:
            r -= 1.6
            z = _poly(_C, r) / _poly(_D, r)
        else:
            r -= 5.0
            z = _poly(_E, r) / _poly(_F, r)
        if q < 0:
            z = -z
    # one Newton polish step against normal_cdf
    dens = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    if dens > 0.0:
        z -= (0.5 * math.erfc(-z / math.sqrt(2.0)) - p) / dens
    return z


def probit(p):
    """Inverse standard normal CDF; raises ``ValueError`` outside (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if arr.ndim == 0:
        return _probit_scalar(float(arr))
    return np.array([_probit_scalar(float(x)) for x in arr.ravel()]).reshape(arr.shape)


def _binom_sf_ge(k: int, n: int, p: float) -> float:
    """P[X >= k] for X ~ Binomial(n, p)."""
    if k <= 0:
        return 1.0
    # P[X >= k] = I_p(k, n - k + 1)
    return float(special.betainc(k, n - k + 1, p))


def _bisect(f, lo, hi, tol):
    flo = f(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson(successes: int, trials: int, level: float = 0.95, tol: float = 1e-9):
    """Exact (Clopper-Pearson) binomial confidence interval ``(lo, hi)``.

    Each endpoint is found by bisection on the binomial tail probability.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    alpha = (1.0 - level) / 2.0
    k, n = int(successes), int(trials)
    if k == 0:
        lo = 0.0
    else:
        # P[X >= k | p] increases in p; solve == alpha
        lo = _bisect(lambda p: _binom_sf_ge(k, n, p) - alpha, 0.0, 1.0, tol)
    if k == n:
        hi = 1.0
    else:
        # P[X <= k | p] decreases in p; solve == alpha
        hi = _bisect(lambda p: alpha - (1.0 - _binom_sf_ge(k + 1, n, p)), 0.0, 1.0, tol)
    return lo, hi
