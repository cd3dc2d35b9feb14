"""Generalized inversion engine for singular operator families.

Implements the two-projection inversion scheme for families
``A(z) = A0 + z * A1(z)`` with a projection ``S`` satisfying

    (i)  ``A0 + S`` invertible,
    (ii) ``S (A0 + S)^-1 S = S``,

namely the bounded operator ``B(z)`` on ``ran(S)``, the exact inverse
formula for ``A(z)^-1``, hypothesis checks for the natural projection
choices (contour vs orthogonal-onto-kernel), and iterated projection
ladders with a final two-term step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import linalg
from .errors import (
    AccuracyError,
    DimensionError,
    DomainError,
    HypothesisError,
    SingularMatrixError,
)
from .linalg import Projection, opnorm

SERIES_TAIL_TOL = 1e-14
CROSS_CHECK_TOL = 1e-9


@dataclass(frozen=True)
class OperatorFamily:
    """Family ``z -> base + z * remainder(z)`` on a punctured disk.

    ``remainder`` must be a pure function of ``z`` returning a matrix of the
    same shape as ``base`` with norm at most ``bound`` on the domain; the
    domain is ``0 < |z| < radius``, optionally restricted to the closed
    angular sector ``sector = (theta_min, theta_max)``.
    """

    base: np.ndarray
    remainder: Callable[[complex], np.ndarray]
    bound: float
    radius: float
    sector: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "base", linalg.require_square(self.base))

    @property
    def dim(self) -> int:
        return self.base.shape[0]

    def contains(self, z: complex) -> bool:
        if not 0.0 < abs(z) < self.radius:
            return False
        if self.sector is not None:
            lo, hi = self.sector
            ang = float(np.angle(z))
            if not lo - 1e-12 <= ang <= hi + 1e-12:
                return False
        return True

    def a(self, z: complex) -> np.ndarray:
        """Evaluate ``A(z) = base + z * remainder(z)``."""
        r = linalg.require_square(self.remainder(z))
        if r.shape != self.base.shape:
            raise DimensionError("remainder shape differs from base shape")
        return self.base + z * r

    def spot_check(self, rng: np.random.Generator, samples: int = 4) -> float:
        """Sample ``norm(remainder(z))`` on the domain; returns the max seen."""
        worst = 0.0
        for _ in range(samples):
            r = self.radius * 10.0 ** rng.uniform(-3, -0.05)
            if self.sector is None:
                ang = rng.uniform(-np.pi, np.pi)
            else:
                ang = rng.uniform(*self.sector)
            worst = max(worst, opnorm(self.remainder(r * np.exp(1j * ang))))
        return worst


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of checking conditions (i) and (ii) for a pair ``(A0, S)``."""

    cond_i_margin: float
    cond_ii_defect: float
    ok: bool
    tol: float = 1e-8


def verify_conditions(a0: np.ndarray, s: Projection, tol: float = 1e-8) -> ConditionReport:
    """Check invertibility of ``A0 + S`` and the compression identity.

    Never raises on mathematical failure; the report carries the margins.
    """
    a0 = linalg.require_square(a0)
    if a0.shape != s.matrix.shape:
        raise DimensionError("A0 and S shapes differ")
    try:
        g = linalg.inverse(a0 + s.matrix)
        cond = linalg.cond_estimate(a0 + s.matrix)
        margin = 1.0 / cond
    except SingularMatrixError:
        return ConditionReport(0.0, float("inf"), False, tol)
    sm = s.matrix
    defect = opnorm(sm @ g @ sm - sm) / max(1.0, opnorm(sm))
    return ConditionReport(margin, defect, defect <= tol, tol)


def b_quotient(fam: OperatorFamily, s: Projection, z: complex) -> np.ndarray:
    """``B(z) = (S - S (A(z)+S)^-1 S) / z`` (defining quotient form)."""
    if z == 0:
        raise DomainError("quotient form is undefined at z = 0")
    sm = s.matrix
    g = linalg.inverse(fam.a(z) + sm)
    return (sm - sm @ g @ sm) / z


def b_series(
    fam: OperatorFamily,
    s: Projection,
    z: complex,
    tail_tol: float = SERIES_TAIL_TOL,
    max_terms: int = 400,
) -> np.ndarray:
    """Series form ``S G sum_j (-z)^j (A1(z) G)^(j+1) S`` with ``G=(A0+S)^-1``.

    Truncated when the geometric tail bound drops below ``tail_tol`` relative
    to the accumulated norm scale; raises :class:`DomainError` when the
    series is not contractive at this ``z``.
    """
    sm = s.matrix
    g = linalg.inverse(fam.base + sm)
    c = fam.remainder(z) @ g
    q = abs(z) * opnorm(c)
    if q >= 0.999:
        raise DomainError(
            f"series non-contractive at |z|={abs(z):.3e} (factor {q:.3f})"
        )
    scale = max(1.0, opnorm(sm @ g) * opnorm(c))
    power = c.copy()          # (A1 G)^(j+1)
    acc = power.copy()
    coeff = 1.0 + 0j
    cnorm = opnorm(c)
    for j in range(1, max_terms):
        coeff *= -z
        power = power @ c
        acc += coeff * power
        # geometric tail bound for the remaining terms
        tail = scale * q ** (j + 1) * cnorm / max(1e-300, 1.0 - q)
        if tail < tail_tol * scale:
            break
    else:
        raise AccuracyError("series did not reach its tail tolerance")
    return sm @ g @ acc @ sm


def b_operator(
    fam: OperatorFamily,
    s: Projection,
    z: complex,
    cross_tol: float = CROSS_CHECK_TOL,
) -> np.ndarray:
    """Evaluate ``B(z)`` by both the quotient and the series route.

    The two independently computed forms must agree to ``cross_tol``
    (relative, Frobenius) or an :class:`AccuracyError` is raised.
    """
    if s.rank == 0:
        return np.zeros_like(s.matrix)
    bq = b_quotient(fam, s, z)
    bs = b_series(fam, s, z)
    scale = max(np.linalg.norm(bq), 1e-30)
    rel = np.linalg.norm(bq - bs) / scale
    if rel > cross_tol:
        raise AccuracyError(
            f"quotient and series forms of B(z) disagree: rel {rel:.3e}"
        )
    # the series is cancellation-free at small |z|; return it
    return bs


def range_basis(s: Projection) -> np.ndarray:
    """Orthonormal basis (columns) of ``ran(S)``."""
    u, sv, _ = np.linalg.svd(s.matrix)
    k = int(np.sum(sv > 0.5))
    return u[:, :k]


def jn_invert(
    fam: OperatorFamily,
    s: Projection,
    z: complex,
    resid_tol: float = 1e-8,
    verify_series: bool = False,
) -> np.ndarray:
    """Invert ``A(z)`` through the projection formula.

    ``A(z)^-1 = (A(z)+S)^-1 + (1/z)(A(z)+S)^-1 S B(z)^-1 S (A(z)+S)^-1``
    where ``B(z)^-1`` is taken inside ``ran(S)``.  A singular ``B(z)`` means
    ``A(z)`` itself is not invertible and raises
    :class:`SingularMatrixError` (that equivalence is exact, not a numerical
    failure).  The residual ``norm(A(z) X - 1)`` is checked internally.
    """
    az = fam.a(z)
    sm = s.matrix
    g = linalg.inverse(az + sm)
    if s.rank == 0:
        x = g
    else:
        if verify_series:
            b = b_operator(fam, s, z)
        else:
            # the quotient form cancels to O(z); prefer the series when it
            # contracts fast enough to be cheap
            g0 = linalg.inverse(fam.base + sm)
            q_fac = abs(z) * opnorm(fam.remainder(z) @ g0)
            b = b_series(fam, s, z) if q_fac < 0.5 else b_quotient(fam, s, z)
        q = range_basis(s)
        bq = q.conj().T @ b @ q
        try:
            bq_inv = linalg.inverse(bq)
        except SingularMatrixError as exc:
            raise SingularMatrixError(
                "B(z) singular on ran(S): A(z) is not invertible at this z",
                exc.cond,
            ) from exc
        x = g + (1.0 / z) * g @ (q @ bq_inv @ (q.conj().T @ sm)) @ g
    cond = linalg.cond_estimate(az)
    resid = opnorm(az @ x - np.eye(fam.dim))
    if resid > resid_tol * max(1.0, cond):
        raise AccuracyError(
            f"inversion residual {resid:.3e} exceeds {resid_tol:.1e} * cond"
        )
    return x


@dataclass(frozen=True)
class AnnihilationReport:
    """Defects of the contour projector annихilation identities."""

    norm_a0: float
    defect_a0_s: float      # ||A0 S_r|| / ||A0||
    defect_s_a0: float      # ||S_r A0|| / ||A0||
    rank: int
    ok: bool


def check_a0_annihilation(
    a0: np.ndarray,
    psd_tol: float = 1e-10,
    tol: float = 1e-8,
    n_quad: int = 64,
) -> AnnihilationReport:
    """Verify ``A0 S_r = S_r A0 = 0`` for ``A0 = X + iY`` with ``Y >= 0``.

    Preconditions: the skew part must be positive semidefinite to ``psd_tol``
    and 0 must be isolated in the spectrum (both raise
    :class:`HypothesisError` / :class:`ContourError` otherwise).
    """
    a0 = linalg.require_square(a0)
    y = linalg.imaginary_part(a0)
    d = linalg.psd_defect(y)
    if d > psd_tol * max(1.0, opnorm(a0)):
        raise HypothesisError(
            f"imaginary part is not positive semidefinite (defect {d:.3e})"
        )
    sr = linalg.riesz_projection_at_zero(a0, n_quad=n_quad)
    na = opnorm(a0)
    scale = max(na, 1e-30)
    d1 = opnorm(a0 @ sr.matrix) / scale
    d2 = opnorm(sr.matrix @ a0) / scale
    return AnnihilationReport(na, d1, d2, sr.rank, max(d1, d2) <= tol)


@dataclass(frozen=True)
class RieszOrthogonalReport:
    """Comparison of the contour projector with the kernel projector."""

    diff_norm: float
    psd_defect: float
    hypothesis_ok: bool
    ok: bool


def check_riesz_orthogonal(
    a0: np.ndarray,
    rank_tol: float = linalg.DEFAULT_RANK_TOL,
    psd_tol: float = 1e-10,
    tol: float = 1e-8,
    n_quad: int = 64,
) -> RieszOrthogonalReport:
    """Report ``||S_r - S_o||`` for ``A0 = X + iY`` with ``Y >= 0``.

    When the positivity hypothesis fails the report flags it instead of
    raising, so deliberately broken inputs can be used as negative controls.
    """
    a0 = linalg.require_square(a0)
    d = linalg.psd_defect(linalg.imaginary_part(a0))
    hyp_ok = d <= psd_tol * max(1.0, opnorm(a0))
    sr = linalg.riesz_projection_at_zero(a0, n_quad=n_quad)
    so = linalg.kernel_projector(a0, rank_tol)
    diff = opnorm(sr.matrix - so.matrix)
    return RieszOrthogonalReport(diff, d, hyp_ok, hyp_ok and diff <= tol)


@dataclass(frozen=True)
class FactorAnnihilationReport:
    defect_zs: float       # max_m ||Z_m S|| / max_m ||Z_m||
    defect_sz: float       # max_m ||S Z_m*|| / max_m ||Z_m||
    ok: bool


def check_factor_annihilation(
    zs: Sequence[np.ndarray],
    x: np.ndarray,
    s: Projection,
    tol: float = 1e-8,
    pre_tol: float = 1e-8,
) -> FactorAnnihilationReport:
    """Verify ``Z_m S = 0`` and ``S Z_m* = 0`` given ``A0 S = 0 = S A0``.

    ``A0 := X + i sum_m Z_m* Z_m`` is assembled from the factors; the
    annihilation precondition on ``A0`` is checked first and raises
    :class:`HypothesisError` when violated.
    """
    x = linalg.require_square(x)
    a0 = x.astype(complex).copy()
    for zm in zs:
        zm = np.asarray(zm, dtype=complex)
        a0 += 1j * zm.conj().T @ zm
    scale = max(1.0, opnorm(a0))
    pre = max(opnorm(a0 @ s.matrix), opnorm(s.matrix @ a0)) / scale
    if pre > pre_tol:
        raise HypothesisError(f"A0 does not annihilate S (defect {pre:.3e})")
    zscale = max([opnorm(np.asarray(zm, dtype=complex)) for zm in zs] + [1e-30])
    d1 = max(opnorm(np.asarray(zm, dtype=complex) @ s.matrix) for zm in zs) / zscale
    d2 = max(
        opnorm(s.matrix @ np.asarray(zm, dtype=complex).conj().T) for zm in zs
    ) / zscale
    return FactorAnnihilationReport(d1, d2, max(d1, d2) <= tol)


@dataclass
class LadderLevel:
    """One level of an iterated projection ladder.

    ``projection`` is the kernel projector of this level's leading operator
    inside the carrier subspace (the previous level's range); ``family``
    evaluates the level's operator family (supported on the carrier);
    ``terminal`` marks an invertible leading operator (empty kernel).
    """

    level: int
    projection: Projection
    leading: np.ndarray
    family: OperatorFamily
    terminal: bool
    carrier: np.ndarray | None = None
    certificate: ConditionReport | None = None


def _next_family(
    fam: OperatorFamily, s: Projection, complement: np.ndarray
) -> OperatorFamily:
    """Family for the next ladder level: ``z -> B(z)`` recentred at 0.

    All inverses are taken on the carrier subspace by augmenting with the
    identity on its orthogonal complement.  The new base is the exact value
    ``B(0) = S G A1(0) G S`` with ``G = (A0 + S)^-1`` (carrier-augmented);
    the remainder uses the stable quotient away from 0.
    """
    sm = s.matrix
    g = linalg.inverse(fam.base + sm + complement)
    base_next = sm @ g @ fam.remainder(0.0) @ g @ sm

    def b_quot(z: complex) -> np.ndarray:
        gz = linalg.inverse(fam.a(z) + sm + complement)
        return (sm - sm @ gz @ sm) / z

    def remainder_next(z: complex) -> np.ndarray:
        if z == 0:
            # one-sided derivative via a short step
            z = 1e-7 * fam.radius
        return (b_quot(z) - base_next) / z

    bound = 4.0 * (1.0 + opnorm(fam.base) + fam.bound) ** 3 * opnorm(g) ** 2
    return OperatorFamily(
        base=base_next,
        remainder=remainder_next,
        bound=bound,
        radius=fam.radius,
        sector=fam.sector,
    )


def build_ladder(
    fam: OperatorFamily,
    max_depth: int = 4,
    rank_tol: float = linalg.DEFAULT_RANK_TOL,
) -> list[LadderLevel]:
    """Iterate the inversion scheme until the leading operator is invertible.

    Level ``j`` holds ``S_j``, the kernel projector of ``I_j(0)`` inside the
    previous level's range, and the family for ``I_{j+1}``.  Exhausting
    ``max_depth`` without termination is reported on the last level
    (``terminal=False``), not raised.
    """
    if max_depth > 4:
        raise DomainError("ladders deeper than 4 are outside the supported regime")
    n = fam.dim
    levels: list[LadderLevel] = []
    current = fam
    carrier = np.eye(n, dtype=complex)
    for j in range(max_depth + 1):
        complement = np.eye(n, dtype=complex) - carrier
        # kernel inside the carrier: augment by the identity on the complement
        s = linalg.kernel_projector(current.base + complement, rank_tol)
        if s.rank == 0:
            levels.append(
                LadderLevel(j, s, current.base.copy(), current, terminal=True,
                            carrier=carrier)
            )
            return levels
        cert = verify_conditions(current.base + complement, s)
        if not cert.ok:
            raise HypothesisError(
                f"level {j}: inversion conditions fail "
                f"(margin {cert.cond_i_margin:.3e}, defect {cert.cond_ii_defect:.3e})"
            )
        levels.append(
            LadderLevel(j, s, current.base.copy(), current, terminal=False,
                        carrier=carrier, certificate=cert)
        )
        if j == max_depth:
            return levels
        current = _next_family(current, s, complement)
        carrier = s.matrix
    return levels


@dataclass(frozen=True)
class FinalStepResult:
    """Inverse of a terminal-level family plus a boundedness probe."""

    inverse: np.ndarray
    bounded: bool
    growth_exponent: float
    sampled_norms: tuple[tuple[float, float], ...]


def two_term_invert(i3: np.ndarray, s3: Projection) -> np.ndarray:
    """``I3^-1`` from ``(I3+S3)^-1`` and the Schur block on ``ran(S3)``.

    ``I3^-1 = G + G S3 {S3 - S3 G S3}^-1 S3 G`` with ``G = (I3+S3)^-1``.
    Raises :class:`SingularMatrixError` when the Schur block is singular
    (that would mean the family is genuinely singular at this point).
    """
    g = linalg.inverse(i3 + s3.matrix)
    if s3.rank == 0:
        return g
    q = range_basis(s3)
    block = q.conj().T @ (s3.matrix - s3.matrix @ g @ s3.matrix) @ q
    try:
        block_inv = linalg.inverse(block)
    except SingularMatrixError as exc:
        raise SingularMatrixError(
            "final-step Schur block singular: family genuinely singular", exc.cond
        ) from exc
    return g + g @ (q @ block_inv @ (q.conj().T @ s3.matrix)) @ g


def final_step_invert(
    i3fam: OperatorFamily,
    z: complex,
    n_quad: int = 64,
    probe_decades: tuple[float, float] = (1e-5, 1e-2),
    points_per_decade: int = 8,
) -> FinalStepResult:
    """Invert the terminal family at ``z`` and probe ``norm(I3(k)^-1)``.

    ``S3`` is the contour projector of ``I3(0)`` at 0 (zero projection when 0
    is not in the spectrum).  The probe samples ``|k|`` geometrically on the
    positive real ray and fits the growth exponent of the inverse norm; the
    family is reported bounded when the norm does not grow as ``k -> 0``.
    """
    i30 = i3fam.base
    s3 = linalg.riesz_projection_at_zero(i30, n_quad=n_quad)
    inv_z = two_term_invert(i3fam.a(z), s3)

    lo, hi = probe_decades
    ndec = np.log10(hi / lo)
    ks = np.geomspace(lo, hi, max(2, int(round(ndec * points_per_decade)) + 1))
    samples = []
    for k in ks:
        samples.append((float(k), opnorm(two_term_invert(i3fam.a(k), s3))))
    logs = np.log(np.array(samples))
    slope = float(np.polyfit(logs[:, 0], logs[:, 1], 1)[0])
    bounded = slope >= -0.1
    return FinalStepResult(inv_z, bounded, slope, tuple(samples))


# ---------------------------------------------------------------------------
# JSON family descriptions
# ---------------------------------------------------------------------------

FAMILY_SCHEMA_VERSION = 1


def _matrix_from_json(entries) -> np.ndarray:
    """Matrix from a list of rows of ``[re, im]`` pairs."""
    rows = []
    for row in entries:
        rows.append([complex(re, im) for re, im in row])
    return np.asarray(rows, dtype=complex)


def _matrix_to_json(m: np.ndarray):
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(m, dtype=complex)]


def family_from_dict(doc: dict) -> OperatorFamily:
    """Build an :class:`OperatorFamily` from its JSON description.

    Schema (version 1)::

        {"schema_version": 1,
         "base": [[[re, im], ...], ...],
         "remainder": {"kind": "polynomial", "coeffs": [matrix, ...]}
                      | {"kind": "rational", "num": [matrix, ...],
                         "den": [c0, c1, ...]},
         "bound": float, "radius": float,
         "sector": [lo, hi] | null}

    Polynomial remainder: ``A1(z) = sum_k coeffs[k] z^k``.  Rational:
    ``A1(z) = (sum_k num[k] z^k) / (sum_k den[k] z^k)`` with scalar real
    denominator coefficients, ``den`` nonvanishing on the domain.
    """
    if doc.get("schema_version") != FAMILY_SCHEMA_VERSION:
        raise DomainError("unsupported family schema_version")
    base = _matrix_from_json(doc["base"])
    rem = doc["remainder"]
    kind = rem.get("kind")
    if kind == "polynomial":
        coeffs = [_matrix_from_json(c) for c in rem["coeffs"]]

        def remainder(z: complex) -> np.ndarray:
            acc = np.zeros_like(base)
            zz = 1.0 + 0j
            for c in coeffs:
                acc = acc + zz * c
                zz *= z
            return acc

    elif kind == "rational":
        num = [_matrix_from_json(c) for c in rem["num"]]
        den = [float(c) for c in rem["den"]]

        def remainder(z: complex) -> np.ndarray:
            acc = np.zeros_like(base)
            zz = 1.0 + 0j
            for c in num:
                acc = acc + zz * c
                zz *= z
            q = 0.0 + 0j
            zz = 1.0 + 0j
            for c in den:
                q += c * zz
                zz *= z
            if abs(q) < 1e-14:
                raise DomainError("rational remainder denominator vanishes")
            return acc / q

    else:
        raise DomainError(f"unknown remainder kind {kind!r}")
    sector = tuple(doc["sector"]) if doc.get("sector") else None
    return OperatorFamily(
        base=base,
        remainder=remainder,
        bound=float(doc["bound"]),
        radius=float(doc["radius"]),
        sector=sector,
    )


def load_family(path) -> OperatorFamily:
    with open(path, "r", encoding="utf-8") as fh:
        return family_from_dict(json.load(fh))


def random_family_dict(
    rng: np.random.Generator, dim: int, kernel_dim: int, radius: float = 0.05
) -> dict:
    """Random structured family document with an engineered kernel.

    The base is ``X + i Z* Z`` with a shared kernel of dimension
    ``kernel_dim``, so the natural projection hypotheses hold; the kernel is
    made exactly representable (a zero block conjugated by a random signed
    permutation, both exact in floating point), keeping the hypothesis
    defect at true zero rather than at rounding scale.  The remainder is a
    dense affine polynomial.
    """
    if kernel_dim >= dim:
        raise DimensionError("kernel_dim must be smaller than dim")
    m = dim - kernel_dim
    xb = rng.normal(size=(m, m))
    xb = (xb + xb.T) / 2 + np.diag(rng.choice([-1.0, 1.0], size=m))
    x = np.zeros((dim, dim))
    x[:m, :m] = xb
    zb = rng.normal(size=(max(1, m), dim))
    zb[:, m:] = 0.0
    perm = rng.permutation(dim)
    signs = rng.choice([-1.0, 1.0], size=dim)
    p = np.zeros((dim, dim))
    p[perm, np.arange(dim)] = signs  # exact orthogonal matrix
    base = p @ (x + 1j * zb.T @ zb) @ p.T
    c0 = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    c1 = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    c0 /= max(1.0, opnorm(c0))
    c1 /= max(1.0, opnorm(c1))
    return {
        "schema_version": FAMILY_SCHEMA_VERSION,
        "base": _matrix_to_json(base),
        "remainder": {
            "kind": "polynomial",
            "coeffs": [_matrix_to_json(c0), _matrix_to_json(c1)],
        },
        "bound": 2.0,
        "radius": radius,
        "sector": None,
    }
