"""Channel trace rows, scattering matrices and continuity probes.

A channel is a pair ``(n, sigma)`` of transverse mode and direction, open at
energy ``lam`` when ``lambda_n < lam``.  The trace row of a channel is the
grid functional

    row[(i,k)] = 2^(-1/2) (lam-l_n)^(-1/4) (2 pi)^(-1/2)
                 conj(f_n(omega_i)) exp(-i sigma sqrt(lam-l_n) x_k)
                 v(omega_i, x_k) sqrt(w_I),

i.e. the energy-shell restriction of the unitary Fourier transform composed
with multiplication by ``v``.  The channel scattering matrix is

    S(lam) = 1 - 2 pi i F (u + v R0(lam) v)^-1 F*            (rows stacked)

and near thresholds / eigenvalues the entries are evaluated through the
expansion machinery:

    S(lam-k^2) - delta = -2 pi i F(lam-k^2) M(lam, k) F(lam-k^2)*.

The discrete optical identity ``B_n* B_n = Im(v (P_n (x) R0) v)`` holds
exactly on the grid (it pins the Fourier normalization), which makes the
discrete scattering matrix unitary to rounding at regular energies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import birman, expansion, linalg
from .errors import ChannelClosedError, DomainError, EigenvalueHitError, SingularMatrixError
from .expansion import EigenvalueLadder, ThresholdLadder, fit_exponent
from .linalg import opnorm
from .waveguide import WaveguideModel


@dataclass(frozen=True)
class TraceRow:
    """Grid coefficients of one channel's shell functional, times ``v``."""

    coefficients: np.ndarray
    lam: float
    n: int
    sigma: int
    flux_factor: float      # (lam - lambda_n)^(-1/4)


def open_channels(lam: float, model: WaveguideModel) -> list[tuple[int, int]]:
    """Channels ``(n, sigma)`` open at ``lam``, mode-major, ``-`` before ``+``."""
    out = []
    for n in range(1, model.n_max + 1):
        if model.eigenvalue(n) < lam:
            out.append((n, -1))
            out.append((n, +1))
    return out


def _row_core(lam: float, n: int, sigma: int, model: WaveguideModel,
              x_weight: np.ndarray | None = None) -> np.ndarray:
    ln = model.eigenvalue(n)
    if not lam > ln:
        raise ChannelClosedError(f"channel (n={n}, sigma={sigma:+d}) closed at lam={lam}")
    mu = math.sqrt(lam - ln)
    grid = model.grid
    f = model.modes[n - 1].samples
    phase = np.exp(-1j * sigma * mu * grid.x_nodes)
    if x_weight is not None:
        phase = phase * x_weight
    sw = grid.composite_sqrt_weights().reshape(grid.n_omega, grid.n_x)
    coeff = (lam - ln) ** (-0.25) / math.sqrt(2.0) / math.sqrt(2.0 * math.pi)
    mat = coeff * np.conj(f)[:, None] * phase[None, :] * model.potential.v * sw
    return mat.reshape(-1)


def trace_row(lam: float, n: int, sigma: int, model: WaveguideModel) -> TraceRow:
    """Shell functional of channel ``(n, sigma)`` composed with ``v``."""
    row = _row_core(lam, n, sigma, model)
    return TraceRow(row, lam, n, sigma, (lam - model.eigenvalue(n)) ** (-0.25))


def trace_row_q(lam: float, n: int, sigma: int, model: WaveguideModel) -> np.ndarray:
    """Row of the same functional with an extra longitudinal ``x`` factor."""
    return _row_core(lam, n, sigma, model, x_weight=model.grid.x_nodes)


def gamma_row(j: int, n: int, model: WaveguideModel) -> np.ndarray:
    """Row of ``gamma_j(n)`` composed with ``v``: the ``x^j``-moment of the
    mode-``n`` component, normalized by ``1/(2 j! sqrt(pi))``."""
    grid = model.grid
    f = model.modes[n - 1].samples
    sw = grid.composite_sqrt_weights().reshape(grid.n_omega, grid.n_x)
    xj = grid.x_nodes**j
    coeff = 1.0 / (2.0 * math.factorial(j) * math.sqrt(math.pi))
    mat = coeff * np.conj(f)[:, None] * xj[None, :] * model.potential.v * sw
    return mat.reshape(-1)


def b_rows(lam: float, n: int, model: WaveguideModel) -> np.ndarray:
    """Stacked ``sqrt(pi) * (row(-), row(+))`` for mode ``n`` at ``lam``.

    Its Gram matrix reproduces the skew part of the mode's sandwiched
    resolvent exactly on the grid (discrete optical identity).
    """
    rm = trace_row(lam, n, -1, model).coefficients
    rp = trace_row(lam, n, +1, model).coefficients
    return math.sqrt(math.pi) * np.vstack([rm, rp])


@dataclass(frozen=True)
class SMatrix:
    """Open-channel scattering matrix at one energy."""

    lam: float
    channels: tuple[tuple[int, int], ...]
    matrix: np.ndarray
    unitarity_defect: float

    def entry(self, n: int, sigma: int, np_: int, sigmap: int) -> complex:
        i = self.channels.index((n, sigma))
        j = self.channels.index((np_, sigmap))
        return complex(self.matrix[i, j])

    def block(self, members: tuple[int, ...], sigma: int,
              members_p: tuple[int, ...], sigmap: int) -> np.ndarray:
        """Matrix block across two degeneracy groups (fixed directions)."""
        rows = [self.channels.index((n, sigma)) for n in members]
        cols = [self.channels.index((n, sigmap)) for n in members_p]
        return self.matrix[np.ix_(rows, cols)]


def channel_smatrix(
    lam: float,
    model: WaveguideModel,
    tail_tol: float = 1e-4,
    n_max: int | None = None,
) -> SMatrix:
    """Assemble ``S(lam)`` over all open channels at a regular energy.

    Raises :class:`EigenvalueHitError` when the boundary operator is
    singular to working tolerance (an eigenvalue or threshold; use the
    expansion machinery there).
    """
    chans = open_channels(lam, model)
    if not chans:
        raise DomainError(f"no open channels at lam={lam}")
    op = birman.bs_operator(birman.SpectralPoint(lam, 0.0), model, tail_tol, n_max)
    rows = np.array([trace_row(lam, n, s, model).coefficients for (n, s) in chans])
    try:
        x = linalg.solve(op.matrix, rows.conj().T)
    except SingularMatrixError as exc:
        raise EigenvalueHitError(
            f"boundary operator singular at lam={lam}; use the expansion machinery"
        ) from exc
    s = np.eye(len(chans), dtype=complex) - 2j * np.pi * rows @ x
    defect = opnorm(s.conj().T @ s - np.eye(len(chans)))
    return SMatrix(lam, tuple(chans), s, defect)


def unitarity_budget(lam: float, model_coarse: WaveguideModel,
                     model_fine: WaveguideModel, tail_tol: float = 1e-4) -> float:
    """Self-calibrating unitarity budget: ten times the Richardson-style
    two-resolution difference of the S-matrix entries."""
    s1 = channel_smatrix(lam, model_coarse, tail_tol)
    s2 = channel_smatrix(lam, model_fine, tail_tol)
    k = min(s1.matrix.shape[0], s2.matrix.shape[0])
    return 10.0 * float(np.max(np.abs(s1.matrix[:k, :k] - s2.matrix[:k, :k])))


# ---------------------------------------------------------------------------
# Trace-row expansions at a threshold
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class F0ExpansionReport:
    lam: float
    n: int
    sigma: int
    open_exponent: float       # remainder exponent of the open-channel form
    open_n_used: int
    opening_exponent: float    # remainder exponent of the opening form
    opening_n_used: int
    open_target: float = 3.9
    opening_target: float = 1.4

    @property
    def ok(self) -> bool:
        open_ok = self.open_exponent >= self.open_target or self.open_n_used < 3
        opening_ok = (
            self.opening_exponent >= self.opening_target or self.opening_n_used < 3
        )
        return open_ok and opening_ok

    def to_dict(self):
        return {
            "lam": self.lam, "n": self.n, "sigma": self.sigma,
            "open_exponent": self.open_exponent,
            "opening_exponent": self.opening_exponent,
            "ok": self.ok,
        }


def f0_expansion_check(
    lam0: float,
    n: int,
    sigma: int,
    kappas,
    model: WaveguideModel,
    n_opening: int | None = None,
) -> F0ExpansionReport:
    """Measure both trace-row expansions near the threshold ``lam0``.

    Open channel (``lambda_n < lam0``): the row at ``lam0 - k^2`` minus its
    quadratic model built from the row and its ``x``-weighted companion at
    ``lam0`` must shrink like ``k^4``.  Opening channel (``lambda_n = lam0``,
    approach from the right, ``kappa = -it``): the row must match
    ``t^(-1/2) gamma_0 - i sigma t^(1/2) gamma_1`` up to ``O(t^(3/2))``.
    """
    ln = model.eigenvalue(n)
    if not ln < lam0:
        raise ChannelClosedError("pass an open channel n; opening mode is separate")
    delta = lam0 - ln
    row0 = trace_row(lam0, n, sigma, model).coefficients
    rowq = trace_row_q(lam0, n, sigma, model)
    vals = []
    for k in kappas:
        k = complex(k)
        lamk = (lam0 - k**2).real
        actual = trace_row(lamk, n, sigma, model).coefficients
        modeled = row0 * (1.0 + k**2 / (4.0 * delta)) + (
            1j * sigma * k**2 / (2.0 * math.sqrt(delta))
        ) * rowq
        vals.append(float(np.linalg.norm(actual - modeled)))
    floor = 1e-12 * max(1.0, float(np.linalg.norm(row0)))
    open_expo, open_used = fit_exponent(kappas, vals, floor)

    m_open = n_opening if n_opening is not None else model.group_at(lam0).members[0]
    g0 = gamma_row(0, m_open, model)
    g1 = gamma_row(1, m_open, model)
    vals2, ts = [], []
    for k in kappas:
        t = abs(complex(k))
        ts.append(t)
        lamk = lam0 + t**2          # kappa = -it: z = lam0 + t^2 > lam0
        actual = trace_row(lamk, m_open, sigma, model).coefficients
        modeled = t ** (-0.5) * g0 - 1j * sigma * t**0.5 * g1
        vals2.append(float(np.linalg.norm(actual - modeled)))
    floor2 = 1e-12 * max(1.0, float(np.linalg.norm(g0)))
    opening_expo, opening_used = fit_exponent(ts, vals2, floor2)
    return F0ExpansionReport(
        lam0, n, sigma, open_expo, open_used, opening_expo, opening_used
    )


# ---------------------------------------------------------------------------
# Continuity probes
# ---------------------------------------------------------------------------

def _entry_via_expansion(
    ladder: ThresholdLadder | EigenvalueLadder,
    kappa: complex,
    chan: tuple[int, int],
    chan_p: tuple[int, int],
    mmat: np.ndarray,
) -> complex:
    """One channel entry of ``S(lam - kappa^2)`` from the expansion matrix."""
    model = ladder.model
    lamk = (ladder.lam - complex(kappa) ** 2).real
    n, s = chan
    np_, sp = chan_p
    row_l = trace_row(lamk, n, s, model).coefficients
    row_r = trace_row(lamk, np_, sp, model).coefficients
    delta = 1.0 if chan == chan_p else 0.0
    return complex(delta - 2j * np.pi * row_l @ mmat @ np.conj(row_r))


@dataclass
class ProbeReport:
    """Limit behavior of one channel entry along the two approach rays."""

    lam: float
    chan: tuple[int, int]
    chan_p: tuple[int, int]
    h_values: list[float]
    left_entries: list[complex] = field(default_factory=list)
    right_entries: list[complex] = field(default_factory=list)
    left_cauchy: list[float] = field(default_factory=list)
    right_cauchy: list[float] = field(default_factory=list)
    gap: float | None = None           # |left - right| at the finest h
    gaps_per_h: list[float] = field(default_factory=list)
    terminal_abs: float | None = None  # |entry| at the finest h (right ray)
    fits: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "lam": self.lam,
            "chan": list(self.chan),
            "chan_p": list(self.chan_p),
            "h_values": self.h_values,
            "left": [[e.real, e.imag] for e in self.left_entries],
            "right": [[e.real, e.imag] for e in self.right_entries],
            "left_cauchy": self.left_cauchy,
            "right_cauchy": self.right_cauchy,
            "gap": self.gap,
            "gaps_per_h": self.gaps_per_h,
            "terminal_abs": self.terminal_abs,
            "fits": self.fits,
        }


def threshold_continuity_probes(
    lam0: float,
    pairs: list[tuple[tuple[int, int], tuple[int, int]]],
    h_values,
    model: WaveguideModel,
    ladder: ThresholdLadder | None = None,
    eps: float = 1e-2,
    tail_tol: float = 1e-3,
) -> list[ProbeReport]:
    """Trace channel entries of ``S(lam0 - kappa^2)`` toward the threshold.

    The expansion matrix is evaluated once per kappa and shared across all
    pairs.  Left ray ``kappa = h`` (energy below ``lam0``) is evaluated only
    for pairs whose channels are both open strictly below the threshold; the
    right ray ``kappa = -ih`` (energy above) always.  Cauchy defects along
    each ray, the left/right gap and the terminal magnitude are recorded
    per pair (``gap``/``terminal_abs`` refer to the finest ``h``); the
    limits themselves are the caller's assertion.
    """
    if ladder is None:
        ladder = expansion.build_threshold_ladder(
            model, lam0, eps=eps, tail_tol=tail_tol
        )
    hs = sorted(float(h) for h in h_values)
    reps = [ProbeReport(lam0, c, cp, hs) for (c, cp) in pairs]
    any_left = any(
        model.eigenvalue(c[0]) < lam0 - 1e-12 and model.eigenvalue(cp[0]) < lam0 - 1e-12
        for (c, cp) in pairs
    )
    for h in hs:
        m_right = expansion.m_function(ladder, -1j * h)
        m_left = expansion.m_function(ladder, complex(h)) if any_left else None
        for rep, (c, cp) in zip(reps, pairs):
            both_open = (
                model.eigenvalue(c[0]) < lam0 - 1e-12
                and model.eigenvalue(cp[0]) < lam0 - 1e-12
            )
            rep.right_entries.append(
                _entry_via_expansion(ladder, -1j * h, c, cp, m_right)
            )
            if both_open:
                rep.left_entries.append(
                    _entry_via_expansion(ladder, complex(h), c, cp, m_left)
                )
    for rep in reps:
        rep.left_cauchy = [
            abs(a - b) for a, b in zip(rep.left_entries, rep.left_entries[1:])
        ]
        rep.right_cauchy = [
            abs(a - b) for a, b in zip(rep.right_entries, rep.right_entries[1:])
        ]
        if rep.left_entries:
            rep.gap = abs(rep.left_entries[0] - rep.right_entries[0])
        rep.gaps_per_h = [
            abs(a - b) for a, b in zip(rep.left_entries, rep.right_entries)
        ]
        rep.terminal_abs = abs(rep.right_entries[0])
    return reps


def threshold_continuity_probe(
    lam0: float,
    chan: tuple[int, int],
    chan_p: tuple[int, int],
    h_values,
    model: WaveguideModel,
    ladder: ThresholdLadder | None = None,
    eps: float = 1e-2,
    tail_tol: float = 1e-3,
) -> ProbeReport:
    """Single-pair convenience wrapper for
    :func:`threshold_continuity_probes`."""
    return threshold_continuity_probes(
        lam0, [(chan, chan_p)], h_values, model, ladder, eps, tail_tol
    )[0]


def eigenvalue_continuity_probe(
    lam: float,
    chan: tuple[int, int],
    chan_p: tuple[int, int],
    h_values,
    model: WaveguideModel,
    ladder: EigenvalueLadder | None = None,
    eps: float = 1e-2,
    tail_tol: float = 1e-3,
) -> ProbeReport:
    """Trace one open/open entry of ``S(lam - kappa^2)`` at an eigenvalue.

    Both rays are evaluated (both channels must be open just below ``lam``);
    additionally fits the vanishing rate of the rows contracted with the
    eigenvector space (expected quadratic when the kernel is nontrivial,
    identically zero under symmetry protection).
    """
    if ladder is None:
        ladder = expansion.build_eigenvalue_ladder(model, lam, eps=eps, tail_tol=tail_tol)
    hs = sorted(float(h) for h in h_values)
    rep = ProbeReport(lam, chan, chan_p, hs)
    m_cache: dict[complex, np.ndarray] = {}

    def mval(kappa: complex) -> np.ndarray:
        if kappa not in m_cache:
            m_cache[kappa] = expansion.m_function_at_eigenvalue(ladder, kappa)
        return m_cache[kappa]

    for h in hs:
        rep.left_entries.append(
            _entry_via_expansion(ladder, h, chan, chan_p, mval(complex(h)))
        )
        rep.right_entries.append(
            _entry_via_expansion(ladder, -1j * h, chan, chan_p, mval(-1j * h))
        )
    rep.left_cauchy = [abs(a - b) for a, b in zip(rep.left_entries, rep.left_entries[1:])]
    rep.right_cauchy = [abs(a - b) for a, b in zip(rep.right_entries, rep.right_entries[1:])]
    rep.gap = abs(rep.left_entries[0] - rep.right_entries[0])
    rep.gaps_per_h = [abs(a - b) for a, b in zip(rep.left_entries, rep.right_entries)]

    if ladder.basis is not None:
        vals, ks = [], []
        for h in hs:
            lamk = lam - h * h
            row = trace_row(lamk, chan[0], chan[1], model).coefficients
            vals.append(float(np.linalg.norm(row @ ladder.basis)))
            ks.append(h)
        row0 = trace_row(lam, chan[0], chan[1], model).coefficients
        floor = 1e-12 * max(1.0, float(np.linalg.norm(row0)))
        expo, used = fit_exponent(ks, vals, floor)
        rep.fits["row_vs_kernel_exponent"] = expo
        rep.fits["row_vs_kernel_n_used"] = used
    return rep


def smoothness_probe(
    lam: float,
    model: WaveguideModel,
    steps=(1e-2, 5e-3, 2.5e-3, 1.25e-3),
    tail_tol: float = 1e-4,
) -> list[float]:
    """Cauchy defects of the finite-difference derivative of ``S`` entries
    under step halving (smoothness off the thresholds and eigenvalues)."""
    ders = []
    for h in steps:
        sp = channel_smatrix(lam + h, model, tail_tol)
        sm = channel_smatrix(lam - h, model, tail_tol)
        ders.append((sp.matrix - sm.matrix) / (2.0 * h))
    return [float(np.max(np.abs(a - b))) for a, b in zip(ders, ders[1:])]
