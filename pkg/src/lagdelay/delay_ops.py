"""Laguerre-domain model of a pure time delay.

The delay acts on Laguerre spectra as a causal convolution with Markov
parameters h_m(kappa) = e^{-kappa/2} L_m(kappa), kappa = 2 p tau.  Three
consecutive Markov parameters satisfy a linear relation in kappa, which
stacks into the vector identity A = kappa B and yields a closed-form delay
estimate from any (noisy) Markov sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .basis import assoc_laguerre_sequence
from .errors import DegenerateBError, SingularInputError

# |u_0| below this is treated as a singular input operator.
U0_TOLERANCE = 1e-12

# B^T B below this means every usable Markov parameter is numerically zero.
BTB_TOLERANCE = 1e-20


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Finite continuous Laguerre coefficient vector tied to a parameter p."""

    coeffs: np.ndarray
    p: float

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.atleast_1d(np.asarray(self.coeffs, dtype=float)))

    def __len__(self) -> int:
        return self.coeffs.size

    @property
    def energy(self) -> float:
        """Squared 2-norm of the signal (Parseval)."""
        return float(self.coeffs @ self.coeffs)


@dataclass(frozen=True, eq=False)
class MarkovSequence:
    """Delay-operator Markov parameters h_0 ... h_{M-1} for kappa = 2 p tau."""

    kappa: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class DelayLinearSystem:
    """Vectors A, B with A = kappa B for exact Markov sequences, plus the
    banded coefficient matrix Omega used to build A."""

    omega: np.ndarray
    vec_a: np.ndarray
    vec_b: np.ndarray


def markov_params(kappa: float, m_count: int) -> MarkovSequence:
    """First m_count Markov parameters of a delay with normalized value kappa."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if m_count < 1:
        raise ValueError("need at least one Markov parameter")
    values = np.exp(-kappa / 2.0) * assoc_laguerre_sequence(kappa, m_count)
    return MarkovSequence(kappa=kappa, values=values)


def delay_spectrum(input_spec: Spectrum, kappa: float, out_len: int) -> Spectrum:
    """Spectrum of the delayed signal: causal convolution of the input
    coefficients with the Markov parameters, truncated to out_len."""
    if len(input_spec) == 0:
        raise ValueError("input spectrum is empty")
    if out_len < 1:
        raise ValueError("output length must be >= 1")
    h = markov_params(kappa, out_len).values
    y = np.convolve(h, input_spec.coeffs)[:out_len]
    return Spectrum(coeffs=y, p=input_spec.p)


def build_toeplitz(input_spec: Spectrum, size: int) -> np.ndarray:
    """Lower-triangular Toeplitz operator T(U) with (j, k) entry u_{j-k}.

    Coefficients beyond the stored spectrum are zero.  Raises
    SingularInputError when u_0 is numerically zero.
    """
    if size < 1:
        raise ValueError("size must be >= 1")
    u = input_spec.coeffs
    if abs(u[0]) < U0_TOLERANCE:
        raise SingularInputError(
            f"leading input coefficient u_0 = {u[0]:.3e} is below {U0_TOLERANCE:.0e}; "
            "the input design must satisfy u_0 != 0"
        )
    col = np.zeros(size)
    col[: min(size, u.size)] = u[:size]
    row = np.zeros(size)
    row[0] = col[0]
    return toeplitz(col, row)


def build_omega(m_count: int) -> np.ndarray:
    """Coefficient matrix of the three-term relations kappa h_m =
    -(m-1) h_{m-1} + 2m h_m - (m+1) h_{m+1}, rows m = 0..M-2.

    The h_{M-1} column falls outside the matrix; its contribution is the
    separate tail term applied by assemble_ab.
    """
    if m_count < 3:
        raise ValueError("need at least three Markov parameters")
    n = m_count - 1
    omega = np.zeros((n, n))
    for m in range(n):
        omega[m, m] = 2.0 * m
        if m >= 1:
            omega[m, m - 1] = -(m - 1.0)
        if m + 1 <= n - 1:
            omega[m, m + 1] = -(m + 1.0)
    return omega


def assemble_ab(h: MarkovSequence | np.ndarray) -> DelayLinearSystem:
    """Stack the delay relations: B = h_{0..M-2}, A = Omega B - (M-1) h_{M-1} e.

    For exact Markov sequences A = kappa B holds entrywise.
    """
    values = h.values if isinstance(h, MarkovSequence) else np.asarray(h, dtype=float)
    m_count = values.size
    if m_count < 3:
        raise ValueError("need at least three Markov parameters")
    omega = build_omega(m_count)
    vec_b = values[: m_count - 1].copy()
    vec_a = omega @ vec_b
    vec_a[-1] -= (m_count - 1.0) * values[m_count - 1]
    return DelayLinearSystem(omega=omega, vec_a=vec_a, vec_b=vec_b)


def closed_form_delay(sys: DelayLinearSystem, p: float) -> float:
    """Delay from the vector identity A = 2 p tau B:
    tau = (B^T A) / (2 p B^T B)."""
    btb = float(sys.vec_b @ sys.vec_b)
    if btb < BTB_TOLERANCE:
        raise DegenerateBError(
            f"B^T B = {btb:.3e} is numerically zero; all usable Markov "
            "parameters vanished, kappa cannot be estimated"
        )
    return float(sys.vec_b @ sys.vec_a) / (2.0 * p * btb)
