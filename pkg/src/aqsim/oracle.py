"""Ground-truth machinery: dense propagation and statistical checks.

Everything here is independent of the kinetics code paths so acceptance tests
compare two genuinely different computations.
"""

from __future__ import annotations

import numpy as np
from scipy import stats

from .errors import DegenerateExpected, DimensionMismatch, NotHermitian

_HERMITIAN_TOL = 1e-10


def _check_hermitian(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {h.shape}")
    scale = max(1.0, float(np.abs(h).max()))
    if np.abs(h - h.conj().T).max() > _HERMITIAN_TOL * scale:
        raise NotHermitian("matrix is not Hermitian within tolerance")
    return h


def expm_taylor(a: np.ndarray) -> np.ndarray:
    """exp(a) by scaling-and-squaring with a machine-precision Taylor core."""
    a = np.asarray(a, dtype=np.complex128)
    n = a.shape[0]
    norm = np.linalg.norm(a, 1)
    squarings = max(0, int(np.ceil(np.log2(norm / 0.5)))) if norm > 0.5 else 0
    b = a / (2 ** squarings)
    result = np.eye(n, dtype=np.complex128)
    term = np.eye(n, dtype=np.complex128)
    for k in range(1, 60):
        term = term @ b / k
        result = result + term
        if np.abs(term).max() <= 1e-18 * max(1.0, np.abs(result).max()):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def propagator(h: np.ndarray, t: float) -> np.ndarray:
    """U(t) = exp(-iHt), verified unitary to 1e-10."""
    h = _check_hermitian(h)
    u = expm_taylor(-1j * t * h)
    defect = np.abs(u.conj().T @ u - np.eye(h.shape[0])).max()
    if defect > 1e-10:
        raise NotHermitian(f"propagator unitarity defect {defect:.3e}")
    return u


def exact_propagate(h: np.ndarray, psi0, t: float) -> np.ndarray:
    """psi(t) = exp(-iHt) psi0 for piecewise-constant H."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    psi0 = np.asarray(psi0, dtype=np.complex128)
    h = _check_hermitian(h)
    if psi0.shape != (h.shape[0],):
        raise DimensionMismatch(
            f"state dimension {psi0.shape} does not match H {h.shape}")
    return propagator(h, t) @ psi0


def schedule_propagate(blocks: list[tuple[np.ndarray, float]], psi0) -> np.ndarray:
    """Apply exp(-iH_b t_b) for each (H_b, t_b) in order (leftmost first)."""
    psi = np.asarray(psi0, dtype=np.complex128)
    for h, t in blocks:
        psi = exact_propagate(h, psi, t)
    return psi


def fidelity(psi_a, psi_b) -> float:
    """|<a|b>|^2 with both inputs normalized first."""
    a = np.asarray(psi_a, dtype=np.complex128)
    b = np.asarray(psi_b, dtype=np.complex128)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shapes {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DimensionMismatch("fidelity of a zero vector is undefined")
    return float(np.abs(np.vdot(a, b)) ** 2 / (na * nb) ** 2)


def chi_square_test(observed, expected_probs,
                    alpha: float = 0.01) -> tuple[float, bool]:
    """Pearson test of counts against a fixed discrete distribution.

    Returns (statistic, pass); pass means the statistic is below the
    chi-square critical value at the given alpha with k-1 degrees of freedom.
    """
    obs = np.asarray(observed, dtype=np.float64)
    probs = np.asarray(expected_probs, dtype=np.float64)
    if obs.shape != probs.shape:
        raise DimensionMismatch(f"shapes {obs.shape} vs {probs.shape}")
    total = obs.sum()
    if total <= 0:
        raise DegenerateExpected("no observations")
    if np.any(probs <= 0):
        raise DegenerateExpected("expected probabilities must be positive")
    probs = probs / probs.sum()
    expected = probs * total
    statistic = float(np.sum((obs - expected) ** 2 / expected))
    critical = float(stats.chi2.ppf(1.0 - alpha, len(obs) - 1))
    return statistic, statistic < critical
