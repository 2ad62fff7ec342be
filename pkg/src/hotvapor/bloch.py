"""Three-level optical Bloch equations in reduced 8-component form.

State ordering is ``(rho11, rho22, rho21, rho12, rho31, rho13, rho32, rho23)``;
rho33 = 1 - rho11 - rho22 is implicit. Levels 1 and 2 are the F=1 and F=2
ground states, level 3 the unresolved excited manifold. ``detuning`` is the
laser detuning from the 2-3 transition (the 1-3 transition sits at
``detuning - delta_hf``), in rad/s.

The rows of the matrix carry coefficients such as ``i Omega13`` next to
``i Omega13 / 2``; these come from eliminating rho33 and are kept as is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from hotvapor import _kernels as K
from hotvapor.atomvapor import EPS0, HBAR, AtomicSystem, VaporCell
from hotvapor.errors import (
    DomainError,
    IntegrationError,
    NonDecayingError,
    SingularSystemError,
)

STATE_LABELS = ("rho11", "rho22", "rho21", "rho12", "rho31", "rho13", "rho32", "rho23")
DEFAULT_MAX_STEP = 1e-7
DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-10


@dataclass(frozen=True)
class DensityState:
    """Reduced density-matrix vector (8 complex components)."""

    components: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.components, dtype=np.complex128)
        if c.shape != (8,):
            raise DomainError("DensityState needs exactly 8 components")
        c.setflags(write=False)
        object.__setattr__(self, "components", c)

    @classmethod
    def ground(cls, system: AtomicSystem) -> "DensityState":
        """Thermal ground state: populations (G1, G2), no coherences."""
        return cls(np.array([system.g1, system.g2, 0, 0, 0, 0, 0, 0], np.complex128))

    def __getattr__(self, name):
        if name in STATE_LABELS:
            return self.components[STATE_LABELS.index(name)]
        raise AttributeError(name)

    @property
    def rho33(self) -> float:
        return 1.0 - self.components[0].real - self.components[1].real

    def is_physical(self, tol: float = 1e-6) -> bool:
        return bool(K.state_is_physical(self.components, tol))


@dataclass(frozen=True)
class BlochOperator:
    """Matrix form d rho / dt = A rho + b at fixed field."""

    a_matrix: np.ndarray
    b_vector: np.ndarray
    gamma32: complex
    gamma31: complex
    gamma21: complex
    rabi13: complex
    rabi23: complex
    transit: float
    params: np.ndarray = field(repr=False)

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        return self.a_matrix @ rho + self.b_vector


def _params(system: AtomicSystem, detuning: float, transit: float) -> np.ndarray:
    return np.array(
        [system.gamma, system.delta_hf, detuning, transit, system.g1, system.g2],
        dtype=np.float64,
    )


def assemble(
    system: AtomicSystem,
    rabi13: complex,
    rabi23: complex,
    detuning: float,
    transit: float,
) -> BlochOperator:
    """Build the Bloch matrix ``A`` and inhomogeneity ``b``.

    Parameters
    ----------
    system : AtomicSystem
    rabi13, rabi23 : complex
        Rabi frequencies of the two optical transitions, rad/s.
    detuning : float
        Detuning from the 2-3 transition, rad/s.
    transit : float
        Transit (ground-state repopulation) rate, 1/s.
    """
    par = _params(system, detuning, transit)
    A = np.empty((8, 8), np.complex128)
    b = np.empty(8, np.complex128)
    K.fill_operator(A, b, par, complex(rabi13), complex(rabi23))
    return BlochOperator(
        a_matrix=A,
        b_vector=b,
        gamma32=complex(system.gamma, -detuning),
        gamma31=complex(system.gamma, -(detuning - system.delta_hf)),
        gamma21=complex(transit, system.delta_hf),
        rabi13=complex(rabi13),
        rabi23=complex(rabi23),
        transit=float(transit),
        params=par,
    )


def steady_state(op: BlochOperator) -> DensityState:
    """Solve ``A rho = -b``.

    Raises :class:`SingularSystemError` when the ground manifold is degenerate
    (no transit and no field).
    """
    A = op.a_matrix
    b = op.b_vector
    # degenerate case: without repopulation or pumping the ground pair is a
    # neutral subspace, so cond(A) blows up
    if np.linalg.cond(A) > 1e14:
        raise SingularSystemError("Bloch matrix is singular (no transit, no field)")
    rho = np.linalg.solve(A, -b)
    res = np.linalg.norm(A @ rho + b)
    if res > 1e-10 * max(np.linalg.norm(b), 1.0):
        # one refinement sweep
        rho = rho - np.linalg.solve(A, A @ rho + b)
    return DensityState(rho)


def response_timescale(op: BlochOperator) -> float:
    """Slowest relaxation time 1 / min|Re(eig A)|, an upper bound on the response time."""
    ev = np.linalg.eigvals(op.a_matrix)
    re = ev.real
    if np.any(re >= 0):
        raise NonDecayingError("Bloch matrix has a non-decaying eigenvalue")
    return 1.0 / np.min(np.abs(re))


def analytic_chi23(
    system: AtomicSystem,
    cell: VaporCell,
    field_amplitude,
    detuning: float,
    transit: float,
):
    """Far-detuned steady-state susceptibility of the 2-3 transition with transit.

    chi = s G2 N mu^2 / (eps0 hbar Gamma) (i - D/Gamma) / (1 + (D/Gamma)^2 + (E/E_s)^2)
    with a = (Gamma/2) / (Gamma/2 + Gamma_t), b = Gamma_t / (Gamma/2 + Gamma_t),
    s = sqrt(2 b (1 + a) / (1 + b)) and E_s = s hbar Gamma / mu23.
    Broadcasts over ``field_amplitude`` (V/m) and ``detuning`` (rad/s).
    """
    g = system.gamma
    a = (g / 2) / (g / 2 + transit)
    bb = transit / (g / 2 + transit)
    s = math.sqrt(2 * bb * (1 + a) / (1 + bb))
    e_sat = s * HBAR * g / system.mu23
    x = np.asarray(detuning, dtype=float) / g
    e = np.asarray(field_amplitude, dtype=float)
    pref = s * system.g2 * cell.density * system.mu23**2 / (EPS0 * HBAR * g)
    return pref * (1j - x) / (1 + x * x + (e / e_sat) ** 2)


def saturation_field(system: AtomicSystem, transit: float) -> float:
    g = system.gamma
    a = (g / 2) / (g / 2 + transit)
    bb = transit / (g / 2 + transit)
    return math.sqrt(2 * bb * (1 + a) / (1 + bb)) * HBAR * g / system.mu23


@dataclass
class BlochTrajectory:
    """Time samples and states returned by :func:`integrate`."""

    times: np.ndarray
    states: np.ndarray
    n_steps: int

    def __len__(self):
        return len(self.times)

    def __getitem__(self, i) -> DensityState:
        return DensityState(self.states[i])

    @property
    def final(self) -> DensityState:
        return DensityState(self.states[-1])


def _as_array(rho0) -> np.ndarray:
    if isinstance(rho0, DensityState):
        return rho0.components.copy()
    y = np.asarray(rho0, dtype=np.complex128).copy()
    if y.shape != (8,):
        raise DomainError("initial state must have 8 components")
    return y


def _check_step(max_step: float):
    if not (max_step > 0 and math.isfinite(max_step)):
        raise DomainError("max_step must be positive and finite")


def integrate(
    op_of_t: Callable[[float], BlochOperator] | BlochOperator,
    rho0,
    t_span: tuple[float, float],
    max_step: float = DEFAULT_MAX_STEP,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    t_eval=None,
    max_steps: int = 50_000_000,
) -> BlochTrajectory:
    """Integrate d rho / dt = A(t) rho + b(t) with adaptive TR-BDF2.

    TR-BDF2 is L-stable, so the GHz coherence oscillations are damped
    without being resolved while the error controller tracks the slow
    (pumping, transit) dynamics. Step size never exceeds ``max_step``.

    Parameters
    ----------
    op_of_t : BlochOperator or callable
        Constant operator, or ``t -> BlochOperator`` for a time-dependent drive.
        A constant operator runs entirely in compiled code.
    rho0 : DensityState or array_like
    t_span : (t0, t1)
    t_eval : array_like, optional
        Output times inside ``t_span``; defaults to ``(t0, t1)``.

    Raises
    ------
    IntegrationError
        On step-size underflow, carrying the last good state.
    """
    t0, t1 = map(float, t_span)
    if not (math.isfinite(t0) and math.isfinite(t1) and t1 >= t0):
        raise DomainError("t_span must be finite and increasing")
    _check_step(max_step)
    ts = np.array([t0, t1] if t_eval is None else t_eval, dtype=np.float64)
    if ts[0] != t0:
        ts = np.concatenate(([t0], ts))
    if np.any(np.diff(ts) < 0) or ts[-1] > t1 + 1e-15 * abs(t1):
        raise DomainError("t_eval must be increasing within t_span")
    y0 = _as_array(rho0)

    if isinstance(op_of_t, BlochOperator):
        return _integrate_constant(op_of_t, y0, ts, max_step, rtol, atol, max_steps)
    return _integrate_callback(op_of_t, y0, ts, max_step, rtol, atol, max_steps)


def _integrate_constant(op, y0, ts, max_step, rtol, atol, max_steps):
    out = np.empty((len(ts), 8), np.complex128)
    # shift time so the compiled path kernel starts at zero
    shifted = ts - ts[0]
    zero_a = np.zeros_like(op.a_matrix)
    zero_b = np.zeros_like(op.b_vector)
    status, n_done, steps = K.integrate_affine(
        op.a_matrix, zero_a, op.b_vector, zero_b, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0, 0.0,
        y0, shifted, max_step, rtol, atol, min(max_step, 1e-9), max_steps, out,
    )
    if status != K.STATUS_OK:
        last = n_done - 1
        raise IntegrationError(
            "step size underflow" if status == K.STATUS_UNDERFLOW else "too many steps",
            float(ts[last]), out[last],
        )
    return BlochTrajectory(ts, out, int(steps))


# z = T x maps the real Hermitian form
# x = (rho11, rho22, Re rho21, Im rho21, Re rho31, Im rho31, Re rho32, Im rho32)
# onto the complex 8-vector.
_T = np.zeros((8, 8), np.complex128)
_T[0, 0] = _T[1, 1] = 1.0
for _k in (2, 4, 6):
    _T[_k, _k] = _T[_k + 1, _k] = 1.0
    _T[_k, _k + 1] = 1j
    _T[_k + 1, _k + 1] = -1j
_TINV = np.linalg.inv(_T)


def to_real_form(a_matrix: np.ndarray, b_vector: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Real 8x8 system equivalent to a Hermiticity-preserving complex one."""
    R = _TINV @ a_matrix @ _T
    q = _TINV @ b_vector
    return np.ascontiguousarray(R.real), np.ascontiguousarray(q.real)


def real_to_complex(x: np.ndarray) -> np.ndarray:
    """Map real-form states (..., 8) back to complex 8-vectors."""
    return np.asarray(x) @ _T.T


def complex_to_real(z: np.ndarray) -> np.ndarray:
    return (np.asarray(z) @ _TINV.T).real


def _fetch(op_of_t, t):
    op = op_of_t(t)
    return op.a_matrix, op.b_vector


def _integrate_callback(op_of_t, y0, ts, max_step, rtol, atol, max_steps):
    n = 8
    M = np.empty((n, n), np.complex128)
    piv = np.empty(n, np.int64)
    work = np.empty((3, n), np.complex128)
    y1 = np.empty(n, np.complex128)
    f1 = np.empty(n, np.complex128)
    out = np.empty((len(ts), n), np.complex128)
    y = y0.copy()
    t = ts[0]
    A, b = _fetch(op_of_t, t)
    f0 = A @ y + b
    out[0] = y
    h = min(max_step, 1e-9)
    facmax = 5.0
    steps = 0
    for k in range(1, len(ts)):
        target = ts[k]
        while t < target:
            last = h >= target - t
            hu = target - t if last else h
            Ag, bg = _fetch(op_of_t, t + K.GAMMA_TRBDF2 * hu)
            tn = target if last else t + hu
            A1, b1 = _fetch(op_of_t, tn)
            err = K.trbdf2_step(y, f0, hu, Ag, bg, A1, b1, rtol, atol, y1, f1, M, piv, work)
            steps += 1
            if steps > max_steps:
                raise IntegrationError("too many steps", t, y)
            if err <= 1.0:
                t = tn
                y[:] = y1
                f0[:] = f1
                fac = facmax if err == 0 else min(facmax, max(0.2, 0.9 * err ** (-1 / 3)))
                facmax = 5.0
                if not last or fac < 1.0:
                    h = min(max_step, hu * fac)
            else:
                fac = 0.2 if not math.isfinite(err) else max(0.2, 0.9 * err ** (-1 / 3))
                h = hu * fac
                facmax = 1.0
                if h < 1e-18 or h < 1e-14 * abs(t):
                    raise IntegrationError("step size underflow", t, y.copy())
        out[k] = y
    return BlochTrajectory(ts, out, steps)
