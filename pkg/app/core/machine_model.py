"""
Fourth-order two-axis synchronous generator.

State x = [delta, omega, E_dp, E_qp] (rad, pu, pu, pu) and exogenous input
u = [T_m, E_f, U_t, phi] (pu, pu, pu, rad). Every model function accepts
plain arrays whose last axis holds those components, so a whole set of
cubature points (shape (k, 4)) goes through a single call. The dataclasses
below are the typed I/O boundary and convert with ``np.asarray``.
"""
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Tuple

import numpy as np

from app.core.exceptions import NoConvergence, NonFiniteState
from app.core.numerics import SymMatrix

logger = logging.getLogger(__name__)

OMEGA_BASE = 2.0 * math.pi * 50.0
DEFAULT_STEP = 0.02
OMEGA_BAND = (0.5, 1.5)

STATE_NAMES = ("delta", "omega", "E_dp", "E_qp")
INPUT_NAMES = ("T_m", "E_f", "U_t", "phi")
MEASUREMENT_NAMES = ("delta_z", "omega_z", "P_e_z")


@dataclass(frozen=True)
class MachineParams:
    """Physical constants of one generator (seconds and per-unit)."""
    T_J: float
    D: float
    T_d0p: float
    T_q0p: float
    X_d: float
    X_q: float
    X_dp: float
    X_qp: float

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ValueError(f"{f.name} must be finite, got {value}")
        if self.T_J <= 0 or self.T_d0p <= 0 or self.T_q0p <= 0:
            raise ValueError("T_J, T_d0p and T_q0p must be strictly positive")
        if self.D < 0:
            raise ValueError("D must be non-negative")
        if not (self.X_d >= self.X_dp > 0):
            raise ValueError("require X_d >= X_dp > 0")
        if not (self.X_q >= self.X_qp > 0):
            raise ValueError("require X_q >= X_qp > 0")

    @classmethod
    def from_dict(cls, data: dict) -> "MachineParams":
        expected = {f.name for f in fields(cls)}
        missing = expected - set(data)
        extra = set(data) - expected
        if missing or extra:
            raise ValueError(f"machine parameters: missing {sorted(missing)}, unexpected {sorted(extra)}")
        return cls(**{k: float(data[k]) for k in expected})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def load(cls, path: str) -> "MachineParams":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


@dataclass(frozen=True)
class GeneratorState:
    delta: float
    omega: float
    E_dp: float
    E_qp: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.delta, self.omega, self.E_dp, self.E_qp)):
            raise ValueError(f"non-finite generator state {self}")
        if not OMEGA_BAND[0] < self.omega < OMEGA_BAND[1]:
            logger.warning(f"Rotor speed {self.omega:.4f} pu outside plausibility band {OMEGA_BAND}")

    def __array__(self, dtype=None, copy=None):
        return np.array([self.delta, self.omega, self.E_dp, self.E_qp], dtype=dtype or float)

    @classmethod
    def from_array(cls, x) -> "GeneratorState":
        x = np.asarray(x, dtype=float)
        return cls(*(float(v) for v in x[:4]))


@dataclass(frozen=True)
class ExogenousInput:
    T_m: float
    E_f: float
    U_t: float
    phi: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.T_m, self.E_f, self.U_t, self.phi)):
            raise ValueError(f"non-finite exogenous input {self}")
        if self.U_t <= 0:
            raise ValueError("U_t must be positive")

    def __array__(self, dtype=None, copy=None):
        return np.array([self.T_m, self.E_f, self.U_t, self.phi], dtype=dtype or float)

    @classmethod
    def from_array(cls, u) -> "ExogenousInput":
        u = np.asarray(u, dtype=float)
        return cls(*(float(v) for v in u[:4]))


@dataclass(frozen=True)
class MeasurementVector:
    delta_z: float
    omega_z: float
    P_e_z: float

    def __array__(self, dtype=None, copy=None):
        return np.array([self.delta_z, self.omega_z, self.P_e_z], dtype=dtype or float)

    @classmethod
    def from_array(cls, z) -> "MeasurementVector":
        z = np.asarray(z, dtype=float)
        return cls(*(float(v) for v in z[:3]))


def _state(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1], x[..., 2], x[..., 3]


def _input(u):
    u = np.asarray(u, dtype=float)
    return u[..., 0], u[..., 1], u[..., 2], u[..., 3]


def stator_currents(x, u, p: MachineParams) -> Tuple[np.ndarray, np.ndarray]:
    delta, _, E_dp, E_qp = _state(x)
    _, _, U_t, phi = _input(u)
    angle = delta - phi
    I_d = (E_qp - U_t * np.cos(angle)) / p.X_dp
    I_q = (U_t * np.sin(angle) - E_dp) / p.X_qp
    return I_d, I_q


def stator_voltages(x, u) -> Tuple[np.ndarray, np.ndarray]:
    """Terminal voltage in the rotor frame, (V_d, V_q)."""
    delta = _state(x)[0]
    _, _, U_t, phi = _input(u)
    return U_t * np.sin(delta - phi), U_t * np.cos(delta - phi)


def electrical_power(x, u, p: MachineParams) -> np.ndarray:
    delta, _, E_dp, E_qp = _state(x)
    _, _, U_t, phi = _input(u)
    angle = delta - phi
    return (0.5 * U_t ** 2 * np.sin(2.0 * angle) * (1.0 / p.X_qp - 1.0 / p.X_dp)
            + U_t * np.sin(angle) * E_qp / p.X_dp
            - U_t * np.cos(angle) * E_dp / p.X_qp)


def dq_power(x, u, p: MachineParams) -> np.ndarray:
    """Air-gap power from the dq currents; must agree with electrical_power."""
    _, _, E_dp, E_qp = _state(x)
    I_d, I_q = stator_currents(x, u, p)
    return E_dp * I_d + E_qp * I_q + (p.X_qp - p.X_dp) * I_d * I_q


def reactive_power(x, u, p: MachineParams) -> np.ndarray:
    I_d, I_q = stator_currents(x, u, p)
    V_d, V_q = stator_voltages(x, u)
    return V_q * I_d - V_d * I_q


def power_partials(x, u, p: MachineParams) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic (dP_e/dU_t, dP_e/dphi)."""
    delta, _, E_dp, E_qp = _state(x)
    _, _, U_t, phi = _input(u)
    angle = delta - phi
    saliency = 1.0 / p.X_qp - 1.0 / p.X_dp
    dP_dU = (U_t * np.sin(2.0 * angle) * saliency
             + np.sin(angle) * E_qp / p.X_dp
             - np.cos(angle) * E_dp / p.X_qp)
    dP_ddelta = (U_t ** 2 * np.cos(2.0 * angle) * saliency
                 + U_t * np.cos(angle) * E_qp / p.X_dp
                 + U_t * np.sin(angle) * E_dp / p.X_qp)
    return dP_dU, -dP_ddelta


def state_derivative(x, u, p: MachineParams) -> np.ndarray:
    """dx/dt per second, same leading shape as x."""
    _, omega, E_dp, E_qp = _state(x)
    T_m, E_f, _, _ = _input(u)
    I_d, I_q = stator_currents(x, u, p)
    T_e = electrical_power(x, u, p)
    slip = omega - 1.0
    d_delta = slip * OMEGA_BASE
    d_omega = (T_m - T_e - p.D * slip) / p.T_J
    d_E_dp = (-E_dp + (p.X_q - p.X_qp) * I_q) / p.T_q0p
    d_E_qp = (E_f - E_qp - (p.X_d - p.X_dp) * I_d) / p.T_d0p
    return np.stack(np.broadcast_arrays(d_delta, d_omega, d_E_dp, d_E_qp), axis=-1)


def rk4_step(fun: Callable[[np.ndarray], np.ndarray], x, h: float) -> np.ndarray:
    """One classical Runge-Kutta step of dx/dt = fun(x)."""
    x = np.asarray(x, dtype=float)
    k1 = fun(x)
    k2 = fun(x + 0.5 * h * k1)
    k3 = fun(x + 0.5 * h * k2)
    k4 = fun(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def transition(x, u, p: MachineParams, h: float = DEFAULT_STEP) -> np.ndarray:
    """RK4 step of the machine with u held constant over [t, t + h]."""
    if h <= 0:
        raise ValueError("step must be positive")
    u = np.asarray(u, dtype=float)
    x_next = rk4_step(lambda xs: state_derivative(xs, u, p), x, h)
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteState("integration produced a non-finite state")
    return x_next


def measurement(x, u, p: MachineParams) -> np.ndarray:
    delta, omega, _, _ = _state(x)
    P_e = electrical_power(x, u, p)
    return np.stack(np.broadcast_arrays(delta, omega, P_e), axis=-1)


def measurement_noise_R(x, u, p: MachineParams, sigma_Ut: float = 0.002,
                        sigma_phi: float = math.radians(0.2),
                        sigma_delta: float = math.radians(2.0),
                        var_omega: float = 1e-6) -> SymMatrix:
    """diag(sigma_delta^2, var_omega, var(P_e)) with var(P_e) propagated from U_t and phi errors."""
    if min(sigma_Ut, sigma_phi, sigma_delta, var_omega) < 0:
        raise ValueError("noise sigmas must be non-negative")
    U_t = float(np.asarray(u, dtype=float)[2])
    dP_dU, dP_dphi = power_partials(x, u, p)
    var_pe = float(dP_dU ** 2 * (sigma_Ut * U_t) ** 2 + dP_dphi ** 2 * sigma_phi ** 2)
    return np.diag([sigma_delta ** 2, var_omega, var_pe])


def process_noise_Q(x, u, p: MachineParams, h: float = DEFAULT_STEP, sigma_Ut: float = 0.002,
                    sigma_phi: float = math.radians(0.2), stencil: float = 1e-6) -> SymMatrix:
    """
    Diagonal Q from propagating U_t and phi errors through one transition.

    dF/dU_t and dF/dphi are central differences with a relative stencil.
    """
    if min(sigma_Ut, sigma_phi) < 0:
        raise ValueError("noise sigmas must be non-negative")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    U_t, phi = u[2], u[3]
    dU = stencil * max(1.0, abs(U_t))
    dphi = stencil * max(1.0, abs(phi))

    perturbed = np.tile(u, (4, 1))
    perturbed[0, 2] += dU
    perturbed[1, 2] -= dU
    perturbed[2, 3] += dphi
    perturbed[3, 3] -= dphi
    F = transition(np.tile(x, (4, 1)), perturbed, p, h)

    dF_dU = (F[0] - F[1]) / (2.0 * dU)
    dF_dphi = (F[2] - F[3]) / (2.0 * dphi)
    return np.diag(dF_dU ** 2 * (sigma_Ut * U_t) ** 2 + dF_dphi ** 2 * sigma_phi ** 2)


def _equilibrium_guess(U_t: float, phi: float, p: MachineParams, P_target: float, Q_target: float) -> np.ndarray:
    V = U_t * np.exp(1j * phi)
    current = np.conj(complex(P_target, Q_target) / V)
    delta = float(np.angle(V + 1j * p.X_q * current))
    I_d = abs(current) * math.sin(delta - np.angle(current))
    I_q = abs(current) * math.cos(delta - np.angle(current))
    V_d, V_q = U_t * math.sin(delta - phi), U_t * math.cos(delta - phi)
    return np.array([delta, V_d - p.X_qp * I_q, V_q + p.X_dp * I_d])


def solve_equilibrium(u, p: MachineParams, P_target: float, Q_target: float = 0.0,
                      max_iter: int = 100, tol: float = 1e-12) -> Tuple[GeneratorState, float, float]:
    """
    Steady state at the terminal phasor (u.U_t, u.phi) delivering P_target + jQ_target.

    T_m and E_f in ``u`` are ignored; the matching values are returned.
    The phasor-diagram solution seeds a damped Newton polish on
    (E_dp balance, P_e - P_target, Q - Q_target).
    """
    u = np.asarray(u, dtype=float)
    U_t, phi = float(u[2]), float(u[3])
    if not (math.isfinite(U_t) and math.isfinite(phi) and U_t > 0):
        raise NoConvergence(f"invalid terminal phasor U_t={U_t}, phi={phi}")

    def residual(y):
        x = np.array([y[0], 1.0, y[1], y[2]])
        _, I_q = stator_currents(x, u, p)
        return np.array([
            y[1] - (p.X_q - p.X_qp) * I_q,
            electrical_power(x, u, p) - P_target,
            reactive_power(x, u, p) - Q_target,
        ])

    y = _equilibrium_guess(U_t, phi, p, P_target, Q_target)
    r = residual(y)
    converged = False
    for _ in range(max_iter):
        norm = np.max(np.abs(r))
        if np.isfinite(norm) and norm < tol:
            converged = True
            break
        jac = np.empty((3, 3))
        for j in range(3):
            dy = np.zeros(3)
            dy[j] = 1e-7 * max(1.0, abs(y[j]))
            jac[:, j] = (residual(y + dy) - residual(y - dy)) / (2.0 * dy[j])
        try:
            step = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as e:
            raise NoConvergence(f"singular equilibrium Jacobian: {e}") from e
        lam = 1.0
        while lam > 1e-4:
            candidate = residual(y + lam * step)
            if np.all(np.isfinite(candidate)) and np.max(np.abs(candidate)) < norm:
                break
            lam *= 0.5
        else:
            # no descent left: accept when already at round-off level
            converged = bool(np.isfinite(norm) and norm < 1e-10)
            break
        y = y + lam * step
        r = residual(y)
    if not converged:
        raise NoConvergence(f"no equilibrium after {max_iter} damped-Newton iterations "
                            f"(residual {np.max(np.abs(r)):.3e})")

    x = np.array([y[0], 1.0, y[1], y[2]])
    I_d, _ = stator_currents(x, u, p)
    T_m = float(electrical_power(x, u, p))
    E_f = float(y[2] + (p.X_d - p.X_dp) * I_d)
    u_eq = np.array([T_m, E_f, U_t, phi])
    drift = np.max(np.abs(state_derivative(x, u_eq, p)))
    if not drift < 1e-10:
        raise NoConvergence(f"equilibrium check failed, max |dx/dt| = {drift:.3e}")
    logger.debug(f"Equilibrium: delta={x[0]:.6f} rad E_dp={x[2]:.6f} E_qp={x[3]:.6f} T_m={T_m:.6f} E_f={E_f:.6f}")
    return GeneratorState.from_array(x), T_m, E_f


@dataclass(frozen=True)
class ModelNoiseSettings:
    """Noise assumptions the filter builds Q and R from."""
    sigma_Ut: float = 0.002
    sigma_phi_deg: float = 0.2
    sigma_delta_deg: float = 2.0
    var_omega: float = 1e-6
    pe_var_floor: float = 1e-12
    fd_stencil: float = 1e-6

    @classmethod
    def from_dict(cls, data: dict) -> "ModelNoiseSettings":
        return cls(**{k: float(v) for k, v in (data or {}).items()})


@dataclass
class GeneratorModel:
    """The generator packaged for the cubature filter (n = 4, m = 3)."""
    params: MachineParams
    step: float = DEFAULT_STEP
    noise: ModelNoiseSettings = field(default_factory=ModelNoiseSettings)
    n: int = 4
    m: int = 3

    def transition(self, x, u) -> np.ndarray:
        return transition(x, u, self.params, self.step)

    def measurement(self, x, u) -> np.ndarray:
        return measurement(x, u, self.params)

    def process_noise(self, x, u) -> SymMatrix:
        return process_noise_Q(x, u, self.params, self.step, self.noise.sigma_Ut,
                               math.radians(self.noise.sigma_phi_deg), self.noise.fd_stencil)

    def measurement_noise(self, x, u) -> SymMatrix:
        R = measurement_noise_R(x, u, self.params, self.noise.sigma_Ut,
                                math.radians(self.noise.sigma_phi_deg),
                                math.radians(self.noise.sigma_delta_deg), self.noise.var_omega)
        R[2, 2] = max(R[2, 2], self.noise.pe_var_floor)
        return R
