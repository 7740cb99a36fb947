#!/usr/bin/env python3
"""
Fracture Model

Constitutive layer of the phase-field cohesive-zone model: plane-strain
linear elasticity, the degradation and crack geometric functions with linear
softening, the interface spring law and the analytic damage profile.

Features:
- Vectorized g, g', g'' and w, w' for Newton assembly
- Plane-strain stress and energy density in tensor and Voigt form
- Interface energy and traction
- Reference damage profile for verification
"""

import logging
import math
from dataclasses import dataclass, asdict
from typing import Any, Dict, Tuple

import numpy as np
from scipy.integrate import quad

logger = logging.getLogger(__name__)

C_W = math.pi
DEGRADATION_FLOOR = 1e-14


@dataclass(frozen=True)
class MaterialParams:
    """Material parameters of matrix, inclusions and interfaces"""
    E_matrix: float = 1.0
    E_inclusion: float = 5.0
    nu: float = 0.3
    k_I: float = 100.0
    G_c: float = 1.0
    l_ch: float = 1.0
    eps: float = 0.5

    def __post_init__(self):
        for name in ("E_matrix", "E_inclusion", "k_I", "G_c", "l_ch", "eps"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"Material parameter {name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in (0, 0.5), got {self.nu}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def lame(E: float, nu: float) -> Tuple[float, float]:
    """Plane-strain Lame constants (lambda, mu)"""
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


def kolosov(nu: float) -> float:
    return 3.0 - 4.0 * nu


def degradation(alpha, params: MaterialParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    PF-CZM degradation with linear softening

    g = (1-a)^2 / [(1-a)^2 + p a (1 - a/2)],  p = 4 l_ch / (pi eps)

    Returns:
        (g, g', g'') with the shape of alpha
    """
    alpha = np.asarray(alpha, dtype=float)
    p = 4.0 * params.l_ch / (math.pi * params.eps)
    n = (1.0 - alpha) ** 2
    dn = -2.0 * (1.0 - alpha)
    q = p * alpha * (1.0 - 0.5 * alpha)
    dq = p * (1.0 - alpha)
    d = np.maximum(n + q, DEGRADATION_FLOOR)
    dd = dn + dq
    u = dn * q - n * dq
    du = 2.0 * q + p * n
    g = n / d
    dg = u / d ** 2
    ddg = (du * d - 2.0 * u * dd) / d ** 3
    return g, dg, ddg


def geometric(alpha) -> Tuple[np.ndarray, np.ndarray]:
    """Crack geometric function w = 2a - a^2 and its derivative"""
    alpha = np.asarray(alpha, dtype=float)
    return 2.0 * alpha - alpha ** 2, 2.0 - 2.0 * alpha


def normalization_constant() -> float:
    """c_w = 4 * int_0^1 sqrt(w(t)) dt by adaptive quadrature"""
    value, _ = quad(lambda t: math.sqrt(max(2.0 * t - t * t, 0.0)), 0.0, 1.0, epsabs=1e-14, epsrel=1e-14, limit=200)
    return 4.0 * value


def elasticity_matrix(E: float, nu: float) -> np.ndarray:
    """Plane-strain Voigt matrix for (exx, eyy, gamma_xy)"""
    lam, mu = lame(E, nu)
    return np.array([
        [lam + 2.0 * mu, lam, 0.0],
        [lam, lam + 2.0 * mu, 0.0],
        [0.0, 0.0, mu],
    ])


def stress(strain, E: float, nu: float) -> np.ndarray:
    """sigma = lambda tr(eps) I + 2 mu eps for tensors of shape (..., 2, 2)"""
    strain = np.asarray(strain, dtype=float)
    lam, mu = lame(E, nu)
    trace = strain[..., 0, 0] + strain[..., 1, 1]
    return lam * trace[..., None, None] * np.eye(2) + 2.0 * mu * strain


def elastic_energy_density(strain, E: float, nu: float) -> np.ndarray:
    """Psi = 1/2 sigma : eps"""
    strain = np.asarray(strain, dtype=float)
    return 0.5 * np.einsum("...ij,...ij->...", stress(strain, E, nu), strain)


def interface_energy(jump, k_I: float) -> Tuple[np.ndarray, np.ndarray]:
    """Spring interface: energy 1/2 k |[u]|^2 and traction k [u]"""
    jump = np.asarray(jump, dtype=float)
    return 0.5 * k_I * np.sum(jump * jump, axis=-1), k_I * jump


def reference_damage_profile(x, eps: float) -> np.ndarray:
    """Optimal 1D profile 1 - sin(x/eps), supported on x <= pi eps / 2"""
    x = np.abs(np.asarray(x, dtype=float))
    return np.where(x <= 0.5 * math.pi * eps, 1.0 - np.sin(np.minimum(x, 0.5 * math.pi * eps) / eps), 0.0)
