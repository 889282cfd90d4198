"""Constitutive models and material-point drivers.

Isotropic linear elasticity in the (E, nu) and (K, G) parameterizations,
plane-stress reduction, and a small-strain von Mises viscoplasticity model
with Armstrong-Frederick kinematic hardening.  The viscoplastic update uses
an elastic-predictor / inelastic-corrector scheme whose corrector reduces to
a single scalar equation through the radial-return structure of the model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DriverError, IntegrationError, ParameterError

# Normalizer inside the Macauley bracket of the overstress function.  Fixed,
# not a material parameter; it only makes the bracket argument dimensionless.
SIGMA_0 = 1.0  # N/mm^2

_SQ23 = math.sqrt(2.0 / 3.0)
_EYE3 = np.eye(3)

_NEWTON_MAX_ITER = 50
_NEWTON_TOL = 1e-10


@dataclass(frozen=True)
class ElasticParams:
    """Isotropic linear elasticity, stored as (E, nu).

    Units: E in N/mm^2, nu dimensionless.  Use :meth:`from_bulk_shear` to
    construct from (K, G).
    """

    E: float
    nu: float

    def __post_init__(self):
        if not (self.E > 0.0):
            raise ParameterError(f"Young's modulus must be positive, got E={self.E}")
        if not (-1.0 < self.nu < 0.5):
            raise ParameterError(f"Poisson's ratio must lie in (-1, 0.5), got nu={self.nu}")

    @classmethod
    def from_bulk_shear(cls, K: float, G: float) -> "ElasticParams":
        if not (K > 0.0 and G > 0.0):
            raise ParameterError(f"bulk and shear moduli must be positive, got K={K}, G={G}")
        E, nu = convert_K_G_to_E_nu(K, G)
        return cls(E=E, nu=nu)

    @property
    def bulk(self) -> float:
        return self.E / (3.0 * (1.0 - 2.0 * self.nu))

    @property
    def shear(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))


def convert_E_nu_to_K_G(E: float, nu: float) -> tuple[float, float]:
    """(E, nu) -> (K, G).  Raises for nu = 0.5 (incompressible limit)."""
    if nu >= 0.5:
        raise ParameterError(f"bulk modulus undefined for nu >= 0.5, got nu={nu}")
    return E / (3.0 * (1.0 - 2.0 * nu)), E / (2.0 * (1.0 + nu))


def convert_K_G_to_E_nu(K: float, G: float) -> tuple[float, float]:
    """(K, G) -> (E, nu), inverse of :func:`convert_E_nu_to_K_G`."""
    if K <= 0.0 or G <= 0.0:
        raise ParameterError(f"bulk and shear moduli must be positive, got K={K}, G={G}")
    E = 9.0 * K * G / (3.0 * K + G)
    nu = (3.0 * K - 2.0 * G) / (2.0 * (3.0 * K + G))
    return E, nu


def elasticity_matrix_plane_stress(params: ElasticParams) -> np.ndarray:
    """3x3 plane-stress elasticity matrix in Voigt order (e11, e22, g12)."""
    E, nu = params.E, params.nu
    f = E / (1.0 - nu * nu)
    return f * np.array(
        [
            [1.0, nu, 0.0],
            [nu, 1.0, 0.0],
            [0.0, 0.0, 0.5 * (1.0 - nu)],
        ]
    )


def elasticity_matrix_c11_c12(c11: float, c12: float) -> np.ndarray:
    """Plane-stress matrix in the linear parameter coordinates (C11, C12).

    C22 = C11 and C33 = (C11 - C12)/2 are enforced by isotropy.
    """
    return np.array(
        [
            [c11, c12, 0.0],
            [c12, c11, 0.0],
            [0.0, 0.0, 0.5 * (c11 - c12)],
        ]
    )


def c_coords_from_E_nu(E: float, nu: float) -> tuple[float, float]:
    """(E, nu) -> (C11, C12) plane-stress coordinates."""
    f = E / (1.0 - nu * nu)
    return f, nu * f


def E_nu_from_c_coords(c11: float, c12: float) -> tuple[float, float]:
    """(C11, C12) -> (E, nu), inverse of :func:`c_coords_from_E_nu`."""
    if c11 <= 0.0:
        raise ParameterError(f"C11 must be positive, got {c11}")
    nu = c12 / c11
    return c11 * (1.0 - nu * nu), nu


def uniaxial_elastic_response(K: float, G: float, eps: float) -> tuple[float, float]:
    """Axial stress and lateral strain of a uniaxial state in (K, G) form.

    sigma = 9KG/(3K+G) eps,  eps_q = -(3K-2G)/(6K+2G) eps.
    """
    if K <= 0.0 or G <= 0.0:
        raise ParameterError(f"bulk and shear moduli must be positive, got K={K}, G={G}")
    sigma = 9.0 * K * G / (3.0 * K + G) * eps
    eps_q = -(3.0 * K - 2.0 * G) / (6.0 * K + 2.0 * G) * eps
    return sigma, eps_q


@dataclass(frozen=True)
class PlasticParams:
    """Von Mises viscoplasticity with Armstrong-Frederick kinematic hardening.

    k     yield stress (N/mm^2)
    b, c  kinematic-hardening saturation rate (-) and modulus (N/mm^2)
    eta   viscosity (s); eta = 0 selects the rate-independent limit
    r     overstress exponent (-)
    """

    k: float
    b: float = 0.0
    c: float = 0.0
    eta: float = 0.0
    r: float = 1.0

    def __post_init__(self):
        if not (self.k > 0.0):
            raise ParameterError(f"yield stress must be positive, got k={self.k}")
        if self.b < 0.0 or self.c < 0.0 or self.eta < 0.0:
            raise ParameterError(
                f"hardening/viscosity parameters must be non-negative, got "
                f"b={self.b}, c={self.c}, eta={self.eta}"
            )
        if self.r < 1.0:
            raise ParameterError(f"overstress exponent must satisfy r >= 1, got r={self.r}")

    @property
    def rate_independent(self) -> bool:
        return self.eta == 0.0


@dataclass(frozen=True)
class MaterialState:
    """Internal variables at one material point.

    viscous_strain and backstress are symmetric deviatoric 3x3 tensors;
    arc_length is the accumulated viscous arc length (monotone in time).
    """

    viscous_strain: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    backstress: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    arc_length: float = 0.0

    @classmethod
    def zero(cls) -> "MaterialState":
        return cls()


def _dev(t: np.ndarray) -> np.ndarray:
    return t - (np.trace(t) / 3.0) * _EYE3


def _solve_plastic_multiplier(naa, nab, nbb, G, pp: PlasticParams, dt):
    """Scalar corrector equation for the plastic increment ``dlam``.

    naa, nab, nbb are the inner products a.a, a.X, X.X of the deviatoric
    trial stress a = 2G dev(E - E_v) and the old backstress X.  Returns the
    converged increment; the modified trial direction and norms follow from
    it in closed form.
    """
    k = pp.k
    sq23k = _SQ23 * k

    def norms(dlam):
        theta = 1.0 / (1.0 + pp.b * _SQ23 * dlam)
        nhat = math.sqrt(max(naa - 2.0 * theta * nab + theta * theta * nbb, 0.0))
        nxi = nhat - (2.0 * G + pp.c * theta) * dlam
        return theta, nhat, nxi

    def resid_ri(dlam):
        _, _, nxi = norms(dlam)
        return nxi - sq23k

    def dresid_ri(dlam):
        theta, nhat, _ = norms(dlam)
        dtheta = -pp.b * _SQ23 * theta * theta
        dnhat = ((theta * nbb - nab) * dtheta / nhat) if nhat > 0.0 else 0.0
        return dnhat - (2.0 * G + pp.c * theta) - pp.c * dtheta * dlam

    def newton(residual, dresidual, lo, hi, r_lo, r_hi):
        # Safeguarded Newton: bisect whenever the Newton step leaves [lo, hi].
        # The bracket-width exit accepts the root once the interval has shrunk
        # to machine precision (the residual is then roundoff-limited).
        x = 0.5 * (lo + hi)
        for _ in range(_NEWTON_MAX_ITER):
            r = residual(x)
            if abs(r) <= _NEWTON_TOL:
                return x
            d = dresidual(x)
            if (r > 0.0) == (r_lo > 0.0):
                lo, r_lo = x, r
            else:
                hi, r_hi = x, r
            if hi - lo <= 4.0 * np.finfo(float).eps * max(abs(hi), 1e-300):
                return x
            x_new = x - r / d if d != 0.0 else lo
            if not (lo < x_new < hi):
                x_new = 0.5 * (lo + hi)
            x = x_new
        raise IntegrationError(
            f"plastic corrector did not converge in {_NEWTON_MAX_ITER} iterations "
            f"(residual {residual(x):.3e})"
        )

    # Rate-independent root first: it closes the consistency condition for
    # eta = 0 and brackets the viscous root from above otherwise.
    r0 = resid_ri(0.0)
    if r0 <= _NEWTON_TOL:
        dlam_ri = 0.0
    else:
        hi = r0 / (2.0 * G)
        r_hi = resid_ri(hi)
        while r_hi > 0.0:
            hi *= 2.0
            r_hi = resid_ri(hi)
        dlam_ri = newton(resid_ri, dresid_ri, 0.0, hi, r0, r_hi)

    if pp.rate_independent:
        return dlam_ri

    inv_eta = 1.0 / pp.eta

    def resid_vp(dlam):
        _, _, nxi = norms(dlam)
        f = 0.5 * nxi * nxi - k * k / 3.0
        over = max(f / SIGMA_0, 0.0)
        return dlam / dt - inv_eta * over**pp.r

    def dresid_vp(dlam):
        theta, nhat, nxi = norms(dlam)
        dtheta = -pp.b * _SQ23 * theta * theta
        dnhat = ((theta * nbb - nab) * dtheta / nhat) if nhat > 0.0 else 0.0
        dnxi = dnhat - (2.0 * G + pp.c * theta) - pp.c * dtheta * dlam
        f = 0.5 * nxi * nxi - k * k / 3.0
        over = max(f / SIGMA_0, 0.0)
        df = nxi * dnxi / SIGMA_0
        return 1.0 / dt - inv_eta * pp.r * over ** (pp.r - 1.0) * df

    r_lo = resid_vp(0.0)
    if r_lo >= -_NEWTON_TOL:
        return 0.0
    return newton(resid_vp, dresid_vp, 0.0, dlam_ri, r_lo, resid_vp(dlam_ri))


def integrate_viscoplastic_step(
    state: MaterialState,
    strain: np.ndarray,
    dt: float,
    ep: ElasticParams,
    pp: PlasticParams,
) -> tuple[MaterialState, np.ndarray]:
    """One implicit (backward Euler) step of the viscoplastic model.

    Given the state at the previous time and the total strain at the new
    time, returns the updated state and the 3x3 stress tensor.  ``dt`` must
    be positive; for the rate-independent limit (eta = 0) it only labels the
    step.
    """
    if dt <= 0.0:
        raise IntegrationError(f"step size must be positive, got dt={dt}")
    K, G = ep.bulk, ep.shear
    strain = np.asarray(strain, dtype=float)
    tr_e = np.trace(strain)
    dev_e = strain - (tr_e / 3.0) * _EYE3

    a = 2.0 * G * (dev_e - state.viscous_strain)
    xi_trial = a - state.backstress
    f_trial = 0.5 * float(np.tensordot(xi_trial, xi_trial)) - pp.k * pp.k / 3.0

    if f_trial < 0.0:
        sigma = K * tr_e * _EYE3 + a
        return state, sigma

    naa = float(np.tensordot(a, a))
    nab = float(np.tensordot(a, state.backstress))
    nbb = float(np.tensordot(state.backstress, state.backstress))
    dlam = _solve_plastic_multiplier(naa, nab, nbb, G, pp, dt)

    if dlam == 0.0:
        sigma = K * tr_e * _EYE3 + a
        return state, sigma

    theta = 1.0 / (1.0 + pp.b * _SQ23 * dlam)
    xi_hat = a - theta * state.backstress
    nhat = float(np.linalg.norm(xi_hat))
    n_dir = _dev(xi_hat / nhat)

    ev_new = state.viscous_strain + dlam * n_dir
    x_new = theta * (state.backstress + pp.c * dlam * n_dir)
    s_new = state.arc_length + _SQ23 * dlam
    new_state = MaterialState(viscous_strain=ev_new, backstress=x_new, arc_length=s_new)
    sigma = K * tr_e * _EYE3 + 2.0 * G * (dev_e - ev_new)
    return new_state, sigma


def uniaxial_plastic_driver(
    axial_strain: np.ndarray,
    dt,
    ep: ElasticParams,
    pp: PlasticParams,
    lateral_tol: float | None = None,
    max_iter: int = 30,
) -> tuple[np.ndarray, np.ndarray, MaterialState]:
    """Displacement-controlled uniaxial tension of a single material point.

    Drives the axial strain through ``axial_strain`` (which must start at 0)
    and solves, at every step, a scalar Newton iteration for the lateral
    strain such that the transverse stresses vanish.  Returns the axial
    stress history, the lateral strain history, and the final state.

    ``dt`` is a scalar step duration or an array of length ``len(axial_strain) - 1``.
    """
    eps = np.asarray(axial_strain, dtype=float)
    if eps.ndim != 1 or eps.size == 0:
        raise DriverError("axial strain history must be a non-empty 1-d array")
    if eps[0] != 0.0:
        raise DriverError(f"strain history must start at 0, got {eps[0]}")
    n = eps.size
    dts = np.broadcast_to(np.asarray(dt, dtype=float), (n - 1,)) if n > 1 else np.empty(0)
    tol = lateral_tol if lateral_tol is not None else 1e-9 * pp.k

    sigma_ax = np.zeros(n)
    eps_lat = np.zeros(n)
    state = MaterialState.zero()

    for i in range(1, n):
        # Linear extrapolation of the previous lateral strains as the guess.
        if i >= 2:
            guess = 2.0 * eps_lat[i - 1] - eps_lat[i - 2]
        else:
            guess = -ep.nu * eps[i]

        def transverse_stress(el):
            e = np.diag([eps[i], el, el])
            _, sig = integrate_viscoplastic_step(state, e, dts[i - 1], ep, pp)
            return sig[1, 1]

        # Secant iteration, seeded with the elastic slope d(sigma22)/d(eps_lat).
        slope_elastic = 2.0 * ep.bulk + 2.0 * ep.shear / 3.0
        el0 = guess
        g0 = transverse_stress(el0)
        converged = abs(g0) <= tol
        el, g = el0, g0
        if not converged:
            el = el0 - g0 / slope_elastic
            for _ in range(max_iter):
                g = transverse_stress(el)
                if abs(g) <= tol:
                    converged = True
                    break
                if g == g0:
                    break
                el, el0, g0 = el - g * (el - el0) / (g - g0), el, g
        if not converged:
            raise DriverError(
                f"lateral-strain iteration failed at step {i} "
                f"(axial strain {eps[i]:.4g}, residual {g:.3e})"
            )

        e = np.diag([eps[i], el, el])
        state, sig = integrate_viscoplastic_step(state, e, dts[i - 1], ep, pp)
        sigma_ax[i] = sig[0, 0]
        eps_lat[i] = el

    return sigma_ax, eps_lat, state


def read_parameter_file(path) -> dict:
    """Read a key-value material parameter file.

    Recognized keys: ``E, nu`` or ``K, G`` for elasticity; ``k, b, c, eta, r``
    for plasticity.  Units are fixed (N/mm^2 and seconds).
    """
    params = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"malformed parameter line: {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            params[key] = float(value)
    return params


def write_parameter_file(path, params: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in params.items():
            fh.write(f"{key} = {value!r}\n")


def elastic_params_from_mapping(params: dict) -> ElasticParams:
    """Build ElasticParams from a parameter mapping with E/nu or K/G keys."""
    if "E" in params and "nu" in params:
        return ElasticParams(E=params["E"], nu=params["nu"])
    if "K" in params and "G" in params:
        return ElasticParams.from_bulk_shear(params["K"], params["G"])
    raise ParameterError("elastic parameters require either (E, nu) or (K, G)")


def plastic_params_from_mapping(params: dict) -> PlasticParams:
    kwargs = {key: params[key] for key in ("k", "b", "c", "eta", "r") if key in params}
    if "k" not in kwargs:
        raise ParameterError("plastic parameters require at least the yield stress k")
    return PlasticParams(**kwargs)
