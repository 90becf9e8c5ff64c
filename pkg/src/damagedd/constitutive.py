"""Isotropic damage constitutive model.

Stress is degraded elasticity, sigma = (1 - d) C : eps, with the scalar
damage d driven by an equivalent strain measure through the Mazars law.
The damage field can be averaged over a Gaussian neighbourhood (integral
non-local regularization); the averaged value is what degrades the
stiffness.  All strain arrays use Voigt order (eps_xx, eps_yy, gamma_xy)
with engineering shear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

EQ_PRINCIPAL = "principal"
EQ_MODIFIED_VM = "modified_vm"


@dataclass
class MaterialParams:
    """Material and damage-law parameters.

    Parameters
    ----------
    shear_modulus : float
        G in N/mm^2.
    poisson : float
        nu, must lie in (0, 0.5) for plane strain.
    eps_d : float
        Damage threshold strain of the Mazars law.
    alpha, beta : float
        Mazars shape parameters.
    d_max : float
        Damage cap in [0, 1); keeps the degraded stiffness positive.
    k : float
        Compression/tension sensitivity of the modified von Mises
        equivalent strain, must exceed 1.
    l_c : float
        Non-local characteristic length in mm; 0 means local.
    eq_strain_kind : str
        "principal" or "modified_vm".
    vm_printed_form : bool
        Selects between two published variants of the modified von
        Mises expression: True keeps the leading term
        (k-1)/(2k(1-2nu)) independent of strain, False scales it by the
        first strain invariant (the conventional variant).  Irrelevant
        for the principal-strain measure the benchmark presets use.
    """

    shear_modulus: float = 125.0
    poisson: float = 0.2
    eps_d: float = 1.0e-4
    alpha: float = 0.8
    beta: float = 2.0e4
    d_max: float = 0.99
    k: float = 10.0
    l_c: float = 0.0
    eq_strain_kind: str = EQ_PRINCIPAL
    vm_printed_form: bool = True

    def __post_init__(self):
        if self.shear_modulus <= 0.0:
            raise ValueError("shear modulus must be positive")
        if not 0.0 < self.poisson < 0.5:
            raise ValueError("poisson ratio must lie in (0, 0.5)")
        if self.eps_d <= 0.0:
            raise ValueError("eps_d must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.d_max < 1.0:
            raise ValueError("d_max must lie in [0, 1)")
        if self.k <= 1.0:
            raise ValueError("k must exceed 1")
        if self.l_c < 0.0:
            raise ValueError("l_c cannot be negative")
        if self.eq_strain_kind not in (EQ_PRINCIPAL, EQ_MODIFIED_VM):
            raise ValueError(f"unknown equivalent strain '{self.eq_strain_kind}'")

    @property
    def youngs_modulus(self):
        return 2.0 * self.shear_modulus * (1.0 + self.poisson)


def elasticity_matrix(params):
    """Plane-strain elasticity matrix (3 x 3, Voigt)."""
    E, nu = params.youngs_modulus, params.poisson
    c = E / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return c * np.array([
        [1.0 - nu, nu, 0.0],
        [nu, 1.0 - nu, 0.0],
        [0.0, 0.0, 0.5 * (1.0 - 2.0 * nu)],
    ])


# ----------------------------------------------------------------------
# equivalent strain measures
# ----------------------------------------------------------------------

def equivalent_strain(strain, params):
    """Scalar equivalent strain for Voigt strains of shape (..., 3)."""
    if params.eq_strain_kind == EQ_PRINCIPAL:
        return _eq_principal(strain)
    return _eq_modified_vm(strain, params)


def _eq_principal(strain):
    """Positive principal strain norm; the out-of-plane strain is zero."""
    e = np.asarray(strain, dtype=np.float64)
    exx, eyy, gxy = e[..., 0], e[..., 1], e[..., 2]
    c = 0.5 * (exx + eyy)
    r = np.sqrt((0.5 * (exx - eyy)) ** 2 + (0.5 * gxy) ** 2)
    e1 = np.maximum(c + r, 0.0)
    e2 = np.maximum(c - r, 0.0)
    return np.sqrt(e1 ** 2 + e2 ** 2)


def _eq_modified_vm(strain, params):
    e = np.asarray(strain, dtype=np.float64)
    exx, eyy, gxy = e[..., 0], e[..., 1], e[..., 2]
    k, nu = params.k, params.poisson
    i1 = exx + eyy
    # tr(eps . eps) for the plane-strain tensor (eps_zz = 0)
    tr2 = exx ** 2 + eyy ** 2 + 2.0 * (0.5 * gxy) ** 2
    j2 = 3.0 * tr2 - i1 ** 2
    lead = (k - 1.0) / (2.0 * k * (1.0 - 2.0 * nu))
    rad = (k - 1.0) ** 2 / (1.0 - 2.0 * nu) ** 2 * i1 ** 2 \
        + 2.0 * k / (1.0 + nu) ** 2 * j2
    root = np.sqrt(np.maximum(rad, 0.0)) / (2.0 * k)
    if params.vm_printed_form:
        return lead + root
    return lead * i1 + root


# ----------------------------------------------------------------------
# Mazars damage law
# ----------------------------------------------------------------------

def mazars_damage(eq_strain, params):
    """Damage as a function of the equivalent strain history maximum.

    Zero below the threshold eps_d, then
    1 - eps_d (1 - alpha) / e - alpha exp(-beta (e - eps_d)),
    clamped to [0, d_max].  Continuous and non-decreasing in e.
    """
    e = np.asarray(eq_strain, dtype=np.float64)
    ed, a, b = params.eps_d, params.alpha, params.beta
    safe = np.maximum(e, ed)
    d = 1.0 - ed * (1.0 - a) / safe - a * np.exp(-b * (safe - ed))
    d = np.where(e < ed, 0.0, d)
    return np.clip(d, 0.0, params.d_max)


# ----------------------------------------------------------------------
# non-local averaging
# ----------------------------------------------------------------------

class NonlocalTable:
    """Quadrature-weighted Gaussian averaging of the damage field.

    For gauss point i the averaged damage is

        dbar_i = sum_j phi_ij w_j d_j / sum_j phi_ij w_j,
        phi_ij = exp(-|x_i - x_j|^2 / l_c^2),

    where w_j is the quadrature weight times the Jacobian determinant.
    Pairs beyond ``cutoff_factor * l_c`` are dropped.  With l_c = 0 the
    table degenerates to self-only entries and averaging is the identity.
    """

    def __init__(self, points, weights, l_c, cutoff_factor=2.0):
        points = np.asarray(points, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        n = points.shape[0]
        if weights.shape != (n,):
            raise ValueError("one quadrature weight per point is required")
        if np.any(weights <= 0.0):
            raise ValueError("quadrature weights must be positive")
        if l_c < 0.0:
            raise ValueError("l_c cannot be negative")
        self.l_c = float(l_c)
        self.n_points = n
        if l_c == 0.0:
            rows = cols = np.arange(n)
            data = weights.copy()
        else:
            tree = cKDTree(points)
            pairs = tree.query_pairs(r=cutoff_factor * l_c, output_type="ndarray")
            d2 = np.sum((points[pairs[:, 0]] - points[pairs[:, 1]]) ** 2, axis=1)
            phi = np.exp(-d2 / l_c ** 2)
            eye = np.arange(n)
            rows = np.concatenate([pairs[:, 0], pairs[:, 1], eye])
            cols = np.concatenate([pairs[:, 1], pairs[:, 0], eye])
            data = np.concatenate([phi, phi, np.ones(n)]) * weights[cols]
        self.matrix = sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
        self.denominator = np.asarray(self.matrix.sum(axis=1)).ravel()

    def average(self, d):
        """Averaged damage over all points."""
        return (self.matrix @ d) / self.denominator

    def reach(self, mask):
        """Boolean rows whose neighbourhood touches any point in ``mask``."""
        hit = self.matrix @ mask.astype(np.float64)
        return hit > 0.0

    def restricted(self, rows):
        """Averaging operator restricted to a subset of rows.

        Returns a callable d -> dbar values on ``rows``.  Useful when the
        caller knows the field is zero elsewhere.
        """
        sub = self.matrix[rows]
        den = self.denominator[rows]

        def apply(d):
            return (sub @ d) / den

        return apply
