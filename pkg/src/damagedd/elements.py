"""Shape functions and quadrature for bilinear quads and linear triangles."""

from __future__ import annotations

import numpy as np

from .mesh import QUAD, TRIANGLE

# reference element corner coordinates
_QUAD_CORNERS = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
_TRI_CORNERS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def gauss_rule(family, n_points=None):
    """Quadrature points and weights on the reference element.

    Quads use the 2 x 2 tensor rule.  Triangles default to the symmetric
    3-point rule (degree 2); ``n_points=1`` selects the centroid rule.
    Weights sum to the reference element area (4 resp. 1/2).
    """
    if family == QUAD:
        if n_points not in (None, 4):
            raise ValueError("quads support only the 2x2 rule")
        a = 1.0 / np.sqrt(3.0)
        pts = np.array([[-a, -a], [a, -a], [a, a], [-a, a]])
        return pts, np.ones(4)
    if family == TRIANGLE:
        if n_points in (None, 3):
            pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
            return pts, np.full(3, 1 / 6)
        if n_points == 1:
            return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
        raise ValueError("triangles support 1- or 3-point rules")
    raise ValueError(f"unknown element family '{family}'")


def shape_values(family, xi):
    """Shape function values N_a at a reference point."""
    x, y = xi
    if family == QUAD:
        return 0.25 * np.array([(1 - x) * (1 - y), (1 + x) * (1 - y),
                                (1 + x) * (1 + y), (1 - x) * (1 + y)])
    if family == TRIANGLE:
        return np.array([1.0 - x - y, x, y])
    raise ValueError(f"unknown element family '{family}'")


def shape_gradients(family, xi):
    """Reference gradients dN_a/dxi_k, shape (n_nodes, 2)."""
    x, y = xi
    if family == QUAD:
        return 0.25 * np.array([[-(1 - y), -(1 - x)],
                                [(1 - y), -(1 + x)],
                                [(1 + y), (1 + x)],
                                [-(1 + y), (1 - x)]])
    if family == TRIANGLE:
        return np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    raise ValueError(f"unknown element family '{family}'")


def reference_corners(family):
    if family == QUAD:
        return _QUAD_CORNERS.copy()
    if family == TRIANGLE:
        return _TRI_CORNERS.copy()
    raise ValueError(f"unknown element family '{family}'")


def shape_functions(family, xi, node_xy=None):
    """Shape values and the strain-displacement matrix at a local point.

    Parameters
    ----------
    family : str
        Element family.
    xi : (2,) sequence
        Local coordinates.
    node_xy : (n_nodes, 2) array, optional
        Physical node coordinates; defaults to the reference element, in
        which case B is expressed in reference coordinates.

    Returns
    -------
    N : (n_nodes,) array
    B : (3, 2 * n_nodes) array
        Rows are eps_xx, eps_yy, gamma_xy (engineering shear).
    """
    N = shape_values(family, xi)
    if node_xy is None:
        node_xy = reference_corners(family)
    B, det = b_matrix(family, xi, np.asarray(node_xy, dtype=np.float64))
    return N, B


def b_matrix(family, xi, node_xy):
    """Strain-displacement matrix and Jacobian determinant at a local point."""
    dN = shape_gradients(family, xi)             # (nn, 2), d/dxi_k
    J = dN.T @ node_xy                           # J[k, l] = dx_l / dxi_k
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if det <= 0.0:
        raise ValueError(f"non-positive Jacobian determinant {det:g}")
    invJ = np.array([[J[1, 1], -J[0, 1]], [-J[1, 0], J[0, 0]]]) / det
    grad = dN @ invJ.T                           # (nn, 2), d/dx_l
    nn = dN.shape[0]
    B = np.zeros((3, 2 * nn))
    B[0, 0::2] = grad[:, 0]
    B[1, 1::2] = grad[:, 1]
    B[2, 0::2] = grad[:, 1]
    B[2, 1::2] = grad[:, 0]
    return B, det
