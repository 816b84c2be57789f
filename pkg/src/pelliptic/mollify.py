"""Compactly supported mollifiers on C^N and convolution quadrature.

The smoothing kernel is a radial bump supported on the unit ball of
R^{2N}, scaled to width nu.  Convolutions are evaluated pointwise on
demand with a product Gauss rule on the ball (radial Gauss-Jacobi times
a sphere rule built from Gauss-Gegenbauer levels and a trapezoidal
azimuth); derivative mode differentiates the kernel, so it applies to
functions that are merely continuous.

On top of this the module verifies the regularized-function estimates
for the three-variable Bellman function and assembles its cut-off,
perturbed version whose generalized convexity extends to all of C^3.
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma, roots_jacobi

from .bellman import BellmanFunction, convexity_margin, sample_directions
from .ellipticity import delta_p_exact
from .hessian import (RadialProfile, SmoothFunctionDescriptor, combine,
                      full_radial, hessian_form, pack_points,
                      perturbation_family, product)
from .sampling import rng_stream


class QuadratureError(RuntimeError):
    pass


def sphere_surface(m):
    return 2.0 * np.pi ** (m / 2.0) / gamma(m / 2.0)


def sphere_rule(m, order):
    """Nodes/weights on S^{m-1} exact for polynomials of degree <= order.

    Built recursively: Gauss-Gegenbauer in each polar cosine, equally
    spaced azimuth.  Weights sum to the sphere surface; the node set is
    antipodally symmetric (odd polynomials integrate to zero exactly).
    """
    if m == 1:
        return np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
    if m == 2:
        k = max(order + 1, 4)
        k += k % 2  # keep antipodal symmetry
        ang = 2.0 * np.pi * np.arange(k) / k
        pts = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return pts, np.full(k, 2.0 * np.pi / k)
    nc = max((order + 2) // 2, 2)
    alpha = (m - 3) / 2.0
    c, wc = roots_jacobi(nc, alpha, alpha)
    sub_pts, sub_w = sphere_rule(m - 1, order)
    s = np.sqrt(np.maximum(1.0 - c ** 2, 0.0))
    pts = np.concatenate([
        np.repeat(c, len(sub_pts))[:, None],
        np.kron(s[:, None], sub_pts),
    ], axis=1)
    w = np.kron(wc, sub_w)
    return pts, w


def ball_rule(m, radial_order=16, angular_order=5):
    """Product rule on the unit ball of R^m.

    Exact for polynomials of degree <= min(2*radial_order - 1,
    angular_order); weights sum to the ball volume.
    """
    x, wr = roots_jacobi(radial_order, 0.0, m - 1.0)
    r = 0.5 * (x + 1.0)
    wr = wr * 0.5 ** m
    sp, sw = sphere_rule(m, angular_order)
    nodes = np.kron(r[:, None], sp)
    weights = np.kron(wr, sw)
    return nodes, weights


@dataclass(frozen=True)
class BumpKernel:
    """Radial bump c * exp(-beta / (1 - |x|^2)) on the unit ball of C^N.

    The normalization constant is computed with a high-accuracy radial
    quadrature; `beta` is chosen per arity so that 0 <= phi <= 1.
    """

    arity: int
    beta: float
    norm_const: float

    @staticmethod
    def build(arity, beta=None):
        m = 2 * arity
        if beta is None:
            beta = _DEFAULT_BETA.get(arity, 1.0)
        integrand = lambda r: np.exp(-beta / (1.0 - r * r)) * r ** (m - 1)
        mass, err = quad(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13)
        c = 1.0 / (sphere_surface(m) * mass)
        if c * np.exp(-beta) > 1.0 + 1e-12:
            raise QuadratureError("kernel peak exceeds 1; increase beta")
        return BumpKernel(arity=arity, beta=beta, norm_const=c)

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        inside = r < 1.0
        out[inside] = self.norm_const * np.exp(-self.beta / (1.0 - r[inside] ** 2))
        return out

    def profile_d1(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        inside = r < 1.0
        ri = r[inside]
        g = self.norm_const * np.exp(-self.beta / (1.0 - ri ** 2))
        out[inside] = g * (-2.0 * self.beta * ri / (1.0 - ri ** 2) ** 2)
        return out

    def profile_d2(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        inside = r < 1.0
        ri = r[inside]
        one = 1.0 - ri ** 2
        g = self.norm_const * np.exp(-self.beta / one)
        out[inside] = g * (4.0 * self.beta ** 2 * ri ** 2 / one ** 4
                           - 2.0 * self.beta * (1.0 + 3.0 * ri ** 2) / one ** 3)
        return out

    def values_at(self, nodes):
        """phi, grad phi, hess phi at rule nodes ((Q, m) array)."""
        r = np.linalg.norm(nodes, axis=1)
        safe = np.where(r > 0.0, r, 1.0)
        u = nodes / safe[:, None]
        f = self.profile(r)
        d1 = self.profile_d1(r)
        d2 = self.profile_d2(r)
        grad = d1[:, None] * u
        iso = np.where(r > 0.0, d1 / safe, -2.0 * self.beta * self.norm_const
                       * np.exp(-self.beta))
        m = nodes.shape[1]
        hess = (iso[:, None, None] * np.eye(m)[None, :, :]
                + (d2 - iso)[:, None, None] * u[:, :, None] * u[:, None, :])
        return f, grad, hess

    def mass(self, rule):
        """Rule-integrated kernel mass (the exact value is 1)."""
        nodes, weights = rule
        return float(weights @ self.profile(np.linalg.norm(nodes, axis=1)))


# beta tuned so the kernel peak c*exp(-beta) stays at or below 1
_DEFAULT_BETA = {1: 1.0, 2: 1.0, 3: 0.6}

_RULE_CACHE = {}


def cached_ball_rule(m, radial_order=16, angular_order=5):
    key = (m, radial_order, angular_order)
    if key not in _RULE_CACHE:
        _RULE_CACHE[key] = ball_rule(m, radial_order, angular_order)
    return _RULE_CACHE[key]


class MollifiedDescriptor:
    """Convolution of a continuous function with the width-nu bump.

    Only point values of the underlying function are used; gradients
    and Hessians come from kernel derivatives.  The discrete kernel
    weights are renormalized to unit mass so constants are reproduced
    exactly.
    """

    def __init__(self, value_fn, arity, nu, rule=None, kernel=None, chunk=256):
        if not (0.0 < nu <= 1.0):
            raise ValueError("nu must lie in (0, 1]")
        self.arity = arity
        self.nu = float(nu)
        self.chunk = chunk
        m = 2 * arity
        self._value_fn = value_fn
        self.kernel = kernel or BumpKernel.build(arity)
        nodes, weights = rule if rule is not None else cached_ball_rule(m)
        f, g, h = self.kernel.values_at(nodes)
        mass = weights @ f
        self._nodes = nodes
        self._w_val = weights * f / mass
        self._w_grad = weights[:, None] * g / mass
        self._w_hess = weights[:, None, None] * h / mass

    def descriptor(self):
        return SmoothFunctionDescriptor(
            arity=self.arity, value=self.value, gradient=self.gradient,
            hessian=self.hessian,
            in_domain=lambda x: np.ones(x.shape[0], dtype=bool))

    def _shifted_values(self, x, sign):
        n = x.shape[0]
        q = self._nodes.shape[0]
        pts = (x[:, None, :] + sign * self.nu * self._nodes[None, :, :]).reshape(n * q, -1)
        return self._value_fn(pts).reshape(n, q)

    def _apply(self, x, mode):
        # Derivative modes use symmetrized differences f(x -+ nu*eta) so
        # the exact vanishing moments of the kernel derivatives (integral
        # of D phi, of D^2 phi, and their odd moments) hold discretely;
        # otherwise tiny quadrature defects get amplified by nu^{-2}.
        out = None
        for lo in range(0, x.shape[0], self.chunk):
            sl = slice(lo, min(lo + self.chunk, x.shape[0]))
            fm = self._shifted_values(x[sl], -1.0)
            if mode == "value":
                part = fm @ self._w_val
            elif mode == "gradient":
                fp = self._shifted_values(x[sl], +1.0)
                part = (0.5 * (fm - fp) @ self._w_grad) / self.nu
            else:
                fp = self._shifted_values(x[sl], +1.0)
                f0 = self._value_fn(x[sl])
                sym = 0.5 * (fm + fp) - f0[:, None]
                part = np.einsum("nq,qab->nab", sym, self._w_hess) / self.nu ** 2
            out = part if out is None else np.concatenate([out, part], axis=0)
        return out

    def value(self, x):
        return self._apply(np.atleast_2d(x), "value")

    def gradient(self, x):
        return self._apply(np.atleast_2d(x), "gradient")

    def hessian(self, x):
        return self._apply(np.atleast_2d(x), "hessian")


def mollify(value_fn, arity, nu, omega, rule=None, deriv=0, adaptive_tol=None):
    """Convolution (and kernel-derivative convolutions) at given points.

    With `adaptive_tol` set, the value mode is recomputed on rules of
    increasing order until two successive results agree to the given
    tolerance; nonconvergence raises QuadratureError.
    """
    pts = pack_points(np.atleast_2d(np.asarray(omega, dtype=complex)))
    if adaptive_tol is not None and deriv == 0:
        prev = None
        for (ro, ao) in ((12, 3), (16, 5), (24, 7), (32, 9)):
            md = MollifiedDescriptor(value_fn, arity, nu,
                                     rule=cached_ball_rule(2 * arity, ro, ao))
            cur = md.value(pts)
            if prev is not None and np.max(np.abs(cur - prev)) <= adaptive_tol * (
                    1.0 + np.max(np.abs(cur))):
                return cur
            prev = cur
        raise QuadratureError("ball quadrature did not converge to tolerance")
    md = MollifiedDescriptor(value_fn, arity, nu, rule=rule)
    return [md.value, md.gradient, md.hessian][deriv](pts)


# ---------------------------------------------------------------------------
# regularized Bellman estimates


def _scatter_points(rng, n, scale=2.0, near_axis_frac=0.3, nu=None):
    """Random points in C^3, a share pushed near the degenerate axes."""
    omega = (rng.standard_normal((n, 3)) + 1j * rng.standard_normal((n, 3)))
    omega *= rng.uniform(0.05, scale, (n, 1))
    k = int(near_axis_frac * n)
    if k and nu is not None:
        which = rng.integers(0, 3, k)
        rows = np.arange(k)
        omega[rows, which] *= nu * rng.uniform(0.0, 2.0, k) / np.abs(
            omega[rows, which])
    return omega


def measured_constants(params, samples=20_000, seed=0):
    """Empirical constants of the unmollified function's estimates."""
    fn = BellmanFunction(params)
    rng = rng_stream(seed, "bellman-constants")
    omega = _scatter_points(rng, samples)
    t = params.triple
    qq = t.p if params.variant == "p=q" else t.q
    levels = (np.abs(omega[:, 0]) ** t.p + np.abs(omega[:, 1]) ** qq
              + np.abs(omega[:, 2]) ** t.r)
    vals = fn.value(omega)
    c_value = float(np.max(vals / np.maximum(levels, 1e-300)))
    ratios = fn.gradient_bound_ratios(omega)
    c_grad = [float(np.max(ratios[:, j])) for j in range(3)]
    return {"value": c_value, "gradient": c_grad}


def mollified_bellman_bounds(params, nu, mats=None, samples=2_000, seed=0,
                             rule=None, hessian_samples=None, c_hessian=None):
    """Sampled margins of the width-nu regularized function's estimates.

    The value and gradient estimates are checked against the envelopes
    with every modulus inflated by nu, using the constants measured for
    the unmollified function inflated by 1.05.  With a matrix triple
    given, the Hessian-form estimate is checked against
    c * (|w| - nu) |zeta| |eta| where c is the measured convexity
    constant deflated by 1.05 (pass `c_hessian` to reuse a measured
    value).  All reported margins should be nonnegative.
    """
    fn = BellmanFunction(params)
    t = params.triple
    qq = t.p if params.variant == "p=q" else t.q
    consts = measured_constants(params, seed=seed)
    rng = rng_stream(seed, f"naklofen-{nu}")
    omega = _scatter_points(rng, samples, nu=nu)
    pts = pack_points(omega)
    md = MollifiedDescriptor(fn.descriptor().value, 3, nu, rule=rule)

    caps = np.stack([(np.abs(omega[:, 0]) + nu) ** t.p,
                     (np.abs(omega[:, 1]) + nu) ** qq,
                     (np.abs(omega[:, 2]) + nu) ** t.r], axis=1)
    vals = md.value(pts)
    value_margin = float(np.min(1.05 * consts["value"] * caps.sum(axis=1) - vals))

    grads = md.gradient(pts)
    wirt = 0.5 * np.abs(grads[:, 0::2] + 1j * grads[:, 1::2])
    top = np.max(caps, axis=1)
    envelopes = np.stack([top ** (1.0 - 1.0 / t.p),
                          top ** (1.0 - 1.0 / qq),
                          (np.abs(omega[:, 2]) + nu) ** (t.r - 1.0)], axis=1)
    grad_margins = [float(np.min(1.05 * consts["gradient"][j] * envelopes[:, j]
                                 - wirt[:, j])) for j in range(3)]

    out = {"nu": nu, "constants": consts, "value_margin": value_margin,
           "gradient_margins": grad_margins}

    origin = md.value(np.zeros((1, 6)))[0]
    out["origin_value"] = float(origin)
    out["origin_cap"] = float(1.05 * consts["value"] * (nu ** t.p + nu ** qq + nu ** t.r))

    if mats is not None:
        nh = hessian_samples or samples
        if c_hessian is None:
            _, c_hessian = convexity_margin(params, [tuple(mats)], seed=seed)
        omega_h = _scatter_points(rng, nh, nu=nu)
        d = np.asarray(mats[0]).shape[0]
        x = sample_directions(rng, omega_h.shape[0], d)
        desc = md.descriptor()
        vals_h = hessian_form(desc, mats, omega_h, x)
        rhs = (c_hessian / 1.05 * (np.abs(omega_h[:, 2]) - nu)
               * np.linalg.norm(x[:, 0, :], axis=1)
               * np.linalg.norm(x[:, 1, :], axis=1))
        out["hessian_margin"] = float(np.min(vals_h - rhs))
        out["hessian_constant"] = float(c_hessian)
    return out


def mollified_growth_bounds(params, nu, samples=2_000, seed=0, rule=None):
    """Growth of the regularized function and its first two derivatives.

    Reports the empirical constants of

        |X_nu|      <= C (|u|^p + |v|^q + |w|^r + 1)
        |D X_nu|    <= C (|omega|^{m-1} + |omega|^{M-1})
        |D^2 X_nu|  <= C nu^{m-2} (|omega|^{M-2} + |omega| + 1)

    plus the gradient at the origin (exactly zero by symmetry of the
    node set).  Stability of the constants across nu is the caller's
    check.
    """
    fn = BellmanFunction(params)
    t = params.triple
    qq = t.p if params.variant == "p=q" else t.q
    m_low, m_top = t.m, t.M
    rng = rng_stream(seed, f"izumrud-{nu}")
    omega = _scatter_points(rng, samples, nu=nu)
    pts = pack_points(omega)
    md = MollifiedDescriptor(fn.descriptor().value, 3, nu, rule=rule)

    mods = np.linalg.norm(omega, axis=1)
    levels = (np.abs(omega[:, 0]) ** t.p + np.abs(omega[:, 1]) ** qq
              + np.abs(omega[:, 2]) ** t.r + 1.0)
    c_val = float(np.max(np.abs(md.value(pts)) / levels))

    g = np.linalg.norm(md.gradient(pts), axis=1)
    env1 = mods ** (m_low - 1.0) + mods ** (m_top - 1.0)
    c_grad = float(np.max(g / env1))

    h = np.linalg.norm(md.hessian(pts), axis=(1, 2))
    env2 = nu ** (m_low - 2.0) * (mods ** (m_top - 2.0) + mods + 1.0)
    c_hess = float(np.max(h / env2))

    grad0 = float(np.linalg.norm(md.gradient(np.zeros((1, 6)))))
    return {"nu": nu, "value_constant": c_val, "gradient_constant": c_grad,
            "hessian_constant": c_hess, "gradient_at_origin": grad0}


# ---------------------------------------------------------------------------
# cut-off, perturbed regularization with global generalized convexity


def cutoff_profile(n):
    """C^2 radial plateau: 1 on [0, 3n], quintic descent to 0 on [3n, 4n]."""

    def stretch(r):
        return np.clip((np.asarray(r, dtype=float) / n - 3.0), 0.0, 1.0)

    def f(r):
        t = stretch(r)
        return 1.0 - (10.0 * t ** 3 - 15.0 * t ** 4 + 6.0 * t ** 5)

    def d1(r):
        r = np.asarray(r, dtype=float)
        t = stretch(r)
        inside = (r > 3.0 * n) & (r < 4.0 * n)
        return np.where(inside, -(30.0 * t ** 2 - 60.0 * t ** 3 + 30.0 * t ** 4) / n, 0.0)

    def d2(r):
        r = np.asarray(r, dtype=float)
        t = stretch(r)
        inside = (r > 3.0 * n) & (r < 4.0 * n)
        return np.where(inside, -(60.0 * t - 180.0 * t ** 2 + 120.0 * t ** 3) / n ** 2, 0.0)

    def d1_over_r(r):
        r = np.asarray(r, dtype=float)
        return np.where(r > 0.0, d1(r) / np.where(r > 0.0, r, 1.0), 0.0)

    return RadialProfile(f, d1, d2, d1_over_r=d1_over_r)


@dataclass(frozen=True)
class CutoffBellman:
    """cutoff * (X * phi_nu) + C nu^{m-2} (P * phi_nu) and its metadata."""

    params: object
    n: int
    nu: float
    eps: float
    c_pert: float
    descriptor: SmoothFunctionDescriptor
    mollified_bellman: SmoothFunctionDescriptor
    shell_margin: float


def assemble_cutoff_bellman(params, mats, n, nu, c_pert=None, eps=None,
                            samples=2_000, seed=0, rule=None, target=0.0):
    """Cut-off, perturbed regularization of the Bellman function.

    The plateau of the radial cutoff covers {|omega| <= 3n}; the
    correction term restores generalized convexity where the cutoff
    decays.  With `c_pert` unset, a doubling search raises it until the
    sampled form margin on the critical shell {3n <= |omega| <= 4n}
    (and on a general scatter) reaches `target`.
    """
    t = params.triple
    m_low, m_top = t.m, t.M
    if eps is None:
        eps = 0.5
        while eps > 1e-3 and min(delta_p_exact(a, m_top + eps) for a in mats) <= 0:
            eps *= 0.5
        if eps <= 1e-3:
            raise ValueError("no eps with positive (M+eps)-ellipticity found")
    fam = perturbation_family(m_top, n, eps, mats, seed=seed)
    fn = BellmanFunction(params)
    md_bell = MollifiedDescriptor(fn.descriptor().value, 3, nu, rule=rule).descriptor()
    md_pert = MollifiedDescriptor(fam.combined.value, 3, nu, rule=rule).descriptor()
    cut = full_radial(cutoff_profile(n), 3)

    def build(c):
        return combine([product(cut, md_bell), md_pert],
                       [1.0, c * nu ** (m_low - 2.0)])

    rng = rng_stream(seed, "cutoff-bellman")
    d = np.asarray(mats[0]).shape[0]
    shell = rng.standard_normal((samples, 3)) + 1j * rng.standard_normal((samples, 3))
    shell *= (n * rng.uniform(3.0, 4.0, (samples, 1))
              / np.linalg.norm(shell, axis=1)[:, None])
    scatter = _scatter_points(rng, samples, scale=5.0 * n, nu=nu)
    omega = np.vstack([shell, scatter])
    x = sample_directions(rng, omega.shape[0], d)

    def margin(c):
        vals = hessian_form(build(c), mats, omega, x)
        scale = np.linalg.norm(x, axis=(1, 2)) ** 2 + 1e-300
        return float(np.min(vals / scale))

    if c_pert is None:
        c_pert = 1.0
        for _ in range(24):
            if margin(c_pert) >= target:
                break
            c_pert *= 2.0
        else:
            raise RuntimeError(f"no admissible perturbation size found; "
                               f"worst margin {margin(c_pert):.3e}")
    final = margin(c_pert)
    if final < target:
        raise RuntimeError(f"insufficient perturbation size {c_pert}: "
                           f"worst margin {final:.3e}")
    return CutoffBellman(params=params, n=n, nu=nu, eps=eps, c_pert=c_pert,
                         descriptor=build(c_pert), mollified_bellman=md_bell,
                         shell_margin=final)
