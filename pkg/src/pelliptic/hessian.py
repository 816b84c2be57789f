"""Generalized Hessian forms of smooth functions on C^N.

A function Phi: C^N -> R is paired with an N-tuple of d x d complex
matrices through

    H[omega; X] = < [D^2 Phi(omega) (x) I_d] W(X), (M(A_1) (+) ... (+) M(A_N)) W(X) >,

where W stacks the real/imaginary parts of the direction slots X_j in
C^d and M(A) is the real block form of A.  Positivity of H for all
omega, X is generalized convexity of Phi with respect to the tuple.

The module provides batched function descriptors (value / real gradient
/ real Hessian on R^{2N}), the form and its renormalized variant, the
closed-form lower bounds for (tensor products of) power functions, a
convexified power sum, and the tamed power-function perturbation family
used to regularize cut-off Bellman functions.
"""

from dataclasses import dataclass
import hashlib
import json

import numpy as np

from .ellipticity import delta_p_exact, Lambda_of, lambda_of
from .sampling import rng_stream, random_complex_vectors


class HessianDomainError(ValueError):
    """Evaluation point outside the descriptor's C^2 domain."""


# ---------------------------------------------------------------------------
# packing helpers: slot j of omega occupies real coordinates (2j, 2j+1)


def pack_points(omega):
    """(n, N) complex -> (n, 2N) real, slotwise (Re, Im) interleaving."""
    omega = np.atleast_2d(np.asarray(omega, dtype=complex))
    n, nslots = omega.shape
    x = np.empty((n, 2 * nslots))
    x[:, 0::2] = omega.real
    x[:, 1::2] = omega.imag
    return x


def unpack_points(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return x[:, 0::2] + 1j * x[:, 1::2]


@dataclass(frozen=True)
class SmoothFunctionDescriptor:
    """Batched value / gradient / Hessian of a C^2 function on C^N.

    Callables take an (n, 2N) real array (slotwise Re/Im interleaved)
    and return (n,), (n, 2N) and (n, 2N, 2N) arrays.  `in_domain` marks
    the points where the Hessian formulas are valid.
    """

    arity: int
    value: callable
    gradient: callable
    hessian: callable
    in_domain: callable

    def value_c(self, omega):
        return self.value(pack_points(omega))

    def gradient_c(self, omega):
        return self.gradient(pack_points(omega))

    def hessian_c(self, omega):
        return self.hessian(pack_points(omega))


def _slot_moduli(x):
    """(n, 2N) -> (n, N) moduli of the complex slots."""
    return np.hypot(x[:, 0::2], x[:, 1::2])


def _rpow(rho, e):
    """rho**e with the convention 0**e = 0 for e != 0 (and 1 for e = 0)."""
    if e == 0:
        return np.ones_like(rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(rho > 0.0, rho, 1.0) ** e
    return np.where(rho > 0.0, out, 0.0)


# ---------------------------------------------------------------------------
# monomial sums  sum_k K_k * prod_j |omega_j|^{e_kj}


class MonomialSum:
    """Linear combination of products of slot-modulus powers."""

    def __init__(self, arity, terms):
        self.arity = arity
        self.terms = [(float(k), tuple(float(e) for e in exps)) for k, exps in terms]
        for _, exps in self.terms:
            if len(exps) != arity:
                raise ValueError("exponent tuple arity mismatch")

    def descriptor(self):
        return SmoothFunctionDescriptor(
            arity=self.arity,
            value=self.value,
            gradient=self.gradient,
            hessian=self.hessian,
            in_domain=self.in_domain,
        )

    def value(self, x):
        rho = _slot_moduli(x)
        out = np.zeros(x.shape[0])
        for k, exps in self.terms:
            term = np.full(x.shape[0], k)
            for j, e in enumerate(exps):
                if e != 0.0:
                    term = term * _rpow(rho[:, j], e)
            out += term
        return out

    def gradient(self, x):
        rho = _slot_moduli(x)
        n = x.shape[0]
        out = np.zeros((n, 2 * self.arity))
        for k, exps in self.terms:
            factors = [_rpow(rho[:, j], e) if e != 0.0 else np.ones(n)
                       for j, e in enumerate(exps)]
            for j, e in enumerate(exps):
                if e == 0.0:
                    continue
                rest = np.full(n, k)
                for l in range(self.arity):
                    if l != j:
                        rest = rest * factors[l]
                # d/dz |z|^e = e |z|^{e-2} (x, y)
                coef = e * _rpow(rho[:, j], e - 2.0) * rest
                out[:, 2 * j] += coef * x[:, 2 * j]
                out[:, 2 * j + 1] += coef * x[:, 2 * j + 1]
        return out

    def hessian(self, x):
        rho = _slot_moduli(x)
        n = x.shape[0]
        nn = 2 * self.arity
        out = np.zeros((n, nn, nn))
        eye2 = np.eye(2)
        for k, exps in self.terms:
            factors = [_rpow(rho[:, j], e) if e != 0.0 else np.ones(n)
                       for j, e in enumerate(exps)]
            grads = {}
            for j, e in enumerate(exps):
                if e != 0.0:
                    coef = e * _rpow(rho[:, j], e - 2.0)
                    grads[j] = coef[:, None] * x[:, 2 * j:2 * j + 2]
            for j, e in enumerate(exps):
                if e == 0.0:
                    continue
                rest = np.full(n, k)
                for l in range(self.arity):
                    if l != j:
                        rest = rest * factors[l]
                z = x[:, 2 * j:2 * j + 2]
                c1 = e * _rpow(rho[:, j], e - 2.0)
                c2 = e * (e - 2.0) * _rpow(rho[:, j], e - 4.0)
                block = (c1[:, None, None] * eye2[None, :, :]
                         + c2[:, None, None] * z[:, :, None] * z[:, None, :])
                out[:, 2 * j:2 * j + 2, 2 * j:2 * j + 2] += rest[:, None, None] * block
                for l in range(j + 1, self.arity):
                    if exps[l] == 0.0:
                        continue
                    rest2 = np.full(n, k)
                    for mth in range(self.arity):
                        if mth != j and mth != l:
                            rest2 = rest2 * factors[mth]
                    cross = rest2[:, None, None] * grads[j][:, :, None] * grads[l][:, None, :]
                    out[:, 2 * j:2 * j + 2, 2 * l:2 * l + 2] += cross
                    out[:, 2 * l:2 * l + 2, 2 * j:2 * j + 2] += np.swapaxes(cross, 1, 2)
        return out

    def in_domain(self, x):
        rho = _slot_moduli(x)
        ok = np.ones(x.shape[0], dtype=bool)
        for _, exps in self.terms:
            for j, e in enumerate(exps):
                if e != 0.0 and e < 2.0:
                    ok &= rho[:, j] > 0.0
        return ok


def modulus_power(p, arity=1, slot=0, scale=1.0):
    """scale * |omega_slot|^p as a monomial descriptor."""
    exps = [0.0] * arity
    exps[slot] = p
    return MonomialSum(arity, [(scale, exps)]).descriptor()


def renormalized_power(p):
    """|z|^p / p on C (single slot)."""
    return modulus_power(p, arity=1, slot=0, scale=1.0 / p)


def renormalized_tensor(exponents):
    """prod_j |omega_j|^{p_j} / p_j on C^N."""
    k = 1.0 / np.prod(exponents)
    return MonomialSum(len(exponents), [(k, list(exponents))]).descriptor()


# ---------------------------------------------------------------------------
# radial descriptors (functions of the full euclidean modulus)


class RadialProfile:
    """Scalar profile f with batched f, f', f'' and an f'(rho)/rho limit."""

    def __init__(self, f, d1, d2, d1_over_r=None, singular_at_zero=False):
        self.f = f
        self.d1 = d1
        self.d2 = d2
        self.d1_over_r = d1_over_r
        self.singular_at_zero = singular_at_zero


def power_profile(p):
    """f(rho) = rho^p."""
    return RadialProfile(
        f=lambda r: _rpow(r, p),
        d1=lambda r: p * _rpow(r, p - 1.0),
        d2=lambda r: p * (p - 1.0) * _rpow(r, p - 2.0),
        d1_over_r=lambda r: p * _rpow(r, p - 2.0),
        singular_at_zero=p < 2.0,
    )


class _Radial:
    """F(x) = profile(|x|) on R^m, with x the full packed point."""

    def __init__(self, arity, profile, slot=None):
        self.arity = arity
        self.profile = profile
        self.slot = slot  # None: radial in all slots; int: radial in one slot

    def _cols(self):
        if self.slot is None:
            return slice(0, 2 * self.arity)
        return slice(2 * self.slot, 2 * self.slot + 2)

    def descriptor(self):
        return SmoothFunctionDescriptor(
            arity=self.arity, value=self.value, gradient=self.gradient,
            hessian=self.hessian, in_domain=self.in_domain)

    def value(self, x):
        r = np.linalg.norm(x[:, self._cols()], axis=1)
        return self.profile.f(r)

    def gradient(self, x):
        cols = self._cols()
        xs = x[:, cols]
        r = np.linalg.norm(xs, axis=1)
        coef = self.profile.d1_over_r(r)
        out = np.zeros_like(x)
        out[:, cols] = coef[:, None] * xs
        return out

    def hessian(self, x):
        cols = self._cols()
        xs = x[:, cols]
        m = xs.shape[1]
        r = np.linalg.norm(xs, axis=1)
        safe = np.where(r > 0.0, r, 1.0)
        u = xs / safe[:, None]
        c_iso = self.profile.d1_over_r(r)
        c_rad = self.profile.d2(r) - c_iso
        block = (c_iso[:, None, None] * np.eye(m)[None, :, :]
                 + c_rad[:, None, None] * u[:, :, None] * u[:, None, :])
        out = np.zeros((x.shape[0], x.shape[1], x.shape[1]))
        out[:, cols, cols.start:cols.stop] = block
        return out

    def in_domain(self, x):
        if not self.profile.singular_at_zero:
            return np.ones(x.shape[0], dtype=bool)
        r = np.linalg.norm(x[:, self._cols()], axis=1)
        return r > 0.0


def norm_power(p, arity):
    """F(omega) = |omega|^p with the full euclidean modulus on C^N."""
    return _Radial(arity, power_profile(p)).descriptor()


def full_radial(profile, arity):
    """Descriptor of profile(|omega|) on C^N."""
    return _Radial(arity, profile).descriptor()


def slot_radial(profile, slot, arity):
    """Descriptor of profile(|omega_slot|) on C^N."""
    return _Radial(arity, profile, slot=slot).descriptor()


def product(d1, d2):
    """Pointwise product of two descriptors (Leibniz rules)."""
    if d1.arity != d2.arity:
        raise ValueError("arity mismatch in product")

    def value(x):
        return d1.value(x) * d2.value(x)

    def gradient(x):
        return (d1.gradient(x) * d2.value(x)[:, None]
                + d1.value(x)[:, None] * d2.gradient(x))

    def hessian(x):
        g1, g2 = d1.gradient(x), d2.gradient(x)
        cross = g1[:, :, None] * g2[:, None, :]
        return (d1.hessian(x) * d2.value(x)[:, None, None]
                + cross + np.swapaxes(cross, 1, 2)
                + d1.value(x)[:, None, None] * d2.hessian(x))

    def in_domain(x):
        return d1.in_domain(x) & d2.in_domain(x)

    return SmoothFunctionDescriptor(d1.arity, value, gradient, hessian, in_domain)


def combine(descriptors, weights=None):
    """Weighted sum of descriptors sharing an arity."""
    arity = descriptors[0].arity
    if any(d.arity != arity for d in descriptors):
        raise ValueError("arity mismatch in combination")
    if weights is None:
        weights = [1.0] * len(descriptors)
    weights = [float(w) for w in weights]

    def value(x):
        return sum(w * d.value(x) for w, d in zip(weights, descriptors))

    def gradient(x):
        return sum(w * d.gradient(x) for w, d in zip(weights, descriptors))

    def hessian(x):
        return sum(w * d.hessian(x) for w, d in zip(weights, descriptors))

    def in_domain(x):
        ok = np.ones(x.shape[0], dtype=bool)
        for d in descriptors:
            ok &= d.in_domain(x)
        return ok

    return SmoothFunctionDescriptor(arity, value, gradient, hessian, in_domain)


# ---------------------------------------------------------------------------
# the generalized Hessian form


def _prepare_direction(x_dirs):
    x = np.asarray(x_dirs, dtype=complex)
    if x.ndim == 2:
        x = x[None, :, :]
    return x


def _w_stack(x):
    """(n, N, d) complex -> (n, 2N, d) real, rows (Re X_1, Im X_1, ...)."""
    n, nslots, d = x.shape
    w = np.empty((n, 2 * nslots, d))
    w[:, 0::2, :] = x.real
    w[:, 1::2, :] = x.imag
    return w


def hessian_form(phi, mats, omega, x_dirs, check_domain=True):
    """H[omega; X] for descriptor phi and matrix tuple mats.

    omega: (N,) or (n, N) complex; x_dirs: (N, d) or (n, N, d) complex.
    Returns a scalar for single inputs, else an (n,) array.
    """
    omega = np.atleast_2d(np.asarray(omega, dtype=complex))
    x = _prepare_direction(x_dirs)
    if x.shape[0] == 1 and omega.shape[0] > 1:
        x = np.broadcast_to(x, (omega.shape[0],) + x.shape[1:])
    if omega.shape[0] == 1 and x.shape[0] > 1:
        omega = np.broadcast_to(omega, (x.shape[0], omega.shape[1]))
    nslots = omega.shape[1]
    if len(mats) != nslots or x.shape[1] != nslots:
        raise ValueError("slot count mismatch between omega, X and matrices")
    pts = pack_points(omega)
    if check_domain:
        ok = phi.in_domain(pts)
        if not np.all(ok):
            raise HessianDomainError("points outside the C^2 domain of the function")
    d2 = phi.hessian(pts)
    w = _w_stack(x)
    mw = np.empty_like(w)
    for j, a in enumerate(mats):
        ax = np.einsum("ab,nb->na", np.asarray(a, dtype=complex), x[:, j, :])
        mw[:, 2 * j, :] = ax.real
        mw[:, 2 * j + 1, :] = ax.imag
    vals = np.einsum("nab,nbd,nad->n", d2, w, mw)
    return float(vals[0]) if vals.shape[0] == 1 and np.asarray(x_dirs).ndim == 2 else vals


def hessian_form_tilde(phi, mats, omega, x_dirs, check_domain=True):
    """Renormalized form: direction slots scaled by the point slots."""
    omega = np.atleast_2d(np.asarray(omega, dtype=complex))
    x = _prepare_direction(x_dirs)
    if x.shape[0] == 1 and omega.shape[0] > 1:
        x = np.broadcast_to(x, (omega.shape[0],) + x.shape[1:])
    scaled = x * omega[:, :, None]
    return hessian_form(phi, mats, omega, scaled, check_domain=check_domain)


def norm_power_identity(p, mats, omega, x_dirs):
    """Closed-form H for |.|^p at unit points, assembled slotwise.

    For |omega| = 1 and Y_j = conj(omega_j) X_j:

        H / p = sum_j Re<A_j X_j, X_j> + (p-2) sum_{j,k} Re<A_j Y_j, Re Y_k>.

    Derived from D^2 |x|^p = p I + p(p-2) x x^T at |x| = 1 and the
    slot-block structure of the matrix tuple; independent of the
    block-matrix assembly and used as a cross-check against it.
    """
    omega = np.atleast_2d(np.asarray(omega, dtype=complex))
    x = _prepare_direction(x_dirs)
    if x.shape[0] == 1 and omega.shape[0] > 1:
        x = np.broadcast_to(x, (omega.shape[0],) + x.shape[1:])
    y = np.conj(omega)[:, :, None] * x
    ax = np.stack([np.einsum("ab,nb->na", np.asarray(a, dtype=complex), x[:, j, :])
                   for j, a in enumerate(mats)], axis=1)
    ay = np.conj(omega)[:, :, None] * ax
    diag = np.einsum("njd,njd->n", ax, np.conj(x)).real
    cross = np.einsum("njd,nkd->n", ay.real.astype(complex),
                      y.real.astype(complex)).real
    return p * (diag + (p - 2.0) * cross)


# ---------------------------------------------------------------------------
# lower-bound reports for power functions


@dataclass(frozen=True)
class HessianFormReport:
    """Sampled form value(s) against a closed-form lower bound."""

    kind: str
    value: float
    bound: float
    margin: float
    seed: int
    inputs_digest: str

    def to_json(self):
        return {"kind": self.kind, "inputs_digest": self.inputs_digest,
                "value": self.value, "bound": self.bound,
                "margin": self.margin, "seed": self.seed}


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def _sample_nonzero_slots(rng, n, nslots, d):
    omega = random_complex_vectors(rng, n, nslots)
    small = np.abs(omega) < 1e-3
    omega[small] += 1e-2 * (1 + 1j)
    x = (rng.standard_normal((n, nslots, d))
         + 1j * rng.standard_normal((n, nslots, d)))
    return omega, x


def power_bounds_check(kind, mats, exponents, samples=10_000, seed=0):
    """Sampled margins of the power-function lower bounds.

    kind:
      "single": H~ of |u|^p / p          >= (p/2) delta_p(A) |u|^p |a|^2
      "pair":   H~ of G_r (x) G_s        >= two-slot bound with cross term
      "triple": H~ of G_r (x) G_s (x) G_t >= three-slot bound
      "norm":   H / p of |omega|^p at |omega| = 1
                >= delta_p |X|^2 - (p-2) Lambda sum_{j!=k} |w_j||w_k||X_j||X_k|

    Returns a HessianFormReport whose value/bound are those of the
    worst-margin sample.
    """
    rng = rng_stream(seed, f"power-bounds-{kind}")
    d = np.asarray(mats[0]).shape[0]
    if kind == "single":
        (a,) = mats
        (p,) = exponents
        omega, x = _sample_nonzero_slots(rng, samples, 1, d)
        phi = renormalized_power(p)
        vals = hessian_form_tilde(phi, mats, omega, x)
        dp = delta_p_exact(a, p)
        alpha2 = np.linalg.norm(x[:, 0, :], axis=1) ** 2
        bounds = 0.5 * p * dp * np.abs(omega[:, 0]) ** p * alpha2
    elif kind in ("pair", "triple"):
        nslots = 2 if kind == "pair" else 3
        if len(mats) != nslots or len(exponents) != nslots:
            raise ValueError(f"{kind} check needs {nslots} matrices and exponents")
        omega, x = _sample_nonzero_slots(rng, samples, nslots, d)
        phi = renormalized_tensor(exponents)
        vals = hessian_form_tilde(phi, mats, omega, x)
        deltas = [delta_p_exact(a, s) for a, s in zip(mats, exponents)]
        lam_top = max(Lambda_of(a) for a in mats)
        mods = np.abs(omega)
        amps = np.linalg.norm(x, axis=2)
        lead = np.prod(mods ** np.asarray(exponents)[None, :], axis=1)
        lead = lead / np.prod(exponents)
        inner = np.zeros(samples)
        for j, (s, dlt) in enumerate(zip(exponents, deltas)):
            inner += 0.5 * s * s * dlt * amps[:, j] ** 2
        for j in range(nslots):
            for k in range(j + 1, nslots):
                inner -= (2.0 * exponents[j] * exponents[k] * lam_top
                          * amps[:, j] * amps[:, k])
        bounds = lead * inner
    elif kind == "norm":
        (p,) = exponents
        nslots = len(mats)
        omega, x = _sample_nonzero_slots(rng, samples, nslots, d)
        omega = omega / np.linalg.norm(omega, axis=1)[:, None]
        phi = norm_power(p, nslots)
        vals = hessian_form(phi, mats, omega, x) / p
        dp = min(delta_p_exact(a, p) for a in mats)
        lam_top = max(Lambda_of(a) for a in mats)
        mods = np.abs(omega)
        amps = np.linalg.norm(x, axis=2)
        x2 = np.sum(amps ** 2, axis=1)
        cross = np.zeros(samples)
        for j in range(nslots):
            for k in range(nslots):
                if j != k:
                    cross += mods[:, j] * mods[:, k] * amps[:, j] * amps[:, k]
        bounds = dp * x2 - (p - 2.0) * lam_top * cross
    else:
        raise ValueError(f"unknown bound kind {kind!r}")

    margins = vals - bounds
    i = int(np.argmin(margins))
    return HessianFormReport(kind=kind, value=float(vals[i]), bound=float(bounds[i]),
                             margin=float(margins[i]), seed=seed,
                             inputs_digest=_digest(*[np.asarray(a) for a in mats]))


def convexity_counterexample_tuple(s=4.0, delta_target=0.002):
    """Matrix triple with positive joint s-ellipticity but nonconvex |.|^s.

    Conjugating e^{i phi}(I + mu S), S = diag(1, -1), by three different
    real rotations keeps every delta_s equal to `delta_target` while the
    frames disagree; for small targets the plain norm power |omega|^s
    admits configurations with a negative generalized Hessian form
    (findable by random sampling), so the per-slot correction of
    `build_convexified_power` is genuinely needed.
    """
    from scipy.optimize import brentq

    mu = 0.5
    base = np.eye(2) + mu * np.diag([1.0, -1.0])
    phi = brentq(lambda t: delta_p_exact(np.exp(1j * t) * base, s) - delta_target,
                 0.05, 1.3)
    b = np.exp(1j * phi) * base
    angles = (2.585, 1.517, 1.219)

    def rot(t):
        return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])

    return [rot(t).T @ b @ rot(t) for t in angles]


def fp_convexity_probe(a, p, samples=100_000, seed=0):
    """Sampled minimum of H for |z|^p over unit (omega, X) at N = 1.

    Nonnegative iff the matrix is p-elliptic (up to sampling error);
    returns the sampled minimum.
    """
    rng = rng_stream(seed, "fp-convexity")
    d = np.asarray(a).shape[0]
    omega = np.exp(1j * rng.uniform(0, 2 * np.pi, samples))[:, None]
    x = (rng.standard_normal((samples, 1, d)) + 1j * rng.standard_normal((samples, 1, d)))
    x /= np.linalg.norm(x, axis=2)[:, :, None]
    phi = norm_power(p, 1)
    vals = hessian_form(phi, [a], omega, x)
    return float(vals.min())


# ---------------------------------------------------------------------------
# convexified power sum P_s = F_s + c * sum_j F_s(u_j)


def estimate_sigma(s, mats, samples=20_000, seed=0):
    """Smallest cross-term constant validating the norm-power bound.

    Finds the least sigma with H/(s * delta_s) >= |X|^2 - sigma *
    sum_{j<k} v_j v_k |X_j||X_k| over a sampled set of unit points,
    then inflates by 1.1.
    """
    nslots = len(mats)
    d = np.asarray(mats[0]).shape[0]
    rng = rng_stream(seed, "sigma-estimate")
    omega, x = _sample_nonzero_slots(rng, samples, nslots, d)
    omega = omega / np.linalg.norm(omega, axis=1)[:, None]
    phi = norm_power(s, nslots)
    vals = hessian_form(phi, mats, omega, x) / s
    dlt = min(delta_p_exact(a, s) for a in mats)
    if dlt <= 0:
        raise ValueError("tuple is not s-elliptic")
    mods = np.abs(omega)
    amps = np.linalg.norm(x, axis=2)
    x2 = np.sum(amps ** 2, axis=1)
    cross = np.zeros(samples)
    for j in range(nslots):
        for k in range(j + 1, nslots):
            cross += mods[:, j] * mods[:, k] * amps[:, j] * amps[:, k]
    deficit = x2 - vals / dlt
    mask = cross > 1e-10
    sigma = float(np.max(deficit[mask] / cross[mask], initial=0.0))
    return 1.1 * max(sigma, 0.0)


def _smallest_c(sigma_tilde, eps):
    """Least c with c*T^{1+eps/2} + 1/2 >= sigma_tilde*T on [0, 1]."""
    if sigma_tilde <= 0.5:
        return 0.0
    grid = np.linspace(0.0, 1.0, 4001)

    def ok(c):
        return np.min(c * grid ** (1.0 + eps / 2.0) + 0.5 - sigma_tilde * grid) >= 0.0

    lo, hi = 0.0, max(sigma_tilde, 1.0)
    while not ok(hi):
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def build_convexified_power(s, mats, nslots=None, samples=20_000, seed=0):
    """Power sum F_s + c * sum_j F_s(u_j) convex with respect to `mats`.

    The correction constant follows the two-regime rule: with
    sigma_tilde = (N-1) * sigma / 2 derived from the sampled cross-term
    constant, c = sigma_tilde when s <= 4; for s > 4 the least c making
    c T^{1+eps/2} + 1/2 >= sigma_tilde T on [0, 1], eps = s - 4.

    Returns (c, descriptor).
    """
    if s <= 2.0:
        raise ValueError("requires exponent > 2")
    if nslots is None:
        nslots = len(mats)
    if min(delta_p_exact(a, s) for a in mats) <= 0.0:
        raise ValueError("matrix tuple is not s-elliptic")
    sigma = estimate_sigma(s, mats, samples=samples, seed=seed)
    sigma_tilde = (nslots - 1) * sigma / 2.0
    if s <= 4.0:
        c = sigma_tilde
    else:
        c = _smallest_c(sigma_tilde, s - 4.0)
    parts = [norm_power(s, nslots)]
    weights = [1.0]
    for j in range(nslots):
        parts.append(modulus_power(s, arity=nslots, slot=j))
        weights.append(c)
    return c, combine(parts, weights)


# ---------------------------------------------------------------------------
# tamed power functions and their perturbation family


def capped_profile(a):
    """D_a(t) = t^a on [0, 1], affine continuation a*t - (a-1) beyond."""

    def f(t):
        t = np.asarray(t, dtype=float)
        return np.where(t <= 1.0, _rpow(t, a), a * t - (a - 1.0))

    def d1(t):
        t = np.asarray(t, dtype=float)
        return a * np.where(t <= 1.0, _rpow(t, a - 1.0), 1.0)

    def d2(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < 1.0, a * (a - 1.0) * _rpow(t, a - 2.0), 0.0)

    return f, d1, d2


def tamed_power_profile(s, n, eps):
    """Radial profile of the tamed power n^s * D_{(s+eps)/2}(rho^2/n^2).

    Equals n^{-eps} rho^{s+eps} for rho <= n and grows quadratically
    beyond; C^1 across rho = n.
    """
    a = (s + eps) / 2.0
    f, d1, d2 = capped_profile(a)
    ns = float(n) ** s

    def val(r):
        return ns * f((r / n) ** 2)

    def der1(r):
        return ns * d1((r / n) ** 2) * 2.0 * r / n ** 2

    def der2(r):
        t = (r / n) ** 2
        return ns * (d2(t) * (2.0 * r / n ** 2) ** 2 + d1(t) * 2.0 / n ** 2)

    def der1_over_r(r):
        return ns * d1((r / n) ** 2) * 2.0 / n ** 2

    return RadialProfile(val, der1, der2, d1_over_r=der1_over_r)


@dataclass(frozen=True)
class PerturbationFamily:
    """Tamed power function, its per-slot sum, and the kink set test."""

    s: float
    n: int
    eps: float
    c: float
    nslots: int
    full: SmoothFunctionDescriptor       # tamed power of the full modulus
    combined: SmoothFunctionDescriptor   # full + c * per-slot tamed powers

    def on_kink_set(self, omega, tol=1e-9):
        """True where |omega| = n or some |omega_j| = n (no C^2 there)."""
        omega = np.atleast_2d(np.asarray(omega, dtype=complex))
        full = np.abs(np.linalg.norm(omega, axis=1) - self.n) <= tol * self.n
        slots = np.any(np.abs(np.abs(omega) - self.n) <= tol * self.n, axis=1)
        return full | slots


def perturbation_family(s, n, eps, mats, c=None, samples=20_000, seed=0):
    """Build the tamed perturbation for the matrix tuple `mats`.

    Requires delta_{s+eps} of the tuple to be positive; the correction
    constant c defaults to the one from `build_convexified_power`.
    """
    if s <= 2.0 or eps <= 0.0:
        raise ValueError("need s > 2 and eps > 0")
    if min(delta_p_exact(a, s + eps) for a in mats) <= 0.0:
        raise ValueError("matrix tuple is not (s+eps)-elliptic")
    nslots = len(mats)
    if c is None:
        c, _ = build_convexified_power(s + eps, mats, nslots=nslots,
                                       samples=samples, seed=seed)
    profile = tamed_power_profile(s, n, eps)
    full = _Radial(nslots, profile).descriptor()
    parts = [full]
    weights = [1.0]
    for j in range(nslots):
        parts.append(_Radial(nslots, profile, slot=j).descriptor())
        weights.append(c)
    return PerturbationFamily(s=s, n=n, eps=eps, c=c, nslots=nslots,
                              full=full, combined=combine(parts, weights))


def perturbation_properties_check(s, eps, mats, n_values=(4, 16, 64),
                                  samples=10_000, seed=0):
    """Sampled verification of the perturbation family's properties.

    Checks, for each n: decay of the gradient at fixed points as n
    grows, convexity off the kink set with the quadratic-regime lower
    bound for |omega| > n, n-independent growth |DP| <= C |omega|^{s-1}
    and |D^2 P| <= C |omega|^{s-2}, the near-origin bound |DP| <= C(n)
    |omega|, and boundedness of |D^2 P| off the kink set.
    """
    nslots = len(mats)
    d = np.asarray(mats[0]).shape[0]
    rng = rng_stream(seed, "perturbation-check")
    report = {"s": s, "eps": eps, "n_values": list(n_values)}
    fams = {n: perturbation_family(s, n, eps, mats, samples=samples, seed=seed)
            for n in n_values}

    test_pts = random_complex_vectors(rng, 8, nslots, scale=1.0)
    decay_ok = True
    grads_at_fixed = []
    for n in sorted(n_values):
        g = np.linalg.norm(fams[n].combined.gradient(pack_points(test_pts)), axis=1)
        grads_at_fixed.append(g)
    for prev, nxt in zip(grads_at_fixed, grads_at_fixed[1:]):
        decay_ok &= bool(np.all(nxt <= prev * (1.0 + 1e-9)))
    report["gradient_decay"] = decay_ok
    report["gradient_at_largest_n"] = float(grads_at_fixed[-1].max())

    growth_consts, hess_consts, min_margins, near_zero = {}, {}, {}, {}
    for n, fam in fams.items():
        omega = random_complex_vectors(rng, samples, nslots, scale=1.2 * n)
        keep = ~fam.on_kink_set(omega, tol=1e-6)
        omega = omega[keep]
        pts = pack_points(omega)
        omod = np.linalg.norm(omega, axis=1)
        g = np.linalg.norm(fam.combined.gradient(pts), axis=1)
        h = np.linalg.norm(fam.combined.hessian(pts), axis=(1, 2))
        growth_consts[n] = float(np.max(g / np.maximum(omod, 1e-12) ** (s - 1.0)))
        hess_consts[n] = float(np.max(h / np.maximum(omod, 1e-12) ** (s - 2.0)))
        x = (rng.standard_normal((omega.shape[0], nslots, d))
             + 1j * rng.standard_normal((omega.shape[0], nslots, d)))
        vals = hessian_form(fam.combined, mats, omega, x)
        outer = omod > n
        lam = min(lambda_of(a) for a in mats)
        x2 = np.sum(np.abs(x) ** 2, axis=(1, 2))
        margins = np.where(outer,
                           vals - (s + eps) * n ** (s - 2.0) * lam * x2,
                           vals)
        min_margins[n] = float(margins.min())
        small = random_complex_vectors(rng, 2_000, nslots, scale=1e-3)
        gs = np.linalg.norm(fam.combined.gradient(pack_points(small)), axis=1)
        near_zero[n] = float(np.max(gs / np.linalg.norm(small, axis=1)))
    report["growth_constants"] = growth_consts
    report["hessian_constants"] = hess_consts
    report["convexity_min_margin"] = min_margins
    report["near_zero_constants"] = near_zero
    gv = list(growth_consts.values())
    hv = list(hess_consts.values())
    report["growth_n_independent"] = max(gv) <= 4.0 * min(gv) + 1e-9
    report["hessian_n_independent"] = max(hv) <= 4.0 * min(hv) + 1e-9
    report["convex_ok"] = all(v >= -1e-9 for v in min_margins.values())
    report["passed"] = (report["gradient_decay"] and report["convex_ok"]
                        and report["growth_n_independent"]
                        and report["hessian_n_independent"])
    return report
