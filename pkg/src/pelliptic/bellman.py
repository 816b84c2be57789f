"""The explicit three-variable Bellman function.

For a scaling triple (p, q, r) with p >= q and parameters D, E > 0, the
function is a piecewise linear combination of products of modulus
powers of (u, v, w) in C^3, glued C^1 across the level interfaces of
(|u|^p, |v|^q, |w|^r).  It is C^2 off the degenerate set (a coordinate
zero or a tie between two levels), nonnegative, and anisotropically
homogeneous:

    value(t^{1/p} u, t^{1/q} v, t^{1/r} w) = t * value(u, v, w).

With suitable (D, E) its generalized Hessian form with respect to a
jointly elliptic matrix triple dominates |w| |zeta| |eta|; the doubling
search in `select_params` finds such parameters by sampled verification
per domain.
"""

from dataclasses import dataclass, replace

import numpy as np

from .ellipticity import HolderTriple, delta_p_exact
from .hessian import (MonomialSum, SmoothFunctionDescriptor, hessian_form,
                      pack_points)
from .sampling import rng_stream

UPSILON_TOL = 1e-9

ON_UPSILON = 0


class OnUpsilonError(ValueError):
    """Second derivatives requested on the degenerate set."""


class SelectionError(RuntimeError):
    """Parameter search exhausted its budget."""

    def __init__(self, message, best_margin=None, best_params=None):
        super().__init__(message)
        self.best_margin = best_margin
        self.best_params = best_params


@dataclass(frozen=True)
class BellmanParams:
    """Exponents and the two positive coefficients of the function.

    The triple is stored normalized (p >= q); `swapped` records whether
    the caller's first two exponents were interchanged.  The p = q
    variant has no D.  Coefficient positivity of every piecewise term
    is enforced.
    """

    triple: HolderTriple
    E: float
    D: float = None
    swapped: bool = False

    def __post_init__(self):
        t, sw = self.triple.normalized()
        if sw:
            raise ValueError("store the normalized triple and set `swapped`")
        p, q = t.p, t.q
        if self.variant == "p=q":
            if self.D is not None:
                raise ValueError("the p = q variant carries no D")
            if self.E <= 1.0:
                raise ValueError("need E > 1 for coefficient positivity")
        else:
            if self.D is None:
                raise ValueError("the p > q variant needs D")
            if self.D <= (1.0 - q / p) / 2.0:
                raise ValueError("need D > (1 - q/p)/2")
            if self.E <= max((self.D + q / p) / (1.0 + q / p), 0.5):
                raise ValueError("need E > (D + q/p)/(1 + q/p) and E > 1/2")

    @property
    def variant(self):
        return "p=q" if abs(self.triple.p - self.triple.q) < 1e-12 else "p>q"

    def to_json(self):
        out = {"p": self.triple.p, "q": self.triple.q, "r": self.triple.r,
               "E": self.E, "variant": self.variant, "swapped": self.swapped}
        if self.D is not None:
            out["D"] = self.D
        return out

    @staticmethod
    def from_json(data):
        t = HolderTriple(data["p"], data["q"], data["r"])
        return BellmanParams(triple=t, E=data["E"], D=data.get("D"),
                             swapped=data.get("swapped", False))


def _domain_terms(params):
    """Monomial term lists per domain, in classification order."""
    t = params.triple
    p, q, r = t.p, t.q, t.r
    E = params.E
    if params.variant == "p=q":
        return [
            [(1 / p, (p, 0, 0)), (1 / p, (0, p, 0)), (E / r, (0, 0, r))],
            [(1 / p, (p, 0, 0)), (0.5, (0, 2, 1)), ((E - 0.5) / r, (0, 0, r))],
            [(0.5, (2, 0, 1)), (1 / p, (0, p, 0)), ((E - 0.5) / r, (0, 0, r))],
            [(0.5, (2, 0, 1)), (0.5, (0, 2, 1)), ((E - 1.0) / r, (0, 0, r))],
        ]
    D = params.D
    a, b = 1.0 + q / p, 1.0 + p / q
    c2 = E - D / a
    c3 = E - (D + q / p) / a
    d45 = D - (1.0 - q / p) / 2.0
    return [
        [(1 / p, (p, 0, 0)), (D / q, (0, q, 0)), (E / r, (0, 0, r))],
        [(1 / p, (p, 0, 0)), (D / a, (0, a, 1)), (c2 / r, (0, 0, r))],
        [(1 / b, (b, 0, 1)), (D / a, (0, a, 1)), (c3 / r, (0, 0, r))],
        [(0.5, (2, 1.0 - q / p, 1)), (d45 / a, (0, a, 1)), (c3 / r, (0, 0, r))],
        [((1 - q / p) * 0.5 / (q - 2 * q / p), (2, q - 2 * q / p, 0)),
         (0.5 / (r - 2 * r / p), (2, 0, r - 2 * r / p)),
         (d45 / q, (0, q, 0)), ((E - 0.5) / r, (0, 0, r))],
        [((1 / r) / ((1 - 2 / p) * p), (p, 0, 0)),
         ((1 - q / p) * 0.5 / (q - 2 * q / p), (2, q - 2 * q / p, 0)),
         (d45 / q, (0, q, 0)), (E / r, (0, 0, r))],
    ]


# level-order chains per domain, as indices into (U, V, W) = (|u|^p, |v|^q, |w|^r)
_CHAINS_PQ = [(2, 1, 0), (1, 2, 0), (1, 0, 2), (0, 1, 2), (0, 2, 1), (2, 0, 1)]


class BellmanFunction:
    """Piecewise evaluator with closed-form gradient and Hessian."""

    def __init__(self, params):
        # evaluation always happens in the normalized (p >= q) orientation;
        # params.swapped only tells callers to interchange their first two
        # inputs when mapping onto (u, v, w).
        self.params = params
        self._sums = [MonomialSum(3, terms) for terms in _domain_terms(params)]

    # -- classification ----------------------------------------------------

    def _levels(self, omega):
        t = self.params.triple
        rho = np.abs(np.atleast_2d(np.asarray(omega, dtype=complex)))
        exps = (t.p, t.p, t.r) if self.params.variant == "p=q" else (t.p, t.q, t.r)
        return np.stack([rho[:, j] ** e for j, e in enumerate(exps)], axis=1)

    def classify(self, omega, tol=UPSILON_TOL):
        """Domain index 1..K, or 0 on the degenerate set.

        A point is degenerate when some coordinate vanishes or two of
        the levels (|u|^p, |v|^q, |w|^r) tie to relative tolerance.
        """
        omega = np.atleast_2d(np.asarray(omega, dtype=complex))
        lv = self._levels(omega)
        out = self._match(lv, strict=True)
        zero = np.any(np.abs(omega) == 0.0, axis=1)
        scale = np.max(lv, axis=1) + 1e-300
        tie = np.zeros(len(lv), dtype=bool)
        for i in range(3):
            for j in range(i + 1, 3):
                tie |= np.abs(lv[:, i] - lv[:, j]) <= tol * scale
        out[zero | tie] = ON_UPSILON
        return out if out.shape[0] > 1 else int(out[0])

    def _match(self, lv, strict):
        u, v, w = lv[:, 0], lv[:, 1], lv[:, 2]
        out = np.zeros(lv.shape[0], dtype=np.int64)
        if self.params.variant == "p=q":
            conds = [
                (w <= v) & (w <= u),
                (v <= w) & (w <= u),
                (u <= w) & (w <= v),
                (u <= w) & (v <= w),
            ]
        else:
            conds = []
            for chain in _CHAINS_PQ:
                c = lv[:, chain[0]] <= lv[:, chain[1]]
                c &= lv[:, chain[1]] <= lv[:, chain[2]]
                conds.append(c)
        for k, cond in enumerate(conds, start=1):
            sel = (out == 0) & cond
            out[sel] = k
        return out

    def _eval_labels(self, omega):
        """First-match labels with weak inequalities (never 0)."""
        lv = self._levels(np.atleast_2d(np.asarray(omega, dtype=complex)))
        return self._match(lv, strict=False)

    # -- evaluation ---------------------------------------------------------

    def _per_domain(self, omega, fn_name, out_shape):
        omega = np.atleast_2d(np.asarray(omega, dtype=complex))
        x = pack_points(omega)
        labels = self._eval_labels(omega)
        out = np.zeros((x.shape[0],) + out_shape)
        for k, sm in enumerate(self._sums, start=1):
            mask = labels == k
            if np.any(mask):
                out[mask] = getattr(sm, fn_name)(x[mask])
        return out

    def value(self, omega):
        out = self._per_domain(omega, "value", ())
        return float(out[0]) if np.asarray(omega).ndim == 1 else out

    def gradient(self, omega):
        """Real gradient on R^6, rows (d/dRe u, d/dIm u, ..., d/dIm w)."""
        out = self._per_domain(omega, "gradient", (6,))
        return out[0] if np.asarray(omega).ndim == 1 else out

    def wirtinger_gradient(self, omega):
        """(d/d conj(u), d/d conj(v), d/d conj(w)) as complex numbers."""
        g = np.atleast_2d(self.gradient(omega))
        wg = 0.5 * (g[:, 0::2] + 1j * g[:, 1::2])
        return wg[0] if np.asarray(omega).ndim == 1 else wg

    def real_hessian(self, omega):
        """6 x 6 second derivatives; rejects degenerate points."""
        labels = self.classify(omega)
        if np.any(np.atleast_1d(labels) == ON_UPSILON):
            raise OnUpsilonError("second derivatives are undefined on the degenerate set")
        out = self._per_domain(omega, "hessian", (6, 6))
        return out[0] if np.asarray(omega).ndim == 1 else out

    def domain_value(self, k, omega):
        """Evaluate the k-th domain formula regardless of location."""
        return self._sums[k - 1].value(pack_points(omega))

    def domain_gradient(self, k, omega):
        return self._sums[k - 1].gradient(pack_points(omega))

    def descriptor(self):
        """Batched descriptor over C^3 (C^2 domain = off the degenerate set)."""
        return SmoothFunctionDescriptor(
            arity=3,
            value=lambda x: self._per_domain(unpacked(x), "value", ()),
            gradient=lambda x: self._per_domain(unpacked(x), "gradient", (6,)),
            hessian=lambda x: self._per_domain(unpacked(x), "hessian", (6, 6)),
            in_domain=lambda x: np.atleast_1d(self.classify(unpacked(x))) != ON_UPSILON,
        )

    # -- bounds -------------------------------------------------------------

    def upper_bound_margin(self, omega):
        """value - [(1/p)|u|^p + (D/q)|v|^q + (E/r)|w|^r]; must be <= 0."""
        t = self.params.triple
        omega = np.atleast_2d(np.asarray(omega, dtype=complex))
        rho = np.abs(omega)
        d_coef = 1.0 if self.params.variant == "p=q" else self.params.D
        qq = t.p if self.params.variant == "p=q" else t.q
        cap = (rho[:, 0] ** t.p / t.p + d_coef * rho[:, 1] ** qq / qq
               + self.params.E * rho[:, 2] ** t.r / t.r)
        vals = self._per_domain(omega, "value", ())
        out = vals - cap
        return float(out[0]) if np.asarray(omega).ndim == 1 else out

    def gradient_bound_ratios(self, omega):
        """Ratios of |Wirtinger partials| to their growth envelopes."""
        t = self.params.triple
        omega = np.atleast_2d(np.asarray(omega, dtype=complex))
        qq = t.p if self.params.variant == "p=q" else t.q
        lv = np.stack([np.abs(omega[:, 0]) ** t.p,
                       np.abs(omega[:, 1]) ** qq,
                       np.abs(omega[:, 2]) ** t.r], axis=1)
        top = np.max(lv, axis=1)
        wg = np.abs(np.atleast_2d(self.wirtinger_gradient(omega)))
        envelopes = np.stack([
            top ** (1.0 - 1.0 / t.p),
            top ** (1.0 - 1.0 / qq),
            np.abs(omega[:, 2]) ** (t.r - 1.0),
        ], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(envelopes > 0, wg / envelopes, 0.0)
        return ratios


def unpacked(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return x[:, 0::2] + 1j * x[:, 1::2]


def bound_checks(params, omega, samples=None, seed=0):
    """Upper-bound margin and gradient-envelope ratios at given points.

    With `samples` set, draws that many extra scale-spread random points
    and reports the worst upper-bound margin and largest ratios seen.
    """
    fn = BellmanFunction(params)
    omega = np.atleast_2d(np.asarray(omega, dtype=complex))
    if samples:
        rng = rng_stream(seed, "bellman-bounds")
        extra = (rng.standard_normal((samples, 3)) + 1j * rng.standard_normal((samples, 3)))
        extra *= rng.uniform(0.1, 3.0, (samples, 1))
        omega = np.vstack([omega, extra])
    margins = fn.upper_bound_margin(omega)
    ratios = fn.gradient_bound_ratios(omega)
    return {
        "max_upper_margin": float(np.max(margins)),
        "gradient_ratio_sup": [float(np.max(ratios[:, j])) for j in range(3)],
    }


# ---------------------------------------------------------------------------
# interface sampling (for continuity tests) and domain sampling


def interface_pairs(variant):
    """Adjacent domain pairs and the tied level pair on their interface.

    Entries are (dom_a, dom_b, (i, j), k_rel) where levels i and j tie
    and level k is constrained: k_rel = -1 for below the tie, +1 above.
    """
    if variant == "p=q":
        return [(1, 2, (1, 2), +1), (1, 3, (0, 2), +1),
                (2, 4, (0, 2), -1), (3, 4, (1, 2), -1)]
    return [(1, 2, (1, 2), +1), (2, 3, (0, 2), -1), (3, 4, (0, 1), +1),
            (4, 5, (1, 2), -1), (5, 6, (0, 2), +1), (6, 1, (0, 1), -1)]


def sample_interface_points(params, pair, n, seed=0):
    """Random points exactly on a domain interface (levels tied)."""
    t = params.triple
    exps = np.array([t.p, t.p, t.r]) if params.variant == "p=q" else np.array([t.p, t.q, t.r])
    _, _, (i, j), k_rel = pair
    k = 3 - i - j
    rng = rng_stream(seed, f"interface-{pair[0]}-{pair[1]}")
    tied = rng.uniform(0.3, 1.0, n)
    if k_rel < 0:
        other = tied * rng.uniform(0.05, 0.95, n)
    else:
        other = tied / rng.uniform(0.05, 0.95, n)
    lv = np.empty((n, 3))
    lv[:, i] = tied
    lv[:, j] = tied
    lv[:, k] = other
    rho = lv ** (1.0 / exps[None, :])
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, (n, 3)))
    return rho * phases


def sample_domain_points(params, k, n, seed=0, stress=True):
    """Random points in the interior of domain k (levels strictly ordered)."""
    t = params.triple
    exps = np.array([t.p, t.p, t.r]) if params.variant == "p=q" else np.array([t.p, t.q, t.r])
    rng = rng_stream(seed, f"domain-{k}")
    lv = np.sort(rng.uniform(1e-4, 1.0, (n, 3)), axis=1)
    if stress:
        # push some mass toward slot-dominated and near-tie configurations
        third = n // 3
        lv[:third, 0] *= rng.uniform(1e-4, 0.05, third)
        lv[third:2 * third, :2] *= rng.uniform(1e-3, 0.2, (third, 1))
    out = np.empty((n, 3))
    if params.variant == "p=q":
        orders = {1: (2, 0, 1), 2: (1, 2, 0), 3: (0, 2, 1), 4: (0, 1, 2)}
        lo, mid, hi = lv[:, 0], lv[:, 1], lv[:, 2]
        if k == 1:
            out[:, 2], out[:, 0], out[:, 1] = lo, mid, hi
            sw = rng.random(n) < 0.5  # either of u, v may dominate
            out[sw, 0], out[sw, 1] = hi[sw], mid[sw]
        elif k == 2:
            out[:, 1], out[:, 2], out[:, 0] = lo, mid, hi
        elif k == 3:
            out[:, 0], out[:, 2], out[:, 1] = lo, mid, hi
        else:
            out[:, 0], out[:, 1], out[:, 2] = lo, mid, hi
            sw = rng.random(n) < 0.5
            out[sw, 0], out[sw, 1] = mid[sw], lo[sw]
    else:
        chain = _CHAINS_PQ[k - 1]
        out[:, chain[0]], out[:, chain[1]], out[:, chain[2]] = lv[:, 0], lv[:, 1], lv[:, 2]
    rho = out ** (1.0 / exps[None, :])
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, (n, 3)))
    return rho * phases


# ---------------------------------------------------------------------------
# parameter selection


def sample_directions(rng, n, d):
    """Direction triples with per-slot magnitudes spread over decades.

    Isotropic Gaussians rarely expose single-slot convexity failures
    (other slots' positive contributions shield them), so a share of
    samples zeroes one or two slots and the rest carry log-uniform
    per-slot scales.
    """
    x = (rng.standard_normal((n, 3, d)) + 1j * rng.standard_normal((n, 3, d)))
    scales = 10.0 ** rng.uniform(-3.0, 0.0, (n, 3))
    x *= scales[:, :, None]
    kill = rng.random((n, 3)) < 0.25
    # never zero all three slots
    kill[np.all(kill, axis=1), :] = False
    x[kill] = 0.0
    return x


def _domain_margin(fn, mats, k, n, d, seed):
    """(min H, min H / (|w||zeta||eta|)) over samples in domain k."""
    omega = sample_domain_points(fn.params, k, n, seed=seed)
    keep = np.atleast_1d(fn.classify(omega)) == k
    omega = omega[keep]
    if omega.shape[0] == 0:
        return np.inf, np.inf
    rng = rng_stream(seed, f"dirs-{k}")
    x = sample_directions(rng, omega.shape[0], d)
    vals = hessian_form(fn.descriptor(), mats, omega, x)
    scale = (np.linalg.norm(x, axis=(1, 2)) ** 2
             * np.max(np.abs(omega), axis=1) ** 2 + 1e-300)
    denom = (np.abs(omega[:, 2]) * np.linalg.norm(x[:, 0, :], axis=1)
             * np.linalg.norm(x[:, 1, :], axis=1))
    mask = denom > 1e-12 * scale
    ratio = np.min(vals[mask] / denom[mask]) if np.any(mask) else np.inf
    return float(np.min(vals / scale)), float(ratio)


def convexity_margin(params, mat_triples, samples_per_domain=2000, seed=0):
    """Worst sampled (H, H/(|w||zeta||eta|)) over all domains and cells."""
    fn = BellmanFunction(params)
    ndom = 4 if params.variant == "p=q" else 6
    worst_h, worst_c = np.inf, np.inf
    for mats in mat_triples:
        d = np.asarray(mats[0]).shape[0]
        for k in range(1, ndom + 1):
            h, c = _domain_margin(fn, mats, k, samples_per_domain, d, seed + k)
            worst_h = min(worst_h, h)
            worst_c = min(worst_c, c)
    return worst_h, worst_c


def _representative_triples(field_a, field_b, field_c, triple, cap=24):
    """Cell triples to test: all if few, else worst-ellipticity plus spread."""
    n = field_a.cells.shape[0]
    if n <= cap:
        idx = np.arange(n)
    else:
        from .ellipticity import delta_p_exact_batch

        scores = np.minimum.reduce([
            delta_p_exact_batch(field_a.cells, triple.p),
            delta_p_exact_batch(field_b.cells, triple.q),
            delta_p_exact_batch(field_c.cells, triple.r),
        ])
        worst = np.argsort(scores)[: cap // 2]
        spread = np.linspace(0, n - 1, cap // 2).astype(int)
        idx = np.unique(np.concatenate([worst, spread]))
    return [(field_a.cells[i], field_b.cells[i], field_c.cells[i]) for i in idx]


def select_params(field_a, field_b, field_c, triple, mu_min=1e-6,
                  samples_per_domain=2000, seed=0, max_doublings=(10, 14)):
    """Doubling search for (D, E) making the function jointly convex.

    Grows D until the sampled margins in the D-sensitive domains are
    positive, then grows E until all domains pass with ratio
    H / (|w||zeta||eta|) >= mu_min.  Deterministic given the seed.
    Raises SelectionError with the best margin when the budget is
    exhausted (e.g. for triples failing the joint ellipticity check).
    """
    t, swapped = triple.normalized()
    if swapped:
        field_a, field_b = field_b, field_a
    mat_triples = _representative_triples(field_a, field_b, field_c, t)
    variant_pq = abs(t.p - t.q) < 1e-12
    best = (-np.inf, None)

    if variant_pq:
        e_val = 2.0
        for _ in range(max_doublings[1]):
            params = BellmanParams(triple=t, E=e_val, swapped=swapped)
            h, c = convexity_margin(params, mat_triples,
                                    samples_per_domain=samples_per_domain, seed=seed)
            if c > best[0]:
                best = (c, params)
            if h >= -1e-12 and c >= mu_min:
                return params
            e_val *= 2.0
        raise SelectionError("no admissible E found within budget",
                             best_margin=best[0], best_params=best[1])

    d_val = max(1.0, 1.05 * (1.0 - t.q / t.p) / 2.0)
    for _ in range(max_doublings[0]):
        e_floor = 1.05 * max((d_val + t.q / t.p) / (1.0 + t.q / t.p), 0.5, 1e-3)
        e_val = max(2.0 * e_floor, 2.0)
        for _ in range(max_doublings[1]):
            params = BellmanParams(triple=t, D=d_val, E=e_val, swapped=swapped)
            h, c = convexity_margin(params, mat_triples,
                                    samples_per_domain=samples_per_domain, seed=seed)
            if c > best[0]:
                best = (c, params)
            if h >= -1e-12 and c >= mu_min:
                return params
            e_val *= 2.0
        d_val *= 2.0
    raise SelectionError("no admissible (D, E) found within budget",
                         best_margin=best[0], best_params=best[1])
