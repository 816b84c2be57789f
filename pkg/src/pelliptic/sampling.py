"""Seeded samplers shared by the oracle and verification layers.

All randomness in the package flows through `rng_stream`, which derives
independent child generators from a 64-bit root seed and a string label.
Reruns with the same seed are bit-identical regardless of how many
workers consume the streams.
"""

import numpy as np
from scipy.stats import qmc, norm


def rng_stream(seed, label=""):
    """Child generator for (seed, label); independent across labels."""
    words = [seed & 0xFFFFFFFFFFFFFFFF]
    words.extend(ord(c) for c in label)
    return np.random.default_rng(np.random.SeedSequence(words))


def unit_sphere_points(n, dim, seed):
    """n quasi-uniform points on S^{dim-1} from a scrambled Sobol set.

    Low-discrepancy points in the cube are pushed through the Gaussian
    inverse CDF and normalized; the result inherits the Sobol set's
    even coverage of directions.
    """
    sob = qmc.Sobol(d=dim, scramble=True, seed=seed)
    # Sobol balance properties hold at powers of two; draw up and slice.
    u = sob.random_base2(max(int(np.ceil(np.log2(max(n, 2)))), 1))[:n]
    # keep away from the CDF endpoints
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    x = norm.ppf(u)
    r = np.linalg.norm(x, axis=1)
    r[r == 0.0] = 1.0
    return x / r[:, None]


def complex_unit_vectors(n, d, seed):
    """n quasi-uniform unit vectors in C^d (as an (n, d) complex array)."""
    x = unit_sphere_points(n, 2 * d, seed)
    return x[:, :d] + 1j * x[:, d:]


def random_complex_vectors(rng, n, d, scale=1.0):
    """n complex Gaussian vectors in C^d."""
    z = rng.standard_normal((n, d)) + 1j * rng.standard_normal((n, d))
    return scale * z


def random_unit_complex(rng, n, d):
    z = random_complex_vectors(rng, n, d)
    nrm = np.linalg.norm(z, axis=1)
    nrm[nrm == 0.0] = 1.0
    return z / nrm[:, None]
