"""Curl-eigenfield building blocks and the matrix decomposition behind them.

A wave direction B_k is a unit complex vector orthogonal to the integer
wavevector k with conjugation symmetry B_{-k} = conj(B_k), so that the field
sum_k a_k B_k e^{i k.x} with a_{-k} = conj(a_k) is real, divergence-free, and
a curl eigenfield with eigenvalue |k|.

A decomposition family is a set of six shell vectors (no two antipodal) whose
projectors Id - khat (x) khat span the symmetric matrices: every R near Id
then splits as sum_k c_k(R) (Id - khat (x) khat) with smooth positive
coefficients given by one 6x6 linear solve.
"""

import itertools
import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigError, NumericalAbort

# six-vector families on the |k| = 5 shell; disjoint as +-pairs, each
# isotropic (sum of khat (x) khat = 2 Id), so the Id-weights are all 1/4
FAMILY_A = ((3, 4, 0), (3, -4, 0), (0, 3, 4), (0, 3, -4), (4, 0, 3), (-4, 0, 3))
FAMILY_B = ((4, 3, 0), (4, -3, 0), (0, 4, 3), (0, 4, -3), (3, 0, 4), (-3, 0, 4))

SYM_PAIRS = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def shell_vectors(lam0):
    """All integer vectors with |k| = lam0 (lam0 a positive integer)."""
    lam0 = int(lam0)
    if lam0 < 1:
        raise ConfigError("shell radius must be a positive integer")
    out = []
    r2 = lam0 * lam0
    for kx in range(-lam0, lam0 + 1):
        for ky in range(-lam0, lam0 + 1):
            rem = r2 - kx * kx - ky * ky
            if rem < 0:
                continue
            kz = int(round(np.sqrt(rem)))
            if kz * kz == rem:
                out.append((kx, ky, kz))
                if kz > 0:
                    out.append((kx, ky, -kz))
    return sorted(out)


def wave_direction(k):
    """Complex unit vector B_k, orthogonal to k, with B_{-k} = conj(B_k)."""
    k = np.asarray(k, dtype=np.float64)
    norm = np.linalg.norm(k)
    if norm == 0:
        raise ConfigError("wave direction undefined for k = 0")
    khat = k / norm
    ref = np.array([0.0, 0.0, 1.0])
    if abs(abs(khat[2]) - 1.0) < 1e-12:
        ref = np.array([1.0, 0.0, 0.0])
    # even in k, so the first leg A satisfies A_{-k} = A_k
    a = ref - np.dot(ref, khat) * khat
    a /= np.linalg.norm(a)
    b = np.cross(khat, a)
    return (a + 1j * b) / np.sqrt(2.0)


def projector6(k):
    """Id - khat (x) khat in the six-component symmetric storage order."""
    k = np.asarray(k, dtype=np.float64)
    khat = k / np.linalg.norm(k)
    out = np.empty(6)
    for c, (i, j) in enumerate(SYM_PAIRS):
        out[c] = (1.0 if i == j else 0.0) - khat[i] * khat[j]
    return out


@dataclass
class FamilyCertificate:
    """Spanning proof for one decomposition family."""

    vectors: tuple
    matrix: np.ndarray            # columns are projector6(k)
    inverse: np.ndarray
    det: float
    weights_at_id: np.ndarray
    ball_radius: float            # r0: coefficient positivity margin
    row_nuclear_norms: np.ndarray

    def as_dict(self):
        return {
            "vectors": [list(v) for v in self.vectors],
            "det": self.det,
            "weights_at_id": self.weights_at_id.tolist(),
            "ball_radius": self.ball_radius,
        }


def _row_functional_matrix(inv_row):
    """Rebuild the symmetric matrix G with c(R) = tr(G R) from an inverse row.

    Storage components are single entries, so the off-diagonal weights are
    halved when expressed as a trace pairing.
    """
    g = np.zeros((3, 3))
    for c, (i, j) in enumerate(SYM_PAIRS):
        if i == j:
            g[i, i] = inv_row[c]
        else:
            g[i, j] = inv_row[c] / 2.0
            g[j, i] = inv_row[c] / 2.0
    return g


def certify_family(vectors):
    """Solve the spanning system and compute the positivity ball radius."""
    vectors = tuple(tuple(int(c) for c in v) for v in vectors)
    if len(vectors) != 6:
        raise ConfigError("a decomposition family needs exactly six vectors")
    for u, v in itertools.combinations(vectors, 2):
        if all(a == -b for a, b in zip(u, v)):
            raise ConfigError(f"family contains an antipodal pair {u}, {v}")
    mat = np.stack([projector6(v) for v in vectors], axis=1)
    det = float(np.linalg.det(mat))
    if abs(det) < 1e-10:
        raise ConfigError("family does not span the symmetric matrices")
    inv = np.linalg.inv(mat)
    id6 = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    weights = inv @ id6
    if np.min(weights) <= 0:
        raise ConfigError("family has non-positive weights at the identity")
    nuclear = np.empty(6)
    for r in range(6):
        g = _row_functional_matrix(inv[r])
        nuclear[r] = np.sum(np.abs(np.linalg.eigvalsh(g)))
    # |c_k(R) - c_k(Id)| <= nuclear(G_k) * ||R - Id||_op, so inside this ball
    # every coefficient keeps at least half its identity value
    r0 = float(np.min(weights / (2.0 * nuclear)))
    return FamilyCertificate(vectors, mat, inv, det, weights, r0, nuclear)


def search_disjoint_families(lam0, n_wanted=8, seed=0, attempts=400):
    """Randomized search for pairwise +-disjoint spanning families on a shell.

    Returns as many certified families as could be packed (possibly fewer
    than requested; the |k| = 5 shell holds only 15 +-pairs, so two is the
    maximum there).
    """
    shell = shell_vectors(lam0)
    # one representative per +-pair
    reps = sorted({max(v, tuple(-c for c in v)) for v in shell})
    rng = np.random.default_rng(seed)
    best = []
    for _ in range(attempts):
        pool = list(reps)
        rng.shuffle(pool)
        families = []
        used = set()
        while len(families) < n_wanted:
            found = None
            avail = [p for p in pool if p not in used]
            if len(avail) < 6:
                break
            for _ in range(60):
                pick_idx = rng.choice(len(avail), size=6, replace=False)
                pick = [avail[i] for i in pick_idx]
                signs = 1 - 2 * rng.integers(0, 2, size=6)
                cand = [tuple(int(c * s) for c in v)
                        for v, s in zip(pick, signs)]
                try:
                    cert = certify_family(cand)
                except ConfigError:
                    continue
                found = (cert, pick)
                break
            if found is None:
                break
            families.append(found[0])
            used.update(found[1])
        if len(families) > len(best):
            best = families
        if len(best) >= n_wanted:
            break
    return best


@dataclass
class BeltramiBasis:
    """Shell radius, per-class decomposition families, and wave directions."""

    lam0: int
    certificates: list
    class_to_family: tuple        # length 8, indexes into certificates
    disjoint_classes: bool
    directions: dict = dc_field(default_factory=dict)

    @property
    def ball_radius(self):
        return min(c.ball_radius for c in self.certificates)

    def family_for_class(self, class_bits):
        j = class_bits[0] + 2 * class_bits[1] + 4 * class_bits[2]
        return self.certificates[self.class_to_family[j]]

    def direction(self, k):
        k = tuple(int(c) for c in k)
        if k not in self.directions:
            self.directions[k] = wave_direction(k)
        return self.directions[k]

    def as_dict(self):
        return {
            "lam0": self.lam0,
            "disjoint_classes": self.disjoint_classes,
            "class_to_family": list(self.class_to_family),
            "ball_radius": self.ball_radius,
            "families": [c.as_dict() for c in self.certificates],
        }

    def to_json(self, **kw):
        return json.dumps(self.as_dict(), sort_keys=True, **kw)


def build_basis(lam0=5, seed=0):
    """Assemble the per-parity-class family table for a shell.

    Eight pairwise-disjoint families are used when the shell is rich enough.
    On small shells (|k| = 5 holds just 15 +-pairs, so at most two disjoint
    six-vector families exist) the available families are reused with
    opposite parity-count classes alternating, which keeps classes that can
    activate together across a cell face on distinct families.
    """
    if lam0 == 5:
        certs = [certify_family(FAMILY_A), certify_family(FAMILY_B)]
    else:
        certs = search_disjoint_families(lam0, n_wanted=8, seed=seed)
        if not certs:
            raise ConfigError(
                f"no spanning decomposition family found on the |k| = {lam0} shell"
            )
    if len(certs) >= 8:
        mapping = tuple(range(8))
        disjoint = True
    else:
        # face-adjacent classes differ in one parity bit, i.e. in the parity
        # of the bit count; giving even-count and odd-count classes families
        # from disjoint halves keeps face neighbors on distinct wavevectors
        n = len(certs)
        evens = list(range((n + 1) // 2)) or [0]
        odds = list(range((n + 1) // 2, n)) or [0]
        mapping = []
        counters = [0, 0]
        for j in range(8):
            parity = bin(j).count("1") % 2
            pool = odds if parity else evens
            mapping.append(pool[counters[parity] % len(pool)])
            counters[parity] += 1
        mapping = tuple(mapping)
        disjoint = False
    return BeltramiBasis(lam0, certs, mapping, disjoint)


# ---------------------------------------------------------------------------
# coefficient solver

class GammaSolver:
    """Pointwise square-root coefficients gamma_k(R) = sqrt(c_k(R)) for one
    family, on batches of symmetric-tensor samples."""

    def __init__(self, certificate):
        self.cert = certificate

    def coefficients(self, r6):
        """Linear coefficients c_k, shape (6,) + sample shape."""
        r6 = np.asarray(r6, dtype=np.float64)
        return np.einsum("km,m...->k...", self.cert.inverse, r6)

    def ball_distance(self, r6):
        """sup over samples of the operator norm of R - Id."""
        from .fields import sym_operator_norms

        e = np.array(r6, copy=True)
        e[0] -= 1.0
        e[1] -= 1.0
        e[2] -= 1.0
        return float(np.max(sym_operator_norms(e)))

    def gamma(self, r6, check_ball=True, tol_scale=1.0):
        """sqrt coefficients; aborts when R leaves the positivity ball."""
        if check_ball:
            dist = self.ball_distance(r6)
            limit = self.cert.ball_radius * tol_scale
            if dist > limit:
                raise NumericalAbort(
                    f"matrix left the decomposition ball: distance {dist:.6f} "
                    f"> radius {limit:.6f}"
                )
        c = self.coefficients(r6)
        if np.min(c) < 0:
            raise NumericalAbort(
                f"negative decomposition coefficient {np.min(c):.3e}"
            )
        return np.sqrt(c)

    def reconstruct(self, gamma):
        """sum_k gamma_k^2 projector6(k) — should reproduce R."""
        return np.einsum("mk,k...->m...", self.cert.matrix, gamma ** 2)

    def gamma_gradient_fd(self, r_mat, k_index, i, j, h):
        """Central finite-difference d gamma_k / d R_ij at a 3x3 matrix."""
        def to6(m):
            return np.array([m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2]])

        e = np.zeros((3, 3))
        e[i, j] = 1.0
        e[j, i] = 1.0
        gp = self.gamma(to6(r_mat + h * e), check_ball=False)[k_index]
        gm = self.gamma(to6(r_mat - h * e), check_ball=False)[k_index]
        return (gp - gm) / (2.0 * h)


# ---------------------------------------------------------------------------
# cell partition of unity and oscillation phases

class PhasePartition:
    """Partition of unity over the integer lattice cells of a scaled velocity.

    At a point u = mu * v the eight corners of the containing lattice cell
    get smooth weights alpha_l(u) = chi(|u - l|) / sqrt(sum chi^2); the
    plateau profile chi is 1 inside radius c1 and 0 outside c2, with
    sqrt(3)/2 < c1 < c2 < 1 so that the weights square-sum to one, every
    corner parity class contributes at most one active corner, and corners
    of neighboring cells never interact.
    """

    def __init__(self, c1=0.90, c2=0.99):
        if not (np.sqrt(3.0) / 2.0 < c1 < c2 < 1.0):
            raise ConfigError("need sqrt(3)/2 < c1 < c2 < 1")
        self.c1 = c1
        self.c2 = c2

    def _profile(self, dist_sq):
        """Smooth plateau: 1 for |y| <= c1, 0 for |y| >= c2."""
        c1sq, c2sq = self.c1 ** 2, self.c2 ** 2
        s = (c2sq - dist_sq) / (c2sq - c1sq)
        s = np.clip(s, 0.0, 1.0)
        with np.errstate(divide="ignore", over="ignore"):
            f = np.where(s > 0, np.exp(-1.0 / np.maximum(s, 1e-300)), 0.0)
            fc = np.where(s < 1, np.exp(-1.0 / np.maximum(1.0 - s, 1e-300)), 0.0)
        return f / (f + fc)

    def corner_weights(self, u):
        """Corners (8, 3) and weights alpha (8,) + sample shape for scaled
        velocity samples u of shape (3,) + sample shape."""
        u = np.asarray(u, dtype=np.float64)
        base = np.floor(u)
        chis = []
        corners = []
        for bits in itertools.product((0, 1), repeat=3):
            corner = base + np.reshape(bits, (3,) + (1,) * (u.ndim - 1))
            d2 = np.sum((u - corner) ** 2, axis=0)
            chis.append(self._profile(d2))
            corners.append(corner)
        chis = np.stack(chis)
        psi = np.sum(chis ** 2, axis=0)
        # guaranteed >= profile(3/4)^2 = 1 since the nearest corner is within
        # sqrt(3)/2 < c1 of u
        alpha = chis / np.sqrt(psi)
        return corners, alpha

    def sum_alpha_sq(self, u):
        _, alpha = self.corner_weights(u)
        return np.sum(alpha ** 2, axis=0)

    @staticmethod
    def _class_select(corners, class_bits):
        """Mask (per corner index) whether the corner lies in a parity class."""
        matches = []
        for corner in corners:
            ok = None
            for axis in range(3):
                m = np.mod(corner[axis], 2.0) == float(class_bits[axis])
                ok = m if ok is None else (ok & m)
            matches.append(ok)
        return matches

    def cell_weight_sum(self, u):
        """psi(u): squared corner weights summed over the containing cell."""
        u = np.asarray(u, dtype=np.float64)
        base = np.floor(u)
        psi = 0.0
        for bits in itertools.product((0, 1), repeat=3):
            corner = base + np.reshape(bits, (3,) + (1,) * (u.ndim - 1))
            psi = psi + self._profile(np.sum((u - corner) ** 2, axis=0)) ** 2
        return psi

    def active_corner(self, u, class_bits, psi=None):
        """The unique cell corner of a parity class, with its weight.

        Each lattice cell has exactly one corner in every parity class:
        l_i = floor(u)_i + ((bits_i - floor(u)_i) mod 2). Returns
        (corner (3,)+shape, alpha shape); alpha vanishes where the corner
        is out of reach.  Pass a precomputed psi = cell_weight_sum(u) when
        evaluating several classes on the same samples.
        """
        u = np.asarray(u, dtype=np.float64)
        base = np.floor(u)
        bits = np.reshape(class_bits, (3,) + (1,) * (u.ndim - 1))
        corner = base + np.mod(bits - base, 2.0)
        if psi is None:
            psi = self.cell_weight_sum(u)
        chi = self._profile(np.sum((u - corner) ** 2, axis=0))
        return corner, chi / np.sqrt(psi)

    def class_phase(self, v, mu, k, tau, class_bits):
        """Oscillation phase for one wavevector and parity class.

        v: velocity samples (3,) + sample shape; tau: broadcastable phase
        time samples; returns complex samples
        alpha_l(mu v) e^{-i (k.l / mu) tau} for the class's active corner l.
        """
        k = np.asarray(k, dtype=np.float64)
        corner, alpha = self.active_corner(mu * np.asarray(v, dtype=np.float64),
                                           class_bits)
        kdotl = np.einsum("i,i...->...", k, corner)
        return alpha * np.exp(-1j * (kdotl / mu) * tau)

    def transport_defect(self, v, mu, k, tau, class_bits):
        """d/dtau of the class phase plus i (k.v) times it, pointwise.

        The derivative is taken analytically through the corner sum; the
        residual measures how far the staircase l/mu lags the true velocity,
        and scales like 1/mu.
        """
        k = np.asarray(k, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        corner, alpha = self.active_corner(mu * v, class_bits)
        kdotv = np.einsum("i,i...->...", k, v)
        kdotl = np.einsum("i,i...->...", k, corner)
        phase = np.exp(-1j * (kdotl / mu) * tau)
        return alpha * phase * 1j * (kdotv - kdotl / mu)
