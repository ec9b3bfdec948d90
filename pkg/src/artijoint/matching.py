"""Hungarian assignment between ground-truth joints and prediction slots, and the
set-prediction losses with their analytic gradients."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kinematics import Joint, JointType, canonicalize_axis, line_angle, normalize_range

W_TYPE = 10.0
N_CLASSES = 7
PROB_EPS = 1e-12


class MatchingError(ValueError):
    pass


class CapacityError(MatchingError):
    pass


# ---------------------------------------------------------------------------
# assignment

@dataclass(frozen=True)
class Assignment:
    sigma: tuple[int, ...]
    n_slots: int
    total_cost: float = 0.0
    unmatched_slots: frozenset = field(default=frozenset())

    def __post_init__(self):
        if len(set(self.sigma)) != len(self.sigma):
            raise MatchingError("assignment is not injective")
        if any(not 0 <= k < self.n_slots for k in self.sigma):
            raise MatchingError("assignment points outside the slot range")
        object.__setattr__(self, "unmatched_slots",
                           frozenset(range(self.n_slots)) - frozenset(self.sigma))

    def as_dict(self) -> dict[int, int]:
        return dict(enumerate(self.sigma))


def _solve_square(C: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shortest augmenting path Hungarian method on a square matrix.

    Returns the row-to-column assignment and the dual potentials (u, v) with
    ``C[i, j] - u[i] - v[j] >= 0`` and equality on the assignment.
    """
    n = C.shape[0]
    INF = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = C
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            upd = free & (cur < minv)
            minv[upd] = cur[upd]
            way[upd] = j0
            cand = np.where(free, minv, INF)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _has_perfect_matching(adj: np.ndarray, fixed: dict[int, int]) -> bool:
    """Kuhn's augmenting-path test on a boolean adjacency with some rows pre-assigned."""
    n = adj.shape[0]
    taken = {c: r for r, c in fixed.items()}
    match_col = np.full(n, -1)
    for c, r in taken.items():
        match_col[c] = r

    def augment(r, seen):
        for c in np.flatnonzero(adj[r]):
            if c in taken or seen[c]:
                continue
            seen[c] = True
            if match_col[c] < 0 or augment(match_col[c], seen):
                match_col[c] = r
                return True
        return False

    for r in range(n):
        if r in fixed:
            continue
        if not augment(r, np.zeros(n, dtype=bool)):
            return False
    return True


def hungarian(cost) -> Assignment:
    """Minimum-cost injective assignment of the N rows to K >= N columns.

    Among optimal assignments the lexicographically smallest one is returned.
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2:
        raise MatchingError("cost must be a 2-D matrix")
    N, K = C.shape
    if N > K:
        raise CapacityError(f"{N} ground-truth joints exceed {K} slots")
    if not np.all(np.isfinite(C)):
        raise MatchingError("cost matrix has non-finite entries")
    if N == 0:
        return Assignment((), K, 0.0)
    sq = np.zeros((K, K))
    sq[:N] = C
    base, u, v = _solve_square(sq)
    # an assignment is optimal iff it uses only tight edges of the dual solution
    slack = sq - u[:, None] - v[None, :]
    # dual round-off grows with the matrix size; anything above it is a real gap
    tol = 64.0 * np.finfo(float).eps * K * (1.0 + np.abs(C).max())
    tight = slack <= tol
    fixed: dict[int, int] = {}
    for i in range(N):
        for j in np.flatnonzero(tight[i]):
            if j in fixed.values():
                continue
            trial = dict(fixed)
            trial[i] = int(j)
            if j == base[i] and all(base[r] == c for r, c in fixed.items()):
                fixed = trial
                break
            if _has_perfect_matching(tight, trial):
                fixed = trial
                break
    sigma = tuple(fixed[i] for i in range(N))
    total = float(sum(C[i, k] for i, k in enumerate(sigma)))
    base_sigma = tuple(int(base[i]) for i in range(N))
    base_total = float(sum(C[i, k] for i, k in enumerate(base_sigma)))
    if base_total < total:
        sigma, total = base_sigma, base_total
    return Assignment(sigma, K, total)


# ---------------------------------------------------------------------------
# costs

def _joint_of(x) -> Joint:
    return x.joint if hasattr(x, "joint") else x


def _canonical(j: Joint) -> tuple[np.ndarray, tuple[float, float]]:
    if j.type.is_kinematic and np.any(j.axis):
        a, rng = canonicalize_axis(j.axis, j.range)
        return a, rng
    return np.asarray(j.axis, dtype=float), tuple(float(v) for v in j.range)


def normalized_range(rng, joint_type, scale: float) -> np.ndarray:
    """Range mapped to [0, 2]; values outside the domain saturate at its boundary."""
    jt = JointType(int(joint_type))
    m = np.asarray(rng, dtype=float)
    lim = scale if jt == JointType.PRISMATIC else 2.0 * math.pi
    return normalize_range(np.clip(m, -lim, lim), jt, scale)


def joint_cost(gt, pred, scale: float, w_type: float = W_TYPE) -> float:
    """Matching cost: type penalty + origin/scale + line angle + normalised range gap."""
    g, p = _joint_of(gt), _joint_of(pred)
    ag, rg = _canonical(g)
    ap, rp = _canonical(p)
    c = w_type * float(g.type != p.type)
    c += float(np.linalg.norm(g.origin - p.origin)) / scale
    c += line_angle(ag, ap)
    c += float(np.linalg.norm(normalized_range(rg, g.type, scale) - normalized_range(rp, p.type, scale)))
    return c


def pad_slots(preds, K: int) -> list:
    preds = list(preds)
    if len(preds) > K:
        raise CapacityError(f"{len(preds)} predictions exceed capacity K={K}")
    return preds + [Joint.fixed() for _ in range(K - len(preds))]


def cost_matrix(gts, preds, scale: float, K: int | None = None) -> np.ndarray:
    slots = pad_slots(preds, K if K is not None else max(len(preds), len(gts)))
    return np.array([[joint_cost(g, p, scale) for p in slots] for g in gts]).reshape(len(gts), len(slots))


def match_joints(gts, preds, scale: float, K: int = 16) -> Assignment:
    """Hungarian matching of GT joints against predictions padded to ``K`` fixed slots."""
    K = max(K, len(preds), len(gts))
    return hungarian(cost_matrix(gts, preds, scale, K))


# ---------------------------------------------------------------------------
# losses

@dataclass(frozen=True)
class LossBreakdown:
    l_cls: float
    l_joint_mean: float
    l_total: float
    lambda_reg: float

    def to_dict(self) -> dict:
        return {"l_cls": self.l_cls, "l_joint_mean": self.l_joint_mean,
                "l_total": self.l_total, "lambda_reg": self.lambda_reg}


def one_hot_scores(preds, K: int, eps: float = 0.0) -> np.ndarray:
    """Type scores placing all mass on each slot's predicted type (padding slots: fixed)."""
    slots = pad_slots(preds, K)
    P = np.full((K, N_CLASSES), eps)
    for k, s in enumerate(slots):
        P[k, int(_joint_of(s).type)] = 1.0 - eps * (N_CLASSES - 1)
    return P


def _check_simplex(P: np.ndarray) -> None:
    if P.ndim != 2 or P.shape[1] != N_CLASSES:
        raise MatchingError(f"type scores must have shape (K, {N_CLASSES})")
    if np.any(P < 0.0) or not np.allclose(P.sum(axis=1), 1.0, atol=1e-9) or not np.all(np.isfinite(P)):
        raise MatchingError("type scores are not a probability simplex per slot")


def joint_terms(o, a, r, o_hat, a_hat, r_hat) -> tuple[float, float, float]:
    """The three pair terms: squared origin gap, 1 - cos, squared range gap."""
    o, a, r, o_hat, a_hat, r_hat = (np.asarray(x, dtype=float) for x in (o, a, r, o_hat, a_hat, r_hat))
    cos = float(a @ a_hat) / (np.linalg.norm(a) * np.linalg.norm(a_hat))
    return (float(np.sum((o - o_hat) ** 2)), 1.0 - cos, float(np.sum((r - r_hat) ** 2)))


def _pair_params(g: Joint, p: Joint, scale: float):
    ag, rg = _canonical(g)
    ap, rp = _canonical(p)
    return (g.origin, ag, normalized_range(rg, g.type, scale),
            p.origin, ap, normalized_range(rp, p.type, scale))


def _fixed_axis(a: np.ndarray) -> np.ndarray:
    # fixed joints may carry a zero axis; the cosine term then needs a direction
    return a if np.any(a) else np.array([0.0, 0.0, 1.0])


def stage2_losses(gts, preds, sigma, lambda_reg: float = 1.0, type_scores=None,
                  scale: float = 1.0, K: int | None = None) -> LossBreakdown:
    """Slot classification cross-entropy plus the mean matched-pair joint loss."""
    K = K if K is not None else max(len(preds), len(gts), 1)
    slots = pad_slots(preds, K)
    P = one_hot_scores(preds, K) if type_scores is None else np.asarray(type_scores, dtype=float)
    _check_simplex(P)
    sig = tuple(sigma.sigma if isinstance(sigma, Assignment) else sigma)
    targets = np.zeros(K, dtype=np.int64)
    for n, k in enumerate(sig):
        targets[k] = int(_joint_of(gts[n]).type)
    picked = P[np.arange(K), targets]
    l_cls = float(np.mean(-np.log(np.maximum(picked, PROB_EPS)))) + 0.0  # avoid -0.0
    total = 0.0
    for n, k in enumerate(sig):
        o, a, r, oh, ah, rh = _pair_params(_joint_of(gts[n]), _joint_of(slots[k]), scale)
        total += sum(joint_terms(o, _fixed_axis(a), r, oh, _fixed_axis(ah), rh))
    l_joint = total / len(sig) if sig else 0.0
    return LossBreakdown(l_cls, l_joint, l_cls + lambda_reg * l_joint, float(lambda_reg))


@dataclass(frozen=True)
class PairGradient:
    origin: np.ndarray
    axis: np.ndarray
    range: np.ndarray
    degenerate: bool = False


def joint_term_gradients(o, a, r, o_hat, a_hat, r_hat, weight: float = 1.0) -> PairGradient:
    """Gradient of ``weight * sum(joint_terms)`` w.r.t. ``(o_hat, a_hat, r_hat)``.

    The axis gradient is taken w.r.t. the raw (unnormalised) 3-vector, so it
    is orthogonal to ``a_hat``.
    """
    o, a, r, o_hat, a_hat, r_hat = (np.asarray(x, dtype=float) for x in (o, a, r, o_hat, a_hat, r_hat))
    g_o = 2.0 * (o_hat - o) * weight
    g_r = 2.0 * (r_hat - r) * weight
    na, nh = np.linalg.norm(a), np.linalg.norm(a_hat)
    u, uh = a / na, a_hat / nh
    cos = float(u @ uh)
    degenerate = cos <= -1.0 + 1e-12
    if degenerate:
        warnings.warn("antiparallel axes: cosine gradient undefined, returning zero", RuntimeWarning)
        g_a = np.zeros(3)
    else:
        # d(1 - u.uh)/d a_hat = -(u - cos * uh) / |a_hat|
        g_a = -(u - cos * uh) / nh * weight
    return PairGradient(g_o, g_a, g_r, degenerate)


def stage2_loss_gradients(gts, preds, sigma, lambda_reg: float = 1.0,
                          scale: float = 1.0, K: int | None = None) -> list[PairGradient]:
    """Per matched GT joint, the gradient of L_total w.r.t. the matched slot's
    canonical origin, raw axis, and normalised range."""
    K = K if K is not None else max(len(preds), len(gts), 1)
    slots = pad_slots(preds, K)
    sig = tuple(sigma.sigma if isinstance(sigma, Assignment) else sigma)
    if not sig:
        return []
    w = lambda_reg / len(sig)
    out = []
    for n, k in enumerate(sig):
        o, a, r, oh, ah, rh = _pair_params(_joint_of(gts[n]), _joint_of(slots[k]), scale)
        out.append(joint_term_gradients(o, _fixed_axis(a), r, oh, _fixed_axis(ah), rh, w))
    return out
