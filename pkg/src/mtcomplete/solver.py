"""Alternating minimization for jointly completing several tensors.

Every mode-``l`` unfolding of every tensor ``k`` is approximated by a product
``U_g @ V_{k,l}.T`` where ``U_g`` belongs to a *sharing group* ``g``.  Pairs
``(k, l)`` placed in the same group use one common ``U``; this is how
information flows between tensors.  The fitted objective is::

    sum_{k,l} alpha[k][l] * ||unfold(Y_k, l) - U_g V_{k,l}^T||_F^2
        + lam * sum_g ||U_g||_F^2 + lam * sum_{k,l} ||V_{k,l}||_F^2

subject to ``Y_k == X_k`` on observed entries.  A sweep updates all ``U``,
then all ``V``, then every ``Y_k``; each step is an exact block minimizer,
so the objective never increases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from mtcomplete.tensor import fold, frobenius_norm, project_observed, unfold

logger = logging.getLogger(__name__)

Pair = tuple[int, int]

ALPHA_SUM_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when a plan, config or data set is inconsistent.

    ``problems`` lists every violation found, one message each.
    """

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class SharingPlan:
    """Partition of all ``(tensor, mode)`` pairs into factor-sharing groups.

    Parameters
    ----------
    modes_per_tensor : list of int
        Order ``L_k`` of each tensor.
    groups : list of list of (int, int)
        Disjoint groups of ``(k, l)`` pairs covering every pair once.
    ranks : list of int
        Rank of the shared factor of each group.
    """

    modes_per_tensor: list[int]
    groups: list[list[Pair]]
    ranks: list[int]

    def __post_init__(self):
        self.modes_per_tensor = [int(n) for n in self.modes_per_tensor]
        self.groups = [[(int(k), int(l)) for k, l in g] for g in self.groups]
        self.ranks = [int(r) for r in self.ranks]

    @property
    def num_tensors(self) -> int:
        return len(self.modes_per_tensor)

    def pairs(self) -> list[Pair]:
        return [(k, l) for k, n in enumerate(self.modes_per_tensor) for l in range(n)]

    def group_of(self) -> dict[Pair, int]:
        return {p: g for g, members in enumerate(self.groups) for p in members}

    @classmethod
    def independent(cls, shapes, ranks=None) -> "SharingPlan":
        """One group per ``(k, l)``; no coupling between tensors.

        ``ranks`` may be an int, a per-tensor list of per-mode ranks, or
        ``None`` for the default ``min(rows, cols, 10)``.
        """
        shapes = [tuple(s) for s in shapes]
        groups, out_ranks = [], []
        for k, shape in enumerate(shapes):
            for l in range(len(shape)):
                groups.append([(k, l)])
                if ranks is None:
                    out_ranks.append(default_rank(shape, l))
                elif isinstance(ranks, (int, np.integer)):
                    out_ranks.append(int(ranks))
                else:
                    out_ranks.append(int(ranks[k][l]))
        return cls([len(s) for s in shapes], groups, out_ranks)

    @classmethod
    def with_shared(cls, shapes, shared, ranks=None) -> "SharingPlan":
        """Build a plan from the shared groups only; every other pair is a singleton.

        ``ranks`` follows :meth:`independent`; a shared group takes the rank of
        its first member.
        """
        base = cls.independent(shapes, ranks)
        rank_of = {g[0]: r for g, r in zip(base.groups, base.ranks)}
        shared = [[(int(k), int(l)) for k, l in g] for g in shared]
        taken = {p for g in shared for p in g}
        groups = shared + [[p] for p in base.pairs() if p not in taken]
        return cls(base.modes_per_tensor, groups, [rank_of[g[0]] for g in groups])


def default_rank(shape, mode: int) -> int:
    rows = shape[mode]
    cols = int(np.prod(shape)) // rows
    return min(rows, cols, 10)


def uniform_alpha(modes_per_tensor) -> list[list[float]]:
    return [[1.0 / n] * n for n in modes_per_tensor]


@dataclass
class SolverConfig:
    """Solver controls.

    ``alpha[k][l]`` weights the mode-``l`` term of tensor ``k``; ``None``
    means uniform ``1 / L_k``.  ``init`` is ``"random"`` or ``"svd"``.
    ``tensor_seeds`` optionally overrides the per-tensor random streams
    (tensor ``k`` otherwise draws from ``(seed, k)``).
    """

    lam: float
    alpha: Optional[list[list[float]]] = None
    max_sweeps: int = 300
    rel_tolerance: float = 1e-6
    init: str = "random"
    seed: int = 0
    tensor_seeds: Optional[list[int]] = None

    def alpha_for(self, plan: SharingPlan) -> list[list[float]]:
        if self.alpha is None:
            return uniform_alpha(plan.modes_per_tensor)
        return [[float(a) for a in row] for row in self.alpha]

    def tensor_entropy(self, k: int) -> list[int]:
        if self.tensor_seeds is not None:
            return [int(self.tensor_seeds[k])]
        return [int(self.seed), k]


@dataclass
class ModelState:
    """Current factors and estimates.

    ``U[g]`` is the factor of group ``g``; ``V[(k, l)]`` the local factor of
    each pair; ``Y[k]`` the current completed tensor ``k``.
    """

    U: list[np.ndarray]
    V: dict[Pair, np.ndarray]
    Y: list[np.ndarray]

    def copy(self) -> "ModelState":
        return ModelState(
            [u.copy() for u in self.U],
            {p: v.copy() for p, v in self.V.items()},
            [y.copy() for y in self.Y],
        )


@dataclass
class SolveReport:
    sweeps_run: int
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = False
    final_objective: float = float("nan")


def _split(tensors):
    xs = [np.asarray(x, dtype=np.float64) for x, _ in tensors]
    ws = [np.asarray(w, dtype=bool) for _, w in tensors]
    return xs, ws


def validate(plan: SharingPlan, tensors, cfg: SolverConfig, *, allow_zero_lambda=False) -> None:
    """Check plan, data and config for consistency.

    ``tensors`` is a list of ``(X_k, W_k)`` pairs.  Raises
    :class:`ValidationError` listing every problem found.
    """
    problems: list[str] = []
    xs, ws = _split(tensors)

    if len(xs) != plan.num_tensors:
        problems.append(f"plan describes {plan.num_tensors} tensors, got {len(xs)}")
        raise ValidationError(problems)

    for k, (x, w) in enumerate(zip(xs, ws)):
        if x.ndim != plan.modes_per_tensor[k]:
            problems.append(
                f"tensor {k}: order {x.ndim} but plan says {plan.modes_per_tensor[k]} modes"
            )
        if x.shape != w.shape:
            problems.append(f"tensor {k}: shape {x.shape} does not match mask {w.shape}")
        if not np.all(np.isfinite(x[w] if x.shape == w.shape else x)):
            problems.append(f"tensor {k}: observed entries must be finite")
    if problems:
        raise ValidationError(problems)

    if len(plan.ranks) != len(plan.groups):
        problems.append(f"{len(plan.groups)} groups but {len(plan.ranks)} ranks")
    seen: dict[Pair, int] = {}
    valid_pairs = set(plan.pairs())
    for g, members in enumerate(plan.groups):
        if not members:
            problems.append(f"group {g}: empty")
            continue
        for p in members:
            if p not in valid_pairs:
                problems.append(f"group {g}: pair {p} is not a (tensor, mode) of the data")
            elif p in seen:
                problems.append(f"group {g}: pair {p} already in group {seen[p]}")
            else:
                seen[p] = g
        rows = {xs[k].shape[l] for k, l in members if (k, l) in valid_pairs}
        if len(rows) > 1:
            problems.append(
                f"group {g}: dimension mismatch, members {members} have mode extents {sorted(rows)}"
            )
        if g < len(plan.ranks):
            r = plan.ranks[g]
            if r < 1:
                problems.append(f"group {g}: rank {r} must be >= 1")
            for k, l in members:
                if (k, l) not in valid_pairs:
                    continue
                n = xs[k].shape[l]
                cols = xs[k].size // n
                if r > min(n, cols):
                    problems.append(
                        f"group {g}: rank {r} exceeds min(rows, cols) = {min(n, cols)} "
                        f"of unfolding ({k}, {l})"
                    )
    for p in sorted(valid_pairs - set(seen)):
        problems.append(f"pair {p} belongs to no group")

    if not (cfg.lam > 0 or (allow_zero_lambda and cfg.lam == 0)):
        problems.append(f"lambda must be > 0, got {cfg.lam}")
    if cfg.max_sweeps < 1:
        problems.append(f"max_sweeps must be >= 1, got {cfg.max_sweeps}")
    if cfg.rel_tolerance < 0:
        problems.append(f"rel_tolerance must be >= 0, got {cfg.rel_tolerance}")
    if cfg.init not in ("random", "svd"):
        problems.append(f"init must be 'random' or 'svd', got {cfg.init!r}")
    if cfg.tensor_seeds is not None and len(cfg.tensor_seeds) != plan.num_tensors:
        problems.append(
            f"tensor_seeds has {len(cfg.tensor_seeds)} entries for {plan.num_tensors} tensors"
        )

    alpha = cfg.alpha_for(plan)
    if len(alpha) != plan.num_tensors:
        problems.append(f"alpha has {len(alpha)} rows for {plan.num_tensors} tensors")
    else:
        for k, row in enumerate(alpha):
            if len(row) != plan.modes_per_tensor[k]:
                problems.append(
                    f"alpha row of tensor {k} has {len(row)} weights for "
                    f"{plan.modes_per_tensor[k]} modes"
                )
                continue
            if any(a < 0 for a in row):
                problems.append(f"alpha row of tensor {k} has negative weights")
            if abs(sum(row) - 1.0) > ALPHA_SUM_TOL:
                problems.append(f"alpha row of tensor {k} sums to {sum(row)!r}, not 1")

    if problems:
        raise ValidationError(problems)


def _rng(entropy: list[int]) -> np.random.Generator:
    # PCG64 seeded through SeedSequence: reproducible from the integer key alone.
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def init_state(plan: SharingPlan, tensors, cfg: SolverConfig) -> ModelState:
    """Zero-fill missing entries and initialize factors.

    ``"random"``: i.i.d. standard normal entries scaled by ``1/sqrt(R_g)``.
    Each ``V_{k,l}`` draws from its own stream keyed on tensor ``k``'s seed
    and ``l``; each ``U_g`` from the stream of its first member.

    ``"svd"``: ``U_g`` holds the leading left singular vectors of the group's
    zero-filled unfoldings placed side by side (members may differ in column
    count), and ``V_{k,l} = unfold(Y_k, l).T @ U_g``.
    """
    xs, ws = _split(tensors)
    Y = [np.where(w, x, 0.0) for x, w in zip(xs, ws)]
    U: list[np.ndarray] = []
    V: dict[Pair, np.ndarray] = {}
    for g, members in enumerate(plan.groups):
        r = plan.ranks[g]
        if cfg.init == "svd":
            stacked = np.hstack([unfold(Y[k], l) for k, l in members])
            left, _, _ = linalg.svd(stacked, full_matrices=False)
            u = np.ascontiguousarray(left[:, :r])
            U.append(u)
            for k, l in members:
                V[(k, l)] = unfold(Y[k], l).T @ u
        else:
            k0, l0 = members[0]
            rows = xs[k0].shape[l0]
            U.append(_rng(cfg.tensor_entropy(k0) + [l0, 0]).standard_normal((rows, r)) / np.sqrt(r))
            for k, l in members:
                cols = xs[k].size // xs[k].shape[l]
                V[(k, l)] = _rng(cfg.tensor_entropy(k) + [l, 1]).standard_normal((cols, r)) / np.sqrt(r)
    return ModelState(U, dict(sorted(V.items())), Y)


def _spd_solve_right(b: np.ndarray, gram: np.ndarray) -> np.ndarray:
    """Return ``b @ inv(gram)`` for symmetric positive-definite ``gram``."""
    factor = linalg.cho_factor(gram, lower=True, check_finite=False)
    return linalg.cho_solve(factor, b.T, check_finite=False).T


def shared_factor_system(g, state, plan, cfg, unfoldings=None):
    """Right-hand side and Gram matrix defining the update of ``U_g``."""
    alpha = cfg.alpha_for(plan)
    r = plan.ranks[g]
    rhs, gram = None, cfg.lam * np.eye(r)
    for k, l in plan.groups[g]:
        a = alpha[k][l]
        y = unfoldings[(k, l)] if unfoldings is not None else unfold(state.Y[k], l)
        v = state.V[(k, l)]
        term = a * (y @ v)
        rhs = term if rhs is None else rhs + term
        gram = gram + a * (v.T @ v)
    return rhs, gram


def update_shared_factor(g, state, plan, cfg, unfoldings=None) -> np.ndarray:
    """Exact minimizer of the objective in ``U_g`` with everything else fixed."""
    rhs, gram = shared_factor_system(g, state, plan, cfg, unfoldings)
    return _spd_solve_right(rhs, gram)


def local_factor_system(k, l, state, plan, cfg, unfoldings=None):
    """Right-hand side and Gram matrix defining the update of ``V_{k,l}``."""
    a = cfg.alpha_for(plan)[k][l]
    u = state.U[plan.group_of()[(k, l)]]
    y = unfoldings[(k, l)] if unfoldings is not None else unfold(state.Y[k], l)
    rhs = a * (y.T @ u)
    gram = a * (u.T @ u) + cfg.lam * np.eye(u.shape[1])
    return rhs, gram


def update_local_factor(k, l, state, plan, cfg, unfoldings=None) -> np.ndarray:
    """Exact minimizer of the objective in ``V_{k,l}`` with everything else fixed."""
    rhs, gram = local_factor_system(k, l, state, plan, cfg, unfoldings)
    return _spd_solve_right(rhs, gram)


def low_rank_average(k, state, plan, cfg) -> np.ndarray:
    """``sum_l alpha[k][l] * fold(U_g V_{k,l}^T, l)`` before any projection."""
    alpha = cfg.alpha_for(plan)[k]
    group_of = plan.group_of()
    shape = state.Y[k].shape
    out = np.zeros(shape)
    for l in range(len(shape)):
        u = state.U[group_of[(k, l)]]
        out += alpha[l] * fold(u @ state.V[(k, l)].T, l, shape)
    return out


def reconstruct_estimate(k, state, plan, cfg, original, w) -> np.ndarray:
    """New ``Y_k``: weighted fold-back of the factor products, observed entries restored."""
    return project_observed(low_rank_average(k, state, plan, cfg), original, w)


def objective(state: ModelState, plan: SharingPlan, cfg: SolverConfig, tensors=None) -> float:
    """Value of the regularized factorization objective at ``state``.

    Each shared ``U_g`` is penalized once.  ``tensors`` is accepted for
    interface symmetry; the value only depends on ``state``.
    """
    alpha = cfg.alpha_for(plan)
    group_of = plan.group_of()
    fit = 0.0
    for k, y in enumerate(state.Y):
        for l in range(y.ndim):
            resid = unfold(y, l) - state.U[group_of[(k, l)]] @ state.V[(k, l)].T
            fit += alpha[k][l] * float(np.sum(resid * resid))
    reg = sum(frobenius_norm(u) ** 2 for u in state.U)
    reg += sum(frobenius_norm(v) ** 2 for v in state.V.values())
    return fit + cfg.lam * reg


def objective_gradient(state: ModelState, plan: SharingPlan, cfg: SolverConfig):
    """Analytic gradient of :func:`objective` with respect to every ``U_g`` and ``V_{k,l}``."""
    alpha = cfg.alpha_for(plan)
    group_of = plan.group_of()
    dU = [2 * cfg.lam * u for u in state.U]
    dV = {}
    for (k, l), v in state.V.items():
        g = group_of[(k, l)]
        u = state.U[g]
        resid = u @ v.T - unfold(state.Y[k], l)
        dU[g] = dU[g] + 2 * alpha[k][l] * (resid @ v)
        dV[(k, l)] = 2 * alpha[k][l] * (resid.T @ u) + 2 * cfg.lam * v
    return dU, dV


def sweep(state: ModelState, plan: SharingPlan, cfg: SolverConfig, tensors) -> ModelState:
    """One pass: every ``U_g``, then every ``V_{k,l}``, then every ``Y_k``.

    Returns a new state; ``state`` is not modified.
    """
    xs, ws = _split(tensors)
    unfoldings = {(k, l): unfold(y, l) for k, y in enumerate(state.Y) for l in range(y.ndim)}
    new = ModelState(list(state.U), dict(state.V), list(state.Y))
    new.U = [update_shared_factor(g, state, plan, cfg, unfoldings) for g in range(len(plan.groups))]
    new.V = {
        (k, l): update_local_factor(k, l, new, plan, cfg, unfoldings) for k, l in state.V
    }
    new.Y = [reconstruct_estimate(k, new, plan, cfg, xs[k], ws[k]) for k in range(len(xs))]
    return new


def solve(plan: SharingPlan, tensors, cfg: SolverConfig) -> tuple[ModelState, SolveReport]:
    """Initialize and sweep until the relative objective change drops below
    ``cfg.rel_tolerance`` or ``cfg.max_sweeps`` is reached.

    The change at sweep ``t`` is ``|f_t - f_{t-1}| / (1 + |f_{t-1}|)`` with
    ``f_0`` the objective at initialization.
    """
    validate(plan, tensors, cfg)
    state = init_state(plan, tensors, cfg)
    prev = objective(state, plan, cfg)
    report = SolveReport(sweeps_run=0)
    for t in range(cfg.max_sweeps):
        state = sweep(state, plan, cfg, tensors)
        f = objective(state, plan, cfg)
        report.objective_trace.append(f)
        report.sweeps_run = t + 1
        change = abs(f - prev) / (1.0 + abs(prev))
        logger.debug("sweep %d objective %.6g change %.3g", t + 1, f, change)
        prev = f
        if change < cfg.rel_tolerance:
            report.converged = True
            break
    report.final_objective = prev
    return state, report


def default_lambda(tensors) -> float:
    """``0.1 * mean |x|`` over observed entries, falling back to 0.1."""
    mags = [np.abs(np.asarray(x, dtype=np.float64)[np.asarray(w, dtype=bool)]) for x, w in tensors]
    total = sum(m.size for m in mags)
    if total == 0:
        return 0.1
    mean = sum(float(m.sum()) for m in mags) / total
    return 0.1 * mean if mean > 0 else 0.1
