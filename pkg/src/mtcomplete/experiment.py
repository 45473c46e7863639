"""Synthetic coupled tensors, random masks, RSE and joint-vs-independent runs."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from mtcomplete.solver import (
    SharingPlan,
    SolveReport,
    SolverConfig,
    solve,
)
from mtcomplete.tensor import fold, frobenius_norm, unfold

TABLE_COLUMNS = (
    "seed",
    "arm",
    "k",
    "missing_fraction",
    "rse_all",
    "rse_missing_only",
    "sweeps",
    "final_objective",
)


class UndefinedMetricError(ValueError):
    pass


@dataclass
class MaskSpec:
    missing_fraction: float
    seed: int = 0


@dataclass
class SynthSpec:
    """Ground-truth generator settings.

    ``ranks[k][l]`` is the true rank of mode ``l`` of tensor ``k``.  Each
    entry of ``shared`` is a list of ``(k, l)`` pairs drawing one common true
    factor for that mode.
    """

    shapes: list[tuple[int, ...]]
    ranks: list[list[int]]
    shared: list[list[tuple[int, int]]] = field(default_factory=list)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.shapes = [tuple(int(n) for n in s) for s in self.shapes]
        self.ranks = [[int(r) for r in row] for row in self.ranks]
        self.shared = [[(int(k), int(l)) for k, l in g] for g in self.shared]


def _rng(entropy) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def missing_count(n: int, fraction: float) -> int:
    """``floor(fraction * n)`` with ``fraction`` read as the decimal it prints as.

    0.29 * 100 is 28.999... in binary floating point; this returns 29.
    """
    return math.floor(Fraction(repr(float(fraction))) * n)


def missing_order(shape, seed: int) -> np.ndarray:
    """Flat positions in the order they become missing as the fraction grows.

    Masks from the same ``(shape, seed)`` are nested: a higher fraction
    removes a superset of the entries removed by a lower one.
    """
    n = int(np.prod(shape))
    return _rng([int(seed)]).permutation(n)


def generate_mask(shape, spec: MaskSpec) -> np.ndarray:
    """Boolean mask with exactly ``floor(f * N)`` missing (False) entries."""
    f = float(spec.missing_fraction)
    if not 0.0 <= f <= 1.0:
        raise ValueError(f"missing_fraction must be in [0, 1], got {f}")
    shape = tuple(int(n) for n in shape)
    n = int(np.prod(shape))
    bits = np.ones(n, dtype=bool)
    bits[missing_order(shape, spec.seed)[: missing_count(n, f)]] = False
    return bits.reshape(shape, order="F")


def _check_synth(spec: SynthSpec) -> None:
    if len(spec.ranks) != len(spec.shapes):
        raise ValueError(f"{len(spec.shapes)} shapes but {len(spec.ranks)} rank rows")
    for k, (shape, ranks) in enumerate(zip(spec.shapes, spec.ranks)):
        if len(ranks) != len(shape):
            raise ValueError(f"tensor {k}: {len(shape)} modes but {len(ranks)} ranks")
        for l, (n, r) in enumerate(zip(shape, ranks)):
            if not 1 <= r <= n:
                raise ValueError(f"tensor {k} mode {l}: rank {r} outside [1, {n}]")
    if spec.noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {spec.noise_sigma}")
    seen = set()
    for g in spec.shared:
        dims = set()
        for k, l in g:
            if not (0 <= k < len(spec.shapes) and 0 <= l < len(spec.shapes[k])):
                raise ValueError(f"shared pair {(k, l)} does not exist")
            if (k, l) in seen:
                raise ValueError(f"pair {(k, l)} appears in two shared groups")
            seen.add((k, l))
            dims.add((spec.shapes[k][l], spec.ranks[k][l]))
        if len(dims) > 1:
            raise ValueError(
                f"shared group {g} has inconsistent (extent, rank) pairs {sorted(dims)}"
            )


def true_factors(spec: SynthSpec) -> tuple[list[list[np.ndarray]], list[np.ndarray]]:
    """Per-mode factor matrices and a core tensor for every tensor.

    Shared groups reuse one factor drawn from the stream of their first member.
    """
    _check_synth(spec)
    owner = {}
    for g in spec.shared:
        for p in g:
            owner[p] = g[0]
    factors, cores = [], []
    for k, (shape, ranks) in enumerate(zip(spec.shapes, spec.ranks)):
        row = []
        for l, (n, r) in enumerate(zip(shape, ranks)):
            k0, l0 = owner.get((k, l), (k, l))
            row.append(_rng([spec.seed, 0, k0, l0]).standard_normal((n, r)))
        factors.append(row)
        cores.append(_rng([spec.seed, 1, k]).standard_normal(tuple(ranks)))
    return factors, cores


def mode_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    shape = list(t.shape)
    shape[mode] = m.shape[0]
    return fold(m @ unfold(t, mode), mode, shape)


def synth_coupled(spec: SynthSpec) -> list[np.ndarray]:
    """Ground-truth tensors with low multilinear rank.

    Tensor ``k`` is the average over modes ``l`` of ``fold(A_l @ B_l.T, l)``,
    where ``A_l`` is the true mode-``l`` factor and ``B_l`` the mode-``l``
    unfolding of the core multiplied by every other factor.  All terms are
    the same Tucker tensor, so every mode-``l`` unfolding has rank at most
    ``ranks[k][l]`` and shared modes have a common column space.
    """
    factors, cores = true_factors(spec)
    out = []
    for k, shape in enumerate(spec.shapes):
        x = np.zeros(shape)
        for l in range(len(shape)):
            partial = cores[k]
            for m in range(len(shape)):
                if m != l:
                    partial = mode_product(partial, factors[k][m], m)
            b = unfold(partial, l).T
            x += fold(factors[k][l] @ b.T, l, shape) / len(shape)
        if spec.noise_sigma > 0:
            x += spec.noise_sigma * _rng([spec.seed, 2, k]).standard_normal(shape)
        out.append(x)
    return out


def rse(estimate: np.ndarray, truth: np.ndarray, where: Optional[np.ndarray] = None) -> float:
    """Relative error ``||estimate - truth||_F / ||truth||_F``.

    ``where`` restricts both norms to a boolean subset of entries.
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch: {estimate.shape} vs {truth.shape}")
    if where is not None:
        where = np.asarray(where, dtype=bool)
        estimate, truth = estimate[where], truth[where]
    denom = frobenius_norm(truth)
    if denom == 0:
        raise UndefinedMetricError("RSE undefined: truth is all zero")
    return frobenius_norm(estimate - truth) / denom


@dataclass
class ArmResult:
    arm: str
    k: int
    missing_fraction: float
    rse_all: float
    rse_missing_only: float
    sweeps: int
    final_objective: float


@dataclass
class ExperimentReport:
    seed: int
    missing_fractions: list[float]
    joint_rse: list[float]
    independent_rse: list[float]
    rows: list[ArmResult]
    joint_report: SolveReport
    independent_reports: list[SolveReport]
    config: dict

    def table(self) -> str:
        return format_table([(self.seed, r) for r in self.rows])


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def format_table(rows: Sequence[tuple[int, ArmResult]], header: bool = True) -> str:
    """Tab-separated table, columns in :data:`TABLE_COLUMNS` order."""
    lines = ["\t".join(TABLE_COLUMNS)] if header else []
    for seed, r in rows:
        vals = (seed, r.arm, r.k, float(r.missing_fraction), r.rse_all,
                r.rse_missing_only, r.sweeps, r.final_objective)
        lines.append("\t".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def _missing_rse(est, truth, w):
    if np.all(w):
        return 0.0
    try:
        return rse(est, truth, where=~w)
    except UndefinedMetricError:
        return float("nan")


def run_comparison(
    spec: SynthSpec,
    mask_specs: Sequence[MaskSpec],
    plan: SharingPlan,
    cfg: SolverConfig,
    truth: Optional[list[np.ndarray]] = None,
    independent: bool = True,
) -> ExperimentReport:
    """Joint solve under ``plan`` vs independent per-tensor solves.

    The independent arm solves each tensor on its own with singleton groups
    at the ranks ``plan`` assigns, and with the same per-tensor random
    streams as the joint arm.  RSE is measured against the noiseless truth.
    """
    if truth is None:
        truth = synth_coupled(replace(spec, noise_sigma=0.0))
    observed = synth_coupled(spec) if spec.noise_sigma > 0 else truth
    if len(mask_specs) != len(truth):
        raise ValueError(f"{len(mask_specs)} mask specs for {len(truth)} tensors")
    masks = [generate_mask(x.shape, m) for x, m in zip(truth, mask_specs)]
    data = [(x, w) for x, w in zip(observed, masks)]

    seeds = cfg.tensor_seeds or [
        int(np.random.SeedSequence([cfg.seed, k]).generate_state(1, np.uint64)[0])
        for k in range(len(truth))
    ]
    joint_cfg = replace(cfg, tensor_seeds=list(seeds))
    joint_state, joint_report = solve(plan, data, joint_cfg)

    group_rank = {p: plan.ranks[g] for g, members in enumerate(plan.groups) for p in members}
    alpha = cfg.alpha_for(plan)
    rows = []
    joint_rse, indep_rse, indep_reports = [], [], []
    for k, (x, w) in enumerate(data):
        r_all = rse(joint_state.Y[k], truth[k])
        joint_rse.append(r_all)
        rows.append(ArmResult("joint", k, mask_specs[k].missing_fraction, r_all,
                              _missing_rse(joint_state.Y[k], truth[k], w),
                              joint_report.sweeps_run, joint_report.final_objective))
    for k, (x, w) in enumerate(data if independent else []):
        single = SharingPlan.independent([x.shape], [[group_rank[(k, l)] for l in range(x.ndim)]])
        single_cfg = replace(cfg, alpha=[alpha[k]], tensor_seeds=[seeds[k]])
        state_k, report_k = solve(single, [(x, w)], single_cfg)
        indep_reports.append(report_k)
        r_all = rse(state_k.Y[0], truth[k])
        indep_rse.append(r_all)
        rows.append(ArmResult("independent", k, mask_specs[k].missing_fraction, r_all,
                              _missing_rse(state_k.Y[0], truth[k], w),
                              report_k.sweeps_run, report_k.final_objective))

    return ExperimentReport(
        seed=spec.seed,
        missing_fractions=[m.missing_fraction for m in mask_specs],
        joint_rse=joint_rse,
        independent_rse=indep_rse,
        rows=rows,
        joint_report=joint_report,
        independent_reports=indep_reports,
        config={"synth": asdict(spec), "plan": asdict(plan), "solver": asdict(joint_cfg)},
    )


def run_fraction_sweep(
    spec: SynthSpec,
    fractions: Sequence[float],
    mask_seeds: Sequence[int],
    plan: SharingPlan,
    cfg: SolverConfig,
    independent: bool = True,
) -> list[ExperimentReport]:
    """:func:`run_comparison` at several missing fractions on one ground truth.

    Tensor ``k`` always uses ``mask_seeds[k]``, so the masks are nested: the
    observed set at a higher fraction is a subset of the one at a lower fraction.
    """
    truth = synth_coupled(replace(spec, noise_sigma=0.0))
    return [
        run_comparison(spec, [MaskSpec(f, s) for s in mask_seeds], plan, cfg,
                       truth=truth, independent=independent)
        for f in fractions
    ]
