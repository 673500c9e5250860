"""Max-min optical-SNR assignment of mirrors to (AP, photodiode, user) targets.

Three solvers share one problem type: an exhaustive oracle, an exact
depth-first branch and bound, and a greedy heuristic. Select-best combining
is applied exactly when a candidate assignment is evaluated, so the big-M
rows of the integer program never appear explicitly; ``verify_solution``
checks the full constraint set on any output.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .channel import Allocation, GainTables, LinkBudget

DEFAULT_ENUMERATION_BUDGET = 10**7
_VERIFY_RTOL = 1e-12


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    HEURISTIC = "heuristic"
    DEGENERATE = "infeasible-degenerate"


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class AllocationProblem:
    """Optical-SNR data: ``base`` (N, U) and per-mirror increments ``contrib`` (L, K, N, U)."""

    base: np.ndarray
    contrib: np.ndarray

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        contrib = np.asarray(self.contrib, dtype=float)
        if base.ndim != 2 or contrib.ndim != 4 or contrib.shape[2:] != base.shape:
            raise ValueError(f"shape mismatch: base {base.shape}, contrib {contrib.shape}")
        if np.any(base < 0) or np.any(contrib < 0):
            raise ValueError("optical SNR terms must be non-negative")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "contrib", contrib)

    @property
    def n_aps(self) -> int:
        return self.contrib.shape[0]

    @property
    def n_oris(self) -> int:
        return self.contrib.shape[1]

    @property
    def n_pds(self) -> int:
        return self.base.shape[0]

    @property
    def n_users(self) -> int:
        return self.base.shape[1]

    def scaled(self, c: float) -> "AllocationProblem":
        return AllocationProblem(self.base * c, self.contrib * c)


def build_problem(tables: GainTables, budget: LinkBudget) -> AllocationProblem:
    """Convert gain tables to optical SNR (square root of electrical SNR)."""
    s = budget.optical_scale
    return AllocationProblem(s * tables.fixed(), s * tables.oris_contrib)


def big_m(problem: AllocationProblem) -> float:
    """Upper bound on any user's optical SNR under any allocation."""
    m = float(problem.base.max()) if problem.base.size else 0.0
    if problem.n_oris and problem.contrib.size:
        m += float(problem.contrib.max(axis=(0, 2, 3)).sum())
    return m


@dataclass(frozen=True)
class SolverResult:
    allocation: Allocation
    objective: float
    selected_photodiode: tuple[int, ...]
    status: Status
    user_optical_snr: tuple[float, ...] = ()
    outage_users: tuple[int, ...] = ()

    @property
    def user_snr(self) -> tuple[float, ...]:
        return tuple(v * v for v in self.user_optical_snr)

    def to_dict(self) -> dict:
        return {
            "allocation": self.allocation.to_list(),
            "objective": self.objective,
            "status": self.status.value,
            "selected_photodiode": list(self.selected_photodiode),
            "user_optical_snr": list(self.user_optical_snr),
            "user_snr": list(self.user_snr),
            "outage_users": list(self.outage_users),
        }


def photodiode_values(problem: AllocationProblem, allocation: Allocation) -> np.ndarray:
    """Optical SNR per (photodiode, user); mirrors are added in index order."""
    vals = problem.base.copy()
    for k, l, n, u in sorted(allocation.entries):
        vals[n, u] += problem.contrib[l, k, n, u]
    return vals


def _result(problem: AllocationProblem, allocation: Allocation, status: Status) -> SolverResult:
    if problem.n_users == 0:
        return SolverResult(allocation, 0.0, (), Status.DEGENERATE)
    vals = photodiode_values(problem, allocation)
    selected = vals.argmax(axis=0)
    per_user = vals.max(axis=0)
    outage = tuple(int(u) for u in np.nonzero(per_user == 0)[0])
    return SolverResult(
        allocation,
        float(per_user.min()),
        tuple(int(n) for n in selected),
        status,
        tuple(float(v) for v in per_user),
        outage,
    )


def elements_used(problem: AllocationProblem, result: SolverResult) -> int:
    """Mirrors adding a non-zero term to their user's selected photodiode."""
    sel = result.selected_photodiode
    return sum(1 for k, l, n, u in result.allocation.entries
               if n == sel[u] and problem.contrib[l, k, n, u] > 0)


def _option_table(problem: AllocationProblem) -> np.ndarray:
    """(K, 1 + L*N*U, N*U): option 0 leaves the mirror idle, option
    1 + (l*N + n)*U + u sends it to (l, n, u)."""
    L, K, N, U = problem.contrib.shape
    table = np.zeros((K, 1 + L * N * U, N * U))
    for l in range(L):
        for n in range(N):
            for u in range(U):
                table[:, 1 + (l * N + n) * U + u, n * U + u] = problem.contrib[l, :, n, u]
    return table


def _decode_option(o: int, problem: AllocationProblem) -> Optional[tuple[int, int, int]]:
    if o == 0:
        return None
    o -= 1
    N, U = problem.n_pds, problem.n_users
    return o // (N * U), (o // U) % N, o % U


def brute_force(problem: AllocationProblem,
                budget: int = DEFAULT_ENUMERATION_BUDGET) -> SolverResult:
    """Enumerate every assignment; ties go to the lexicographically smallest."""
    L, K, N, U = problem.contrib.shape
    if U == 0:
        return _result(problem, Allocation(), Status.DEGENERATE)
    n_opts = 1 + L * N * U
    total = n_opts**K
    if total > budget:
        raise EnumerationTooLarge(f"{n_opts}^{K} = {total} assignments exceed budget {budget}")
    if K == 0:
        return _result(problem, Allocation(), Status.OPTIMAL)

    table = _option_table(problem)
    base = problem.base.reshape(-1)
    best_val, best_idx = -math.inf, 0
    chunk = 1 << 15
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        digits = np.unravel_index(idx, (n_opts,) * K)
        vals = np.broadcast_to(base, (len(idx), N * U)).copy()
        for k in range(K):
            vals += table[k, digits[k]]
        obj = vals.reshape(-1, N, U).max(axis=1).min(axis=1)
        i = int(obj.argmax())
        if obj[i] > best_val:
            best_val, best_idx = float(obj[i]), start + i
    digits = np.unravel_index(best_idx, (n_opts,) * K)
    assignment = [_decode_option(int(d), problem) for d in digits]
    return _result(problem, Allocation.from_assignment(assignment), Status.OPTIMAL)


def _single_user(problem: AllocationProblem, active: list[int]) -> SolverResult:
    # One user: mirrors never compete, so each goes to its best AP on the
    # photodiode with the largest total.
    best_ap = problem.contrib[:, :, :, 0].argmax(axis=0)        # (K, N)
    best_c = problem.contrib[:, :, :, 0].max(axis=0)             # (K, N)
    totals = problem.base[:, 0].copy()
    for k in active:
        totals += best_c[k]
    n = int(totals.argmax())
    assignment: list[Optional[tuple[int, int, int]]] = [None] * problem.n_oris
    for k in active:
        if best_c[k, n] > 0:
            assignment[k] = (int(best_ap[k, n]), n, 0)
    return _result(problem, Allocation.from_assignment(assignment), Status.OPTIMAL)


def active_elements(problem: AllocationProblem) -> list[int]:
    if problem.n_oris == 0 or problem.n_users == 0:
        return []
    return [int(k) for k in np.nonzero(problem.contrib.max(axis=(0, 2, 3)) > 0)[0]]


def branch_and_bound(problem: AllocationProblem, tolerance: float = 1e-9) -> SolverResult:
    """Exact depth-first search with an admissible relaxation bound.

    Mirrors are branched in decreasing order of their largest increment. The
    bound at a node lets every unbranched mirror add its best increment to
    every (photodiode, user) pair at once. Nodes whose bound does not beat the
    incumbent by more than ``tolerance`` (relative) are pruned.
    """
    if problem.n_users == 0:
        return _result(problem, Allocation(), Status.DEGENERATE)
    active = active_elements(problem)
    if not active:
        return _result(problem, Allocation(), Status.OPTIMAL)
    if problem.n_users == 1:
        return _single_user(problem, active)

    incumbent = greedy(problem)
    best_val = incumbent.objective
    best_assign = {k: (l, n, u) for k, l, n, u in incumbent.allocation.entries}

    per_elem = problem.contrib.max(axis=0)                       # (K, N, U)
    order = sorted(active, key=lambda k: (-per_elem[k].max(), k))
    depth = len(order)
    suffix = np.zeros((depth + 1,) + problem.base.shape)
    for i in range(depth - 1, -1, -1):
        suffix[i] = suffix[i + 1] + per_elem[order[i]]
    options = []
    for k in order:
        ls, ns, us = np.nonzero(problem.contrib[:, k])
        options.append((ls, ns, us, problem.contrib[ls, k, ns, us]))

    def bound_of(vals: np.ndarray) -> np.ndarray:
        return vals.max(axis=-2).min(axis=-1)

    def prunable(b: float) -> bool:
        return b <= best_val + tolerance * abs(best_val)

    # Stack entries: (bound, depth, values, path); path is a linked list of
    # (parent, k, target) so siblings share their prefix.
    stack = [(float(bound_of(problem.base + suffix[0])), 0, problem.base.copy(), None)]
    while stack:
        b, i, cur, path = stack.pop()
        if prunable(b):
            continue
        if i == depth:
            val = float(bound_of(cur))
            if val > best_val:
                best_val = val
                best_assign = {}
                node = path
                while node is not None:
                    node, k, target = node
                    best_assign[k] = target
            continue
        ls, ns, us, cs = options[i]
        kids = np.repeat(cur[None], len(cs) + 1, axis=0)
        kids[np.arange(len(cs)), ns, us] += cs
        bounds = bound_of(kids + suffix[i + 1])
        targets = [(int(l), int(n), int(u)) for l, n, u in zip(ls, ns, us)] + [None]
        # Best child last so it is popped first; stable order keeps ties deterministic.
        for j in sorted(range(len(targets)), key=lambda j: (bounds[j], -j)):
            if prunable(float(bounds[j])):
                continue
            t = targets[j]
            child_path = path if t is None else (path, order[i], t)
            stack.append((float(bounds[j]), i + 1, kids[j], child_path))

    assignment = [best_assign.get(k) for k in range(problem.n_oris)]
    return _result(problem, Allocation.from_assignment(assignment), Status.OPTIMAL)


def greedy(problem: AllocationProblem) -> SolverResult:
    """Repeatedly give the weakest user the mirror that lifts it most.

    A user that no remaining mirror can lift is set aside and the next
    weakest user is served, so leftover mirrors still reach other users.
    """
    L, K, N, U = problem.contrib.shape
    if U == 0:
        return _result(problem, Allocation(), Status.DEGENERATE)
    best_c = problem.contrib.max(axis=0)                        # (K, N, U)
    best_ap = problem.contrib.argmax(axis=0)
    avail = np.where(best_c > 0, best_c, -np.inf)
    cur = problem.base.copy()
    saturated = np.zeros(U, dtype=bool)
    assignment: list[Optional[tuple[int, int, int]]] = [None] * K
    remaining = int(np.isfinite(avail).any(axis=(1, 2)).sum())
    while remaining and not saturated.all():
        level = cur.max(axis=0)
        u = int(np.where(saturated, np.inf, level).argmin())
        gain = np.maximum(level[u], cur[:, u] + avail[:, :, u]) - level[u]   # (K, N)
        flat = int(gain.argmax())
        k, n = divmod(flat, N)
        if not gain[k, n] > 0:
            saturated[u] = True
            continue
        assignment[k] = (int(best_ap[k, n, u]), n, u)
        cur[n, u] += problem.contrib[best_ap[k, n, u], k, n, u]
        if np.isfinite(avail[k]).any():
            remaining -= 1
        avail[k] = -np.inf
    return _result(problem, Allocation.from_assignment(assignment), Status.HEURISTIC)


SOLVERS = {"oracle": brute_force, "exact": branch_and_bound, "greedy": greedy}


def solve(problem: AllocationProblem, method: str = "greedy") -> SolverResult:
    try:
        return SOLVERS[method](problem)
    except KeyError:
        raise ValueError(f"unknown solver {method!r}; choose from {sorted(SOLVERS)}") from None


@dataclass
class VerificationReport:
    ok: bool
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= _VERIFY_RTOL * max(1.0, abs(a), abs(b))


def verify_solution(problem: AllocationProblem, result: SolverResult) -> VerificationReport:
    """Certify C1-C7 for ``result`` against freshly recomputed values."""
    L, K, N, U = problem.contrib.shape
    bad: list[str] = []
    for k, l, n, u in result.allocation.entries:
        if not (0 <= k < K and 0 <= l < L and 0 <= n < N and 0 <= u < U):
            bad.append(f"C2: entry {(k, l, n, u)} out of range")
    if bad:
        return VerificationReport(False, bad)

    beta = result.allocation.beta(L, K, N, U)
    if np.any(beta > 1):
        bad.append("C2: a beta variable exceeds 1")
    per_k = beta.sum(axis=(0, 2, 3))
    for k in np.nonzero(per_k > 1)[0]:
        bad.append(f"C1: mirror {int(k)} assigned {int(per_k[k])} times")

    sel = result.selected_photodiode
    if len(sel) != U or any(not (0 <= int(n) < N) for n in sel):
        bad.append(f"C6/C7: need one photodiode index in [0, {N}) per user, got {sel}")
        return VerificationReport(False, bad)

    vals = problem.base + np.einsum("lknu,lknu->nu", beta, problem.contrib)
    big = big_m(problem)
    per_user = []
    for u in range(U):
        chosen = float(vals[sel[u], u])
        best = float(vals[:, u].max())
        if not _close(chosen, best):
            bad.append(f"C4/C5: user {u} selects photodiode {sel[u]} ({chosen:.6g}) "
                       f"but best is {best:.6g}")
        if chosen > big * (1 + _VERIFY_RTOL) + 1e-300:
            bad.append(f"C5: user {u} value {chosen:.6g} exceeds M={big:.6g}")
        per_user.append(chosen)
    for u, v in enumerate(per_user):
        if result.objective > v and not _close(result.objective, v):
            bad.append(f"C3: objective {result.objective:.6g} exceeds user {u} value {v:.6g}")
    if U and not _close(result.objective, min(per_user)):
        bad.append(f"C3: objective {result.objective:.6g} is not the minimum "
                   f"user value {min(per_user):.6g}")
    return VerificationReport(not bad, bad)
