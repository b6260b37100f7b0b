"""Per-example logistic regression via damped IRLS, Wald intervals, and
permutation testing of shape-bias differences.

The per-example model follows the repeated-measures design: the logit of a
correct classification is an intercept plus factor effects plus an effect of
the individual example. Examples that every network classifies correctly or
incorrectly (saturated) are removed by an explicit caller-facing step: they
leave factor estimates untouched but send per-example effects to infinity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr as _qr
from scipy.stats import norm as _norm

SEPARATION_NORM = 1e3


class RankDeficientError(ValueError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"weighted design is rank deficient; offending columns: {self.columns}")


@dataclass
class GlmFit:
    coef: np.ndarray
    names: list[str]
    stderr: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    diagnostic: str = ""

    def coef_by_name(self) -> dict[str, float]:
        return dict(zip(self.names, self.coef.tolist()))


def _log_likelihood(eta: np.ndarray, y: np.ndarray) -> float:
    # stable: log sigma(eta) = -log1p(exp(-eta))
    return float(-(np.logaddexp(0.0, -eta) * y + np.logaddexp(0.0, eta) * (1 - y)).sum())


def irls_logistic(
    design: np.ndarray,
    outcomes: np.ndarray,
    names: list[str] | None = None,
    max_iterations: int = 100,
    tolerance: float = 1e-8,
) -> GlmFit:
    """Newton/IRLS with step halving; never silently non-converged.

    Convergence requires the score (log-likelihood gradient) max-norm at the
    solution to fall below the tolerance. Complete separation is detected by
    the coefficient norm escaping past a fixed threshold and reported via the
    ``converged`` flag and diagnostic.
    """
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(outcomes, dtype=np.float64)
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("outcomes must be binary 0/1")
    if x.ndim != 2 or len(x) != len(y):
        raise ValueError(f"design {x.shape} incompatible with {len(y)} outcomes")
    n, d = x.shape
    if names is None:
        names = [f"x{i}" for i in range(d)]
    beta = np.zeros(d)
    ll = _log_likelihood(x @ beta, y)
    iterations = 0
    diagnostic = ""
    converged = False
    for iterations in range(1, max_iterations + 1):
        eta = x @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        w = np.clip(p * (1.0 - p), 1e-12, None)
        score = x.T @ (y - p)
        if np.abs(score).max() <= tolerance:
            if np.abs(y - p).max() < 1e-6:
                # every outcome fitted exactly: the MLE sits at infinity and
                # the score only vanished because the probabilities saturated
                diagnostic = (
                    "data are perfectly separated: fitted probabilities saturated "
                    "at 0/1, coefficients diverge"
                )
                break
            converged = True
            break
        h = (x.T * w) @ x
        try:
            step = np.linalg.solve(h, score)
        except np.linalg.LinAlgError:
            _, r, piv = _qr(x * np.sqrt(w)[:, None], mode="economic", pivoting=True)
            diag = np.abs(np.diag(r))
            rank = int((diag > diag.max() * 1e-10).sum()) if diag.size else 0
            offending = [names[j] for j in sorted(piv[rank:])]
            raise RankDeficientError(offending) from None
        # step halving keeps the likelihood monotone
        scale = 1.0
        for _ in range(30):
            candidate = beta + scale * step
            ll_new = _log_likelihood(x @ candidate, y)
            if ll_new >= ll - 1e-12:
                break
            scale *= 0.5
        beta = beta + scale * step
        ll = _log_likelihood(x @ beta, y)
        if np.abs(beta).max() > SEPARATION_NORM:
            diagnostic = (
                f"coefficient norm {np.abs(beta).max():.3g} exceeds {SEPARATION_NORM:g}: "
                "data are (quasi-)separable, estimates diverge"
            )
            break
    else:
        diagnostic = f"no convergence in {max_iterations} iterations"

    eta = x @ beta
    p = 1.0 / (1.0 + np.exp(-eta))
    w = np.clip(p * (1.0 - p), 1e-12, None)
    fisher = (x.T * w) @ x
    try:
        cov = np.linalg.inv(fisher)
        stderr = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except np.linalg.LinAlgError:
        stderr = np.full(d, np.nan)
    return GlmFit(
        coef=beta,
        names=list(names),
        stderr=stderr,
        converged=converged,
        iterations=iterations,
        log_likelihood=_log_likelihood(eta, y),
        diagnostic=diagnostic,
    )


def wald_ci(fit: GlmFit, level: float = 0.95) -> list[tuple[float, float]]:
    """estimate +/- z(level) * SE, from the inverse Fisher information."""
    if not fit.converged:
        raise ValueError(f"cannot compute Wald intervals on a non-converged fit: {fit.diagnostic}")
    if not 0.0 <= level < 1.0:
        raise ValueError("level must be in [0, 1)")
    z = _norm.ppf(0.5 + level / 2.0)
    return [(b - z * se, b + z * se) for b, se in zip(fit.coef, fit.stderr)]


# ---------------------------------------------------------------------------
# per-example designs
# ---------------------------------------------------------------------------

def drop_saturated_examples(records: list[dict]) -> tuple[list[dict], list]:
    """Remove examples whose outcome is constant across all records.

    Returns (kept records, dropped example ids). Factor estimates are
    unaffected by the drop; per-example effects for these examples would
    diverge during fitting.
    """
    outcomes: dict = {}
    for rec in records:
        outcomes.setdefault(rec["example"], set()).add(int(rec["outcome"]))
    dropped = sorted(ex for ex, vals in outcomes.items() if len(vals) == 1)
    kept = [rec for rec in records if rec["example"] not in set(dropped)]
    return kept, dropped


def build_example_design(records: list[dict], per_example_effects: bool = True):
    """Dummy-coded design: intercept, factor effects (reference = first
    level), optional per-example effects. Returns (X, y, names).

    Records are dicts with ``example``, ``outcome`` (0/1), and one entry per
    factor (e.g. architecture, objective).
    """
    if not records:
        raise ValueError("no records")
    factor_names = sorted(set(records[0]) - {"example", "outcome"})
    columns: list[np.ndarray] = [np.ones(len(records))]
    names = ["intercept"]
    for factor in factor_names:
        levels = sorted({str(rec[factor]) for rec in records})
        for level in levels[1:]:
            columns.append(np.array([1.0 if str(rec[factor]) == level else 0.0 for rec in records]))
            names.append(f"{factor}={level}")
    if per_example_effects:
        examples = sorted({rec["example"] for rec in records})
        for ex in examples[1:]:
            columns.append(np.array([1.0 if rec["example"] == ex else 0.0 for rec in records]))
            names.append(f"example={ex}")
    x = np.column_stack(columns)
    y = np.array([int(rec["outcome"]) for rec in records], dtype=np.float64)
    return x, y, names


# ---------------------------------------------------------------------------
# permutation test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PermutationResult:
    observed: float
    n_permutations: int
    p_value: float
    seed: int
    direction: str = "greater"


_MATCH_CODE = {"shape": 1, "texture": 2, "neither": 0}


def _codes(records: list[dict], order: list) -> np.ndarray:
    table = {rec["id"]: rec for rec in records}
    return np.array([_MATCH_CODE[table[i]["matched"]] for i in order], dtype=np.int8)


def _bias_from_codes(codes: np.ndarray, axis=None) -> np.ndarray:
    n_shape = (codes == 1).sum(axis=axis)
    n_texture = (codes == 2).sum(axis=axis)
    denom = n_shape + n_texture
    with np.errstate(invalid="ignore", divide="ignore"):
        bias = np.where(denom > 0, n_shape / np.maximum(denom, 1), 0.5)
    return bias


def permutation_test_bias(
    records_a: list[dict],
    records_b: list[dict],
    n_permutations: int = 1000,
    seed: int = 0,
    direction: str = "greater",
) -> PermutationResult:
    """Shape-bias difference (A - B) tested one-sidedly against a null built
    by swapping the A/B assignment per item independently with p = 1/2.

    Records are per-item decisions (``id`` + ``matched``) from bias reports;
    both sides must cover the same item ids. Replicates with no decided item
    score a neutral bias of 0.5. ``direction="greater"`` tests whether A's
    bias exceeds B's; ``"less"`` tests the opposite (equivalently, swap the
    arguments). The exchangeable unit is the item, recorded here rather than
    asserted as the source protocol's.
    """
    if direction not in ("greater", "less"):
        raise ValueError(f"unknown direction {direction!r}")
    ids_a = sorted(rec["id"] for rec in records_a)
    ids_b = sorted(rec["id"] for rec in records_b)
    if ids_a != ids_b:
        raise ValueError("records A and B cover different item ids")
    order = ids_a
    a = _codes(records_a, order)
    b = _codes(records_b, order)
    sign = 1.0 if direction == "greater" else -1.0
    observed = sign * float(_bias_from_codes(a) - _bias_from_codes(b))
    rng = np.random.default_rng([seed, 17])
    masks = rng.random((n_permutations, len(order))) < 0.5
    a_perm = np.where(masks, b, a)
    b_perm = np.where(masks, a, b)
    stats = sign * (_bias_from_codes(a_perm, axis=1) - _bias_from_codes(b_perm, axis=1))
    p = (1 + int((stats >= observed - 1e-15).sum())) / (1 + n_permutations)
    return PermutationResult(
        observed=observed,
        n_permutations=n_permutations,
        p_value=p,
        seed=seed,
        direction=direction,
    )
