from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import special, stats

from utils.dist_spec import (
    CategoricalSpec,
    FieldSpec,
    GenerationPlan,
    NumericalSpec,
    TextSpec,
)
from utils.errors import GenerationError, UniquenessExhausted
from utils.log import get_logger
from utils.rng import derive_field_seed, make_rng
from utils.schema import Table

logger = get_logger(__name__)

MAX_CARDINALITY = 2**63 - 1
MAX_CONSECUTIVE_COLLISIONS = 1000

_DIGITS = "0123456789"
_UPPER = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
_LOWER = "abcdefghijklmnopqrstuvwxyz"
CHARSETS = {
    "digits": _DIGITS,
    "upper": _UPPER,
    "lower": _LOWER,
    "alnum": _DIGITS + _UPPER + _LOWER,
    "hex": "0123456789abcdef",
}

# Keeps inverse CDFs finite at the ends of the unit interval
_U_EPS = 2.0**-53


def _saturate(value: int) -> int:
    return min(value, MAX_CARDINALITY)


def estimate_cardinality(pattern) -> int:
    """Distinct strings a pattern can emit (upper bound when one_of branches overlap)"""
    tag = pattern.tag
    if tag == "literal":
        return 1
    if tag == "one_of":
        return _saturate(sum(estimate_cardinality(branch) for branch in pattern.one_of.branches))
    if tag == "chars":
        body = pattern.chars
        base = len(CHARSETS[body.char_class])
        total = 0
        for length in range(body.min_len, body.max_len + 1):
            total += base**length
            if total >= MAX_CARDINALITY:
                return MAX_CARDINALITY
        return total
    if tag == "int_range":
        return _saturate(pattern.int_range.hi - pattern.int_range.lo + 1)
    if tag == "counter":
        return MAX_CARDINALITY
    if tag == "seq":
        product = 1
        for part in pattern.seq:
            product = _saturate(product * estimate_cardinality(part))
        return product
    raise ValueError(f"unknown pattern node {tag!r}")


# -- numerical -----------------------------------------------------------


def _inverse_cdf(distribution, u: np.ndarray) -> np.ndarray:
    params = distribution.params
    tag = distribution.tag
    u = np.clip(u, _U_EPS, 1.0 - _U_EPS)
    if tag == "uniform":
        return params.min + u * (params.max - params.min)
    if tag == "normal":
        return params.mean + params.std * special.ndtri(u)
    if tag == "lognormal":
        return np.exp(params.mu + params.sigma * special.ndtri(u))
    if tag == "exponential":
        return -np.log1p(-u) / params.rate
    if tag == "poisson":
        return stats.poisson.ppf(u, params.lam)
    if tag == "uniform_int":
        span = params.max - params.min + 1
        return np.minimum(params.min + np.floor(u * span), params.max)
    raise ValueError(f"unknown distribution {tag!r}")


def _round_within(value: float, scale: float, clamp: Optional[Tuple[float, float]]) -> float:
    """Round to a multiple of 1/scale, stepping inward when rounding crosses a clamp bound"""
    rounded = np.rint(value * scale) / scale
    if clamp is None:
        return rounded
    lo, hi = clamp
    if rounded < lo:
        rounded = np.ceil(lo * scale) / scale
    elif rounded > hi:
        rounded = np.floor(hi * scale) / scale
    if not lo <= rounded <= hi:
        # no grid point inside the clamp range
        return np.rint(value * scale) / scale
    return rounded


def _render_number(value: float, spec: NumericalSpec) -> str:
    rounding = spec.rounding
    if rounding == "integer" or (rounding == "none" and spec.is_discrete):
        return str(int(_round_within(value, 1.0, spec.clamp)))
    if rounding == "none":
        return repr(float(value))
    digits = rounding.decimals
    return f"{_round_within(value, 10.0 ** digits, spec.clamp) + 0.0:.{digits}f}"


def _sample_numerical(spec: NumericalSpec, rng: np.random.Generator, n: int) -> List[str]:
    draws = rng.random((n, 2))
    is_null = draws[:, 0] < spec.null_rate
    values = _inverse_cdf(spec.distribution, draws[:, 1])
    if spec.clamp is not None:
        values = np.clip(values, spec.clamp[0], spec.clamp[1])
    return ["" if null else _render_number(value, spec) for null, value in zip(is_null, values)]


# -- categorical ---------------------------------------------------------


def _sample_categorical(spec: CategoricalSpec, rng: np.random.Generator, n: int) -> List[str]:
    draws = rng.random((n, 2))
    is_null = draws[:, 0] < spec.null_rate
    cumulative = np.cumsum(spec.probabilities)
    picks = np.minimum(np.searchsorted(cumulative, draws[:, 1], side="right"), len(cumulative) - 1)
    values = spec.values
    return ["" if null else values[i] for null, i in zip(is_null, picks)]


# -- free text -----------------------------------------------------------


class _PatternRenderer:
    """Walks a pattern tree against one field stream; counters live per node"""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.counters: Dict[int, int] = {}

    def render(self, node) -> str:
        tag = node.tag
        if tag == "literal":
            return node.literal
        if tag == "seq":
            return "".join(self.render(part) for part in node.seq)
        if tag == "one_of":
            body = node.one_of
            u = self.rng.random()
            if body.weights is None:
                index = min(int(u * len(body.branches)), len(body.branches) - 1)
            else:
                cumulative = np.cumsum(body.weights)
                index = min(int(np.searchsorted(cumulative, u, side="right")), len(body.branches) - 1)
            return self.render(body.branches[index])
        if tag == "chars":
            body = node.chars
            charset = CHARSETS[body.char_class]
            length = body.min_len + min(int(self.rng.random() * (body.max_len - body.min_len + 1)), body.max_len - body.min_len)
            picks = np.minimum((self.rng.random(length) * len(charset)).astype(np.int64), len(charset) - 1)
            return "".join(charset[i] for i in picks)
        if tag == "int_range":
            body = node.int_range
            return str(int(self.rng.integers(body.lo, body.hi, endpoint=True)))
        if tag == "counter":
            body = node.counter
            key = id(node)
            value = body.start + self.counters.get(key, 0)
            self.counters[key] = self.counters.get(key, 0) + 1
            return f"{value:0{body.width}d}" if body.width else str(value)
        raise ValueError(f"unknown pattern node {tag!r}")


def _sample_text(spec: TextSpec, rng: np.random.Generator, n: int, field_name: str) -> List[str]:
    if spec.unique:
        cardinality = estimate_cardinality(spec.pattern)
        if cardinality < n:
            raise UniquenessExhausted(
                f"field {field_name!r}: unique pattern can produce only {cardinality} distinct values, {n} requested",
                field=field_name,
            )

    renderer = _PatternRenderer(rng)
    seen = set()
    out = []
    for _ in range(n):
        null_draw = rng.random()
        if not spec.unique and null_draw < spec.null_rate:
            out.append("")
            continue
        value = renderer.render(spec.pattern)
        if spec.unique:
            collisions = 0
            while value in seen:
                collisions += 1
                if collisions >= MAX_CONSECUTIVE_COLLISIONS:
                    raise UniquenessExhausted(
                        f"field {field_name!r}: {MAX_CONSECUTIVE_COLLISIONS} consecutive duplicate draws "
                        f"after {len(out)} unique values",
                        field=field_name,
                    )
                value = renderer.render(spec.pattern)
            seen.add(value)
        out.append(value)
    return out


def sample_field(spec: FieldSpec, seed: int, n: int, field_name: Optional[str] = None) -> List[str]:
    """Draw n cells for one field; deterministic in (spec, seed, n) and prefix-stable"""
    if n < 0:
        raise GenerationError("row count must be non-negative", field=field_name)
    name = field_name or spec.field_name
    if spec.placeholder:
        return [""] * n
    rng = make_rng(seed)
    body = spec.body
    if isinstance(body, NumericalSpec):
        return _sample_numerical(body, rng, n)
    if isinstance(body, CategoricalSpec):
        return _sample_categorical(body, rng, n)
    return _sample_text(body, rng, n, name)


def _sample_plan_field(plan: GenerationPlan, spec: FieldSpec, n: int) -> List[str]:
    seed = derive_field_seed(plan.master_seed, spec.field_name)
    try:
        return sample_field(spec, seed, n, field_name=spec.field_name)
    except GenerationError:
        raise
    except (ValueError, OverflowError) as e:
        raise GenerationError(f"field {spec.field_name!r}: {e}", field=spec.field_name)


def generate_dataset(plan: GenerationPlan, n: int, workers: int = 1) -> Table:
    """Sample every field of the plan; identical output for any worker count"""
    if workers <= 1:
        columns = [_sample_plan_field(plan, spec, n) for spec in plan.specs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            columns = list(pool.map(lambda spec: _sample_plan_field(plan, spec, n), plan.specs))
    logger.debug("dataset_sampled", fields=len(plan.specs), rows=n, workers=workers)
    return Table.from_columns(list(zip(plan.field_names, columns)))


__all__ = [
    "CHARSETS",
    "MAX_CARDINALITY",
    "MAX_CONSECUTIVE_COLLISIONS",
    "derive_field_seed",
    "estimate_cardinality",
    "generate_dataset",
    "sample_field",
]
