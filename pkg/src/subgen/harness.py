"""Reproducible experiment harness.

run_experiment ingests one synthetic stream per seed, answering every
token's query with the streaming sketch, and at logarithmically spaced
steps also answers it with each configured eviction baseline at a matched
memory budget, scoring everything against the exact-attention oracle. It
emits:

* metrics.csv  — seed, step, policy, spectral_error, vectors_stored,
  m_prime (byte-identical across reruns of the same config);
* timings.csv  — seed, step, policy, wall_time_ns (machine-dependent wall
  clock, quarantined here so metrics stay deterministic);
* summary.json — per-policy final-step error quantiles, memory counters,
  audit/distribution reports, and a boolean verdict per declared
  threshold.

Invariant audits replay every update against independent shadow state, and
distribution tests Monte-Carlo the two sampling distributions with fresh
seeds per trial.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python 3.10
    import tomli as _toml

from .attn import ExactCache, error_denominator, exact_attention, normalized_error
from .compressors import POLICY_KINDS, PolicyConfig, compress, query_compressed
from .rng import DOMAIN_TRIAL, derive_seed
from .streaming import AccuracyParams, SubGenState, derive_sizes
from .streamgen import StreamSpec, TokenStream, generate

AUDIT_LEVELS = ("off", "invariants", "distributions")
SKETCH_POLICY = "subgen"  # row label for the streaming sketch itself

_METRICS_HEADER = "seed,step,policy,spectral_error,vectors_stored,m_prime"
_TIMINGS_HEADER = "seed,step,policy,wall_time_ns"
_MAX_VIOLATIONS = 100
_MIN_TRIALS = 10_000


class ConfigError(ValueError):
    """Bad or inconsistent run configuration (CLI exit code 2)."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Thresholds:
    """Declared pass/fail gates, all optional.

    error_p90_max: sketch final-step p90 spectral error must not exceed it.
    compare_p50: sketch final-step median error must be strictly below each
    named policy's median. memory_max_vectors: sketch final-step
    vectors_stored must not exceed it (on any seed).
    """

    error_p90_max: Optional[float] = None
    compare_p50: tuple[str, ...] = ()
    memory_max_vectors: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "compare_p50", tuple(self.compare_p50))


@dataclass(frozen=True)
class RunConfig:
    stream: StreamSpec
    accuracy: AccuracyParams
    seeds: tuple[int, ...]
    policies: tuple[str, ...] = ("sink", "h2o_lite", "subgen_offline")
    audit_level: str = "off"
    output_dir: str = "runs"
    workers: int = 1
    distribution_trials: int = 20_000
    thresholds: Thresholds = field(default_factory=Thresholds)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "policies", tuple(self.policies))
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        if self.audit_level not in AUDIT_LEVELS:
            raise ConfigError(f"audit_level must be one of {AUDIT_LEVELS}")
        bad = [p for p in self.policies if p not in POLICY_KINDS]
        if bad:
            raise ConfigError(f"unknown policies {bad}; choose from {POLICY_KINDS}")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.audit_level == "distributions" and self.distribution_trials < _MIN_TRIALS:
            raise ConfigError(f"audit_level=distributions needs >= {_MIN_TRIALS} trials")
        missing = [p for p in self.thresholds.compare_p50 if p not in self.policies]
        if missing:
            raise ConfigError(f"compare_p50 references policies not being run: {missing}")


def _build_section(name: str, cls, table: Mapping) -> object:
    try:
        return cls(**table)
    except TypeError as exc:  # unknown/missing keys
        raise ConfigError(f"[{name}]: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"[{name}]: {exc}") from None


def load_config(path, overrides: Optional[Mapping] = None) -> RunConfig:
    """Parse a TOML config file and apply CLI-style overrides.

    Sections: [stream] (StreamSpec fields; seed optional), [accuracy]
    (AccuracyParams fields), [run] (seeds, policies, audit_level,
    output_dir, workers, distribution_trials), [thresholds]. Override keys:
    n, epsilon, seeds, output_dir, audit_level, policies.
    """
    try:
        with open(path, "rb") as fh:
            data = _toml.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None

    known = {"stream", "accuracy", "run", "thresholds"}
    stray = set(data) - known
    if stray:
        raise ConfigError(f"unknown config sections {sorted(stray)}")
    for section in ("stream", "accuracy"):
        if section not in data:
            raise ConfigError(f"missing [{section}] section")

    stream_tbl = dict(data["stream"])
    accuracy_tbl = dict(data["accuracy"])
    run_tbl = dict(data.get("run", {}))
    thresh_tbl = dict(data.get("thresholds", {}))
    stream_tbl.setdefault("seed", 0)

    overrides = dict(overrides or {})
    if overrides.get("n") is not None:
        stream_tbl["n"] = overrides["n"]
    if overrides.get("epsilon") is not None:
        accuracy_tbl["epsilon"] = overrides["epsilon"]
    for key in ("seeds", "output_dir", "audit_level", "policies"):
        if overrides.get(key) is not None:
            run_tbl[key] = overrides[key]

    if "seeds" not in run_tbl:
        raise ConfigError("no seeds given ([run] seeds or --seed)")

    stream = _build_section("stream", StreamSpec, stream_tbl)
    accuracy = _build_section("accuracy", AccuracyParams, accuracy_tbl)
    thresholds = _build_section("thresholds", Thresholds, thresh_tbl)
    return _build_section("run", partial(RunConfig, stream, accuracy, thresholds=thresholds), run_tbl)


# ---------------------------------------------------------------------------
# per-step records


@dataclass(frozen=True)
class MetricsRow:
    seed: int
    step: int
    policy: str
    spectral_error: float
    vectors_stored: int
    m_prime: int
    wall_time_ns: int


@dataclass(frozen=True)
class StepMetrics:
    """All policies' measurements at one (seed, step), grouped."""

    step: int
    spectral_error: dict
    vectors_stored: dict
    wall_time_ns: dict
    m_prime: int

    @classmethod
    def from_rows(cls, rows: Sequence[MetricsRow]) -> "StepMetrics":
        if not rows or len({(r.seed, r.step) for r in rows}) != 1:
            raise ValueError("rows must share one (seed, step)")
        return cls(
            step=rows[0].step,
            spectral_error={r.policy: r.spectral_error for r in rows},
            vectors_stored={r.policy: r.vectors_stored for r in rows},
            wall_time_ns={r.policy: r.wall_time_ns for r in rows},
            m_prime=rows[0].m_prime,
        )


def step_schedule(n: int) -> list[int]:
    """Powers of two up to n, plus n itself."""
    if n < 1:
        raise ValueError("n must be positive")
    steps = [1 << j for j in range(n.bit_length()) if (1 << j) <= n]
    if steps[-1] != n:
        steps.append(n)
    return steps


def matched_policy_config(kind: str, token_budget: int, n_step: int) -> PolicyConfig:
    """A policy's knob split for a given retained-token budget.

    sink protects up to 4 prefix tokens and spends the rest on recency;
    h2o_lite and subgen_offline split half recency, half scores/centers.
    exact ignores budgets.
    """
    if kind == "exact":
        return PolicyConfig("exact", budget=max(n_step, 1))
    b = max(token_budget, 1)
    if kind == "sink":
        prefix = min(4, max(1, b // 2))
        return PolicyConfig("sink", budget=b, sink_prefix=prefix, recent_r=b - prefix)
    if kind == "h2o_lite":
        return PolicyConfig("h2o_lite", budget=b, recent_r=b // 2)
    if kind == "subgen_offline":
        half = b // 2
        return PolicyConfig("subgen_offline", budget=b, k_centers=half, recent_r=b - half)
    raise ConfigError(f"unknown policy kind {kind!r}")


# ---------------------------------------------------------------------------
# invariant audit


@dataclass(frozen=True)
class Violation:
    step: int
    invariant: str
    detail: str


@dataclass
class AuditReport:
    steps: int
    m_prime: int
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {
            "steps": self.steps,
            "m_prime": self.m_prime,
            "ok": self.ok,
            "violations": [
                {"step": v.step, "invariant": v.invariant, "detail": v.detail}
                for v in self.violations
            ],
        }


class InvariantAuditor:
    """Replays every update against shadow state and records violations.

    Checked invariants (ids appear in reports):
      mass-sum          running mu matches an independent Σ‖v‖² (1e-6 rel)
      count-shadow      per-cluster counts match a replayed assignment rule
      count-sum         cluster counts sum to the number of tokens
      reservoir-radius  reservoir rows lie within delta (+1e-9) of center
      center-separation pairwise center distances exceed delta − 1e-9
      cluster-bound     cluster count never exceeds the declared class count
      sampler-state     filled flag and slot norms consistent with contents
    """

    def __init__(self, delta: float, max_clusters: Optional[int] = None):
        self.delta = delta
        self.max_clusters = max_clusters
        self.shadow_counts: list[int] = []
        self.shadow_mass = 0.0
        self.violations: list[Violation] = []
        self.steps = 0
        self._expected: Optional[int] = None

    def _flag(self, invariant: str, detail: str) -> None:
        if len(self.violations) < _MAX_VIOLATIONS:
            self.violations.append(Violation(self.steps, invariant, detail))

    def before(self, state: SubGenState, k: np.ndarray) -> None:
        """Record the assignment the admission rule must make for key k."""
        nz = state.normalizer
        if nz.m == 0:
            self._expected = None
            return
        diffs = nz.centers - k
        dist2 = np.einsum("md,md->m", diffs, diffs)
        i = int(np.argmin(dist2))
        self._expected = i if dist2[i] <= self.delta * self.delta else None

    def after(self, state: SubGenState, k: np.ndarray, v: np.ndarray) -> None:
        nz = state.normalizer
        if self._expected is None:
            self.shadow_counts.append(1)
            last = nz.m - 1
            if not np.array_equal(nz.centers[last], k):
                self._flag("count-shadow", f"new cluster center is not the arriving key at index {last}")
            if nz.m >= 2:
                gaps = np.linalg.norm(nz.centers[:last] - nz.centers[last], axis=1)
                worst = float(gaps.min())
                if worst <= self.delta - 1e-9:
                    self._flag("center-separation", f"new center within {worst:.3g} of an old one")
        else:
            self.shadow_counts[self._expected] += 1
        if nz.m != len(self.shadow_counts):
            self._flag("count-shadow", f"cluster count {nz.m} != replayed {len(self.shadow_counts)}")
        elif not np.array_equal(nz.counts, np.asarray(self.shadow_counts, dtype=float)):
            self._flag("count-shadow", "per-cluster counts diverged from replayed assignment")

        self.shadow_mass += float(np.sum(v * v))
        self.steps += 1
        touched = self._expected if self._expected is not None else nz.m - 1
        radius = np.linalg.norm(nz.reservoirs[touched] - nz.centers[touched], axis=1)
        worst = float(radius.max())
        if worst > self.delta + 1e-9:
            self._flag("reservoir-radius", f"cluster {touched} holds a sample at distance {worst:.3g}")
        self._check_global(state)

    def _check_global(self, state: SubGenState) -> None:
        nz = state.normalizer
        total = float(nz.counts.sum())
        if total != float(self.steps):
            self._flag("count-sum", f"counts sum to {total:g}, expected {self.steps}")
        if self.max_clusters is not None and nz.m > self.max_clusters:
            self._flag("cluster-bound", f"{nz.m} clusters > declared bound {self.max_clusters}")
        mu = state.mu
        if abs(mu - self.shadow_mass) > 1e-6 * max(self.shadow_mass, 1e-300):
            self._flag("mass-sum", f"mu={mu!r} vs shadow {self.shadow_mass!r}")
        sampler = state.sampler
        if sampler.filled != (mu > 0.0):
            self._flag("sampler-state", f"filled={sampler.filled} but mu={mu!r}")
        if sampler.filled:
            norms = np.einsum("sd,sd->s", sampler.values, sampler.values)
            if np.any(sampler.vnorm2 <= 0.0) or np.any(
                np.abs(norms - sampler.vnorm2) > 1e-12 * np.maximum(norms, 1e-300)
            ):
                self._flag("sampler-state", "slot squared norms inconsistent with slot values")

    def final_scan(self, state: SubGenState) -> None:
        """Full-sweep checks over the final state (not just touched rows)."""
        nz = state.normalizer
        for i in range(nz.m):
            radius = np.linalg.norm(nz.reservoirs[i] - nz.centers[i], axis=1)
            if float(radius.max()) > self.delta + 1e-9:
                self._flag("reservoir-radius", f"cluster {i} sample out of range in final sweep")
        if nz.m >= 2:
            diffs = nz.centers[:, None, :] - nz.centers[None, :, :]
            dist = np.sqrt(np.einsum("ijd,ijd->ij", diffs, diffs))
            iu = np.triu_indices(nz.m, k=1)
            worst = float(dist[iu].min())
            if worst <= self.delta - 1e-9:
                self._flag("center-separation", f"final centers only {worst:.3g} apart")
        self._check_global(state)

    def report(self, state: SubGenState) -> AuditReport:
        return AuditReport(steps=self.steps, m_prime=state.m_prime, violations=list(self.violations))


def audit_stream(
    token_stream: TokenStream,
    t: int,
    s: int,
    delta: float,
    seed: int,
    max_clusters: Optional[int] = None,
) -> AuditReport:
    """Ingest a whole stream, checking every invariant after every token."""
    state = SubGenState(token_stream.d, t, s, delta, seed)
    auditor = InvariantAuditor(delta, max_clusters=max_clusters)
    for i in range(len(token_stream)):
        k, v = token_stream.keys[i], token_stream.values[i]
        auditor.before(state, k)
        state.ingest(k, v)
        auditor.after(state, k, v)
    auditor.final_scan(state)
    return auditor.report(state)


# ---------------------------------------------------------------------------
# distribution tests


@dataclass(frozen=True)
class DistributionReport:
    kind: str
    trials: int
    tv_distance: float
    target: tuple
    empirical: tuple

    @property
    def ok(self) -> bool:
        return self.tv_distance <= 0.02

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "trials": self.trials,
            "tv_distance": self.tv_distance,
            "target": list(self.target),
            "empirical": list(self.empirical),
            "ok": self.ok,
        }


def distribution_test(
    kind: str,
    trials: int,
    seed: int = 0,
    weights: Optional[Sequence[float]] = None,
    pattern: Optional[str] = None,
) -> DistributionReport:
    """Monte-Carlo check of a sampling distribution against its target.

    kind="sampler": a fixed stream whose squared value norms are `weights`
    (default 1,2,3,4); slots must hold token i with probability
    weights[i]/Σweights. kind="reservoir": keys follow `pattern` (default
    "aab", all within one admission radius); reservoir slots must be
    uniform over the members, so P(b) = (#b)/len(pattern). Each trial
    reruns the stream under a fresh derived seed; slots are pooled across
    trials and the total-variation gap to the target must be ≤ 0.02.
    """
    if trials < _MIN_TRIALS:
        raise ValueError(f"trials must be >= {_MIN_TRIALS}")
    if kind == "sampler":
        w = np.asarray(weights if weights is not None else (1.0, 2.0, 3.0, 4.0), dtype=float)
        if w.ndim != 1 or len(w) < 1 or np.any(w <= 0):
            raise ValueError("weights must be positive")
        keys = np.zeros((len(w), 2))
        keys[:, 0] = np.arange(len(w))
        values = np.zeros((len(w), 2))
        values[:, 0] = np.sqrt(w)
        # What each slot will literally store: the fp square of each row.
        stored_nv2 = np.array([float(row @ row) for row in values])
        if np.unique(stored_nv2).size != len(w):
            raise ValueError("weights must be distinguishable")
        s = 4
        counts = np.zeros(len(w))
        for trial in range(trials):
            state = SubGenState(2, 1, s, 1.0, derive_seed(seed, DOMAIN_TRIAL, trial))
            for i in range(len(w)):
                state.ingest(keys[i], values[i])
            counts += (state.sampler.vnorm2[None, :] == stored_nv2[:, None]).sum(axis=1)
        target = w / w.sum()
        empirical = counts / counts.sum()
    elif kind == "reservoir":
        pat = pattern if pattern is not None else "aab"
        if not pat or set(pat) - {"a", "b"}:
            raise ValueError("pattern must be a nonempty string over {a, b}")
        key_of = {"a": np.array([0.0, 0.0]), "b": np.array([0.9, 0.0])}
        t = 3
        hits = np.zeros(2)  # tallies for a, b
        for trial in range(trials):
            state = SubGenState(2, t, 1, 1.0, derive_seed(seed, DOMAIN_TRIAL, trial))
            for ch in pat:
                state.ingest(key_of[ch], np.array([1.0, 0.0]))
            is_b = state.normalizer.reservoirs[0][:, 0] > 0.5
            hits[1] += int(is_b.sum())
            hits[0] += t - int(is_b.sum())
        target = np.array([pat.count("a") / len(pat), pat.count("b") / len(pat)])
        empirical = hits / hits.sum()
    else:
        raise ValueError("kind must be 'sampler' or 'reservoir'")
    tv = 0.5 * float(np.abs(empirical - target).sum())
    return DistributionReport(
        kind=kind,
        trials=trials,
        tv_distance=tv,
        target=tuple(float(x) for x in target),
        empirical=tuple(float(x) for x in empirical),
    )


# ---------------------------------------------------------------------------
# the experiment itself


@dataclass
class SeedResult:
    rows: list[MetricsRow]
    audit: Optional[AuditReport]
    query_norm_violations: int
    saturated: dict  # policy -> #steps where the budget covered the prefix


def _declared_classes(token_stream: TokenStream, spec: StreamSpec) -> int:
    labels = token_stream.labels
    return len({(int(a), int(b)) for a, b in labels}) if spec.drift > 0 else spec.m


def _run_seed(cfg: RunConfig, seed: int) -> SeedResult:
    spec = replace(cfg.stream, seed=seed)
    token_stream = generate(spec)
    t, s = derive_sizes(cfg.accuracy, spec.d)
    state = SubGenState(spec.d, t, s, cfg.accuracy.delta, seed)
    auditor = None
    if cfg.audit_level != "off":
        auditor = InvariantAuditor(cfg.accuracy.delta, max_clusters=_declared_classes(token_stream, spec))

    qnorms = np.linalg.norm(token_stream.queries, axis=1)
    violations = int(np.sum(qnorms > cfg.accuracy.r * (1.0 + 1e-12)))

    cache = ExactCache(spec.d)
    schedule = step_schedule(len(token_stream))
    next_at = 0
    rows: list[MetricsRow] = []
    saturated = {p: 0 for p in cfg.policies}

    for i in range(len(token_stream)):
        q = token_stream.queries[i]
        k = token_stream.keys[i]
        v = token_stream.values[i]
        if auditor is not None:
            auditor.before(state, k)
        t0 = time.perf_counter_ns()
        z = state.process(q, k, v)
        t1 = time.perf_counter_ns()
        cache.append(k, v)
        if auditor is not None:
            auditor.after(state, k, v)

        step = i + 1
        if step != schedule[next_at]:
            continue
        next_at += 1
        reference = exact_attention(cache, q)
        denom = error_denominator(cache, q)
        footprint = state.memory_footprint()
        rows.append(
            MetricsRow(
                seed=seed,
                step=step,
                policy=SKETCH_POLICY,
                spectral_error=normalized_error(float(np.linalg.norm(z - reference)), denom),
                vectors_stored=footprint.vectors_stored,
                m_prime=state.m_prime,
                wall_time_ns=t1 - t0,
            )
        )
        token_budget = footprint.vectors_stored // 2
        for kind in cfg.policies:
            pcfg = matched_policy_config(kind, token_budget, step)
            t2 = time.perf_counter_ns()
            history = token_stream.queries[:step] if kind == "h2o_lite" else None
            rc = compress(cache, pcfg, queries=history)
            answer = query_compressed(rc, q)
            t3 = time.perf_counter_ns()
            if kind != "exact" and step <= pcfg.budget:
                saturated[kind] += 1
            rows.append(
                MetricsRow(
                    seed=seed,
                    step=step,
                    policy=kind,
                    spectral_error=normalized_error(float(np.linalg.norm(answer - reference)), denom),
                    vectors_stored=2 * len(rc),
                    m_prime=state.m_prime,
                    wall_time_ns=t3 - t2,
                )
            )

    audit = None
    if auditor is not None:
        auditor.final_scan(state)
        audit = auditor.report(state)
    return SeedResult(rows=rows, audit=audit, query_norm_violations=violations, saturated=saturated)


def _quantiles(errors: Sequence[float]) -> dict:
    arr = np.asarray(errors, dtype=float)
    p50, p90, p99 = (float(x) for x in np.quantile(arr, [0.5, 0.9, 0.99]))
    return {"p50": p50, "p90": p90, "p99": p99}


def summarize(rows: Sequence[MetricsRow], cfg: RunConfig, extras: dict) -> dict:
    """Aggregate rows into the machine-readable summary (a pure function)."""
    final_step = max(r.step for r in rows)
    t, s = derive_sizes(cfg.accuracy, cfg.stream.d)
    policies = {}
    order = [SKETCH_POLICY, *cfg.policies]
    for name in order:
        finals = [r.spectral_error for r in rows if r.policy == name and r.step == final_step]
        vectors = [r.vectors_stored for r in rows if r.policy == name and r.step == final_step]
        policies[name] = {
            **_quantiles(finals),
            "final_vectors_stored_max": max(vectors),
            "rows": sum(1 for r in rows if r.policy == name),
        }

    gates: dict[str, dict] = {}
    th = cfg.thresholds
    if th.error_p90_max is not None:
        observed = policies[SKETCH_POLICY]["p90"]
        gates["error_p90_max"] = {
            "limit": th.error_p90_max,
            "observed": observed,
            "pass": bool(observed <= th.error_p90_max),
        }
    for rival in th.compare_p50:
        ours, theirs = policies[SKETCH_POLICY]["p50"], policies[rival]["p50"]
        gates[f"compare_p50:{rival}"] = {
            "sketch_p50": ours,
            "rival_p50": theirs,
            "pass": bool(ours < theirs),
        }
    if th.memory_max_vectors is not None:
        observed = policies[SKETCH_POLICY]["final_vectors_stored_max"]
        gates["memory_max_vectors"] = {
            "limit": th.memory_max_vectors,
            "observed": observed,
            "pass": bool(observed <= th.memory_max_vectors),
        }
    if "audit" in extras:
        gates["audit"] = {"pass": bool(extras["audit"]["ok"])}
    if "distributions" in extras:
        gates["distributions"] = {
            "pass": all(rep["ok"] for rep in extras["distributions"].values())
        }

    summary = {
        "config": {
            "n": cfg.stream.n,
            "d": cfg.stream.d,
            "m": cfg.stream.m,
            "delta": cfg.stream.delta,
            "drift": cfg.stream.drift,
            "epsilon": cfg.accuracy.epsilon,
            "t": t,
            "s": s,
            "seeds": list(cfg.seeds),
            "policies": list(cfg.policies),
            "audit_level": cfg.audit_level,
        },
        "final_step": final_step,
        "policies": policies,
        "m_prime_final_max": max(r.m_prime for r in rows if r.step == final_step),
        "thresholds": gates,
        "pass": all(g["pass"] for g in gates.values()),
        **extras,
    }
    return summary


def _format_value(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_outputs(rows: Sequence[MetricsRow], summary: dict, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    timings_path = out / "timings.csv"
    summary_path = out / "summary.json"
    with open(metrics_path, "w") as fh:
        fh.write(_METRICS_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.seed},{r.step},{r.policy},{_format_value(r.spectral_error)},"
                f"{r.vectors_stored},{r.m_prime}\n"
            )
    with open(timings_path, "w") as fh:
        fh.write(_TIMINGS_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.seed},{r.step},{r.policy},{r.wall_time_ns}\n")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"metrics": metrics_path, "timings": timings_path, "summary": summary_path}


@dataclass
class ExperimentResult:
    rows: list[MetricsRow]
    summary: dict
    paths: dict
    passed: bool


def run_experiment(cfg: RunConfig) -> ExperimentResult:
    """Execute every seed, write CSVs + summary, and report the verdict."""
    runner = partial(_run_seed, cfg)
    if cfg.workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(runner, cfg.seeds))
    else:
        results = [runner(seed) for seed in cfg.seeds]

    rows = [row for res in results for row in res.rows]
    extras: dict = {
        "query_norm_violations": sum(r.query_norm_violations for r in results),
        "budget_matching_saturated_steps": {
            p: sum(r.saturated[p] for r in results) for p in cfg.policies
        },
    }
    if cfg.audit_level != "off":
        all_violations = [v for r in results if r.audit for v in r.audit.violations]
        extras["audit"] = {
            "ok": not all_violations,
            "violations": len(all_violations),
            "first": (
                {
                    "step": all_violations[0].step,
                    "invariant": all_violations[0].invariant,
                    "detail": all_violations[0].detail,
                }
                if all_violations
                else None
            ),
            "m_prime_per_seed": [r.audit.m_prime for r in results if r.audit],
        }
    if cfg.audit_level == "distributions":
        extras["distributions"] = {
            kind: distribution_test(kind, cfg.distribution_trials, seed=cfg.seeds[0]).as_dict()
            for kind in ("sampler", "reservoir")
        }

    summary = summarize(rows, cfg, extras)
    paths = write_outputs(rows, summary, cfg.output_dir)
    return ExperimentResult(rows=rows, summary=summary, paths=paths, passed=bool(summary["pass"]))
