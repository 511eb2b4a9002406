"""Equilibrium measures and averaged rates.

Reduction replaces every faster tier by its equilibrium: molecule
positions by movement equilibria and their multinomial/point-mass
product measures, fast subsystems by stationary measures. Slow-reaction
rates are then integrated against those measures, in closed form where
the structure allows it and by time-averaged Monte Carlo otherwise,
always with a reported standard error.

The closed forms rest on two factorial-moment identities: a Poisson
variable with mean m has E[x(x-1)...(x-n+1)] = m^n, and a Binomial(s, p)
count has E[x(x-1)...(x-n+1)] = s(s-1)...(s-n+1) p^n. Both mesh exactly
with the mixed mass-action form, where discrete species enter through
falling factorials and continuous species through plain powers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import rng as rng_mod
from .classify import ScaleClassification, ConservedBasis
from .errors import (AnalyticUnavailable, IsolatedSpeciesError, ModelError,
                     NonErgodicSuspected, NotMassAction, RateEvaluationError)
from .exact import stationary_distribution
from .model import (Expression, MassAction, Network, SpatialModel,
                    falling_factorial, scaled_rate_function)
from .pdmp import OdeConfig, simulate_conditional_fast, simulate_pdmp, HybridSystem


# ---------------------------------------------------------------------------
# movement equilibria and product measures


@dataclass(frozen=True)
class MovementEquilibrium:
    """Stationary law of one molecule's compartment-hopping chain."""

    species: int
    pi: tuple[Fraction, ...]

    def as_floats(self) -> np.ndarray:
        return np.array([float(p) for p in self.pi])


def movement_equilibrium(spatial_model: SpatialModel, species: int) -> MovementEquilibrium:
    """Solve pi Q = 0, sum pi = 1 exactly for the species' movement rates."""
    nd = spatial_model.n_compartments
    if nd == 1:
        return MovementEquilibrium(species, (Fraction(1),))
    rates = spatial_model.movement[species]
    pi = stationary_distribution([[rates[i][j] for j in range(nd)] for i in range(nd)])
    return MovementEquilibrium(species, tuple(pi))


def all_movement_equilibria(spatial_model: SpatialModel) -> list[MovementEquilibrium]:
    return [movement_equilibrium(spatial_model, i)
            for i in range(spatial_model.network.n_species)]


class ProductMeasure:
    """Joint equilibrium of molecule positions given species totals.

    Discrete species (alpha = 0) spread multinomially over compartments,
    continuous species sit deterministically at pi-proportional shares.
    Exposes a sampler and, for small supports, an exact summation
    iterator over (positions, probability) pairs.
    """

    def __init__(self, species: tuple[int, ...], totals, pis, alphas):
        self.species = tuple(species)
        self.totals = np.asarray(totals, dtype=float)
        self.pis = [np.asarray(p, dtype=float) for p in pis]
        self.alphas = tuple(alphas)
        if len(self.species) != len(self.totals) or len(self.pis) != len(self.totals):
            raise ModelError("product measure needs totals and equilibria per species")
        for j, a in enumerate(self.alphas):
            if a == 0 and self.totals[j] != round(self.totals[j]):
                raise ModelError("discrete totals must be integers")

    @property
    def n_compartments(self) -> int:
        return len(self.pis[0])

    def mean_matrix(self) -> np.ndarray:
        """Expected counts per (species, compartment)."""
        return np.array([self.totals[j] * self.pis[j] for j in range(len(self.species))])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((len(self.species), self.n_compartments))
        for j, a in enumerate(self.alphas):
            if a == 0:
                out[j] = rng.multinomial(int(self.totals[j]), self.pis[j])
            else:
                out[j] = self.totals[j] * self.pis[j]
        return out

    def support_size(self) -> float:
        size = 1.0
        nd = self.n_compartments
        for j, a in enumerate(self.alphas):
            if a == 0:
                size *= math.comb(int(self.totals[j]) + nd - 1, nd - 1)
        return size

    def support(self, cap: float = 1_000_000.0):
        """Iterate (positions matrix, probability); None when too large."""
        if self.support_size() > cap:
            return None
        nd = self.n_compartments
        return self._support_rec(0, np.zeros((len(self.species), nd)), 1.0)

    def _support_rec(self, j, matrix, prob):
        if j == len(self.species):
            yield matrix.copy(), prob
            return
        if self.alphas[j] != 0:
            matrix[j] = self.totals[j] * self.pis[j]
            yield from self._support_rec(j + 1, matrix, prob)
            return
        total = int(self.totals[j])
        pj = self.pis[j]
        for combo, p in _multinomial_support(total, pj):
            matrix[j] = combo
            yield from self._support_rec(j + 1, matrix, prob * p)


def _multinomial_support(total: int, probs: np.ndarray):
    nd = len(probs)

    def rec(pos, remaining, combo, coeff):
        if pos == nd - 1:
            combo[pos] = remaining
            p = coeff * math.comb(sum(combo[:pos]) + remaining, remaining) \
                * probs[pos] ** remaining
            yield list(combo), p
            return
        for n in range(remaining + 1):
            combo[pos] = n
            yield from rec(pos + 1, remaining - n, combo,
                           coeff * math.comb(sum(combo[:pos + 1]), n) * probs[pos] ** n)

    # probability of a composition (n_1..n_D): total!/(prod n_d!) prod p^n;
    # built incrementally through binomial factors
    yield from rec(0, total, [0] * nd, 1.0)


def product_measure(spatial_model: SpatialModel, totals,
                    species: tuple[int, ...] | None = None,
                    equilibria: list[MovementEquilibrium] | None = None) -> ProductMeasure:
    network = spatial_model.network
    if species is None:
        species = tuple(range(network.n_species))
    if equilibria is None:
        equilibria = [movement_equilibrium(spatial_model, i) for i in species]
    pis = [eq.as_floats() for eq in equilibria]
    alphas = [network.species[i].alpha for i in species]
    return ProductMeasure(species, totals, pis, alphas)


# ---------------------------------------------------------------------------
# stationary measures of fast subsystems


@dataclass(frozen=True)
class StationaryComponent:
    kind: str    # 'poisson' | 'dirac'
    mean: float

    def factorial_moment(self, n: int) -> float:
        """E of the falling factorial (poisson) / plain power (dirac)."""
        return self.mean ** n

    def raw_moment(self, n: int) -> float:
        if self.kind == "dirac" or n <= 1:
            return self.mean ** n
        # Touchard: E[X^n] = sum_k S(n, k) m^k for X ~ Poisson(m)
        return sum(_stirling2(n, k) * self.mean ** k for k in range(n + 1))


def _stirling2(n: int, k: int) -> int:
    if k in (0, n):
        return 1 if n == k else (1 if n == 0 else 0)
    if k > n or k == 0:
        return 0
    return k * _stirling2(n - 1, k) + _stirling2(n - 1, k - 1)


@dataclass(frozen=True)
class MultinomialBlock:
    """Constrained stationary law of a closed unary-conversion block: the
    conserved total spreads multinomially over the block's species."""

    positions: tuple[int, ...]      # variable indices within the fast state
    total: float
    probs: tuple[float, ...]


class StationaryMeasure:
    """Stationary law of a fast subsystem in one of three shapes.

    variant 'product': independent per-variable components (Poisson for
    discrete, point mass for continuous), optionally with multinomial
    blocks for conserved unary-conversion groups. variant 'pointmass':
    a single state. variant 'empirical': time-averaged weighted samples
    with batch structure for standard errors.
    """

    def __init__(self, variant: str, *, components=None, blocks=None, point=None,
                 batches=None, ess=None, n_events=None, dim=None):
        self.variant = variant
        self.components: tuple[StationaryComponent, ...] | None = components
        self.blocks: tuple[MultinomialBlock, ...] = tuple(blocks or ())
        self.point = None if point is None else np.asarray(point, dtype=float)
        self.batches = batches   # list[dict[state tuple -> time weight]]
        self.ess = ess
        self.n_events = n_events
        self._dim = dim

    @property
    def dim(self) -> int:
        if self._dim is not None:
            return self._dim
        if self.components is not None:
            return len(self.components)
        if self.point is not None:
            return len(self.point)
        raise ModelError("measure has no dimension")

    # -- expectations ------------------------------------------------------

    def mean_vector(self) -> np.ndarray:
        if self.variant == "pointmass":
            return self.point.copy()
        if self.variant == "product":
            out = np.array([c.mean for c in self.components])
            for block in self.blocks:
                for pos, p in zip(block.positions, block.probs):
                    out[pos] = block.total * p
            return out
        value, _ = self.expect(lambda z: np.asarray(z, dtype=float))
        return value

    def expect(self, fn):
        """(E[fn], standard error); fn maps a state vector to a float or array."""
        if self.variant == "pointmass":
            return fn(self.point), 0.0
        if self.variant == "empirical":
            return self._expect_empirical(fn)
        return self._expect_product_sampling(fn)

    def expect_mass_action(self, coeff: float, orders) -> tuple[float, float]:
        """Closed-form expectation of coeff * prod fall-fact/power terms.

        ``orders[j]`` is the reactant multiplicity on fast variable j;
        discrete variables contribute falling factorials and continuous
        ones plain powers, matching the component kinds exactly.
        """
        orders = np.asarray(orders, dtype=int)
        if self.variant == "pointmass":
            out = coeff
            for j, n in enumerate(orders):
                if n:
                    out *= self.point[j] ** n
            return out, 0.0
        if self.variant == "product":
            out = coeff
            in_block = {}
            for b, block in enumerate(self.blocks):
                for pos in block.positions:
                    in_block[pos] = b
            block_orders: dict[int, list] = {}
            for j, n in enumerate(orders):
                if not n:
                    continue
                if j in in_block:
                    block_orders.setdefault(in_block[j], []).append((j, n))
                else:
                    out *= self.components[j].factorial_moment(n)
            for b, entries in block_orders.items():
                block = self.blocks[b]
                total_order = sum(n for _, n in entries)
                out *= falling_factorial(block.total, total_order)
                for j, n in entries:
                    p = block.probs[block.positions.index(j)]
                    out *= p ** n
            return out, 0.0
        value, se = self._expect_empirical(
            lambda z: _mass_action_term(coeff, orders, z, self._discrete_mask))
        return value, se

    def _expect_empirical(self, fn):
        means = []
        weights = []
        for batch in self.batches:
            wsum = 0.0
            acc = None
            for state, w in batch.items():
                value = fn(np.asarray(state, dtype=float))
                acc = value * w if acc is None else acc + value * w
                wsum += w
            if wsum > 0:
                means.append(acc / wsum)
                weights.append(wsum)
        if not means:
            raise NonErgodicSuspected("no post-burn-in samples")
        means = np.asarray(means, dtype=float)
        weights = np.asarray(weights)
        value = np.tensordot(weights, means, axes=(0, 0)) / weights.sum()
        if len(means) > 1:
            se = means.std(axis=0, ddof=1) / math.sqrt(len(means))
        else:
            se = np.abs(means[0]) * 0 + math.inf
        return value, se

    def _expect_product_sampling(self, fn, draws: int = 4096, seed: int = 1234):
        rng = rng_mod.stream(seed)
        dim = self.dim
        samples = np.empty((draws, dim))
        for j, comp in enumerate(self.components):
            if comp.kind == "poisson":
                samples[:, j] = rng.poisson(comp.mean, size=draws)
            else:
                samples[:, j] = comp.mean
        for block in self.blocks:
            counts = rng.multinomial(int(block.total), block.probs, size=draws)
            for idx, pos in enumerate(block.positions):
                samples[:, pos] = counts[:, idx]
        values = np.array([fn(s) for s in samples])
        return values.mean(axis=0), values.std(axis=0, ddof=1) / math.sqrt(draws)

    _discrete_mask = None


def _mass_action_term(coeff, orders, z, discrete_mask):
    out = coeff
    for j, n in enumerate(orders):
        if not n:
            continue
        if discrete_mask is None or discrete_mask[j]:
            out *= falling_factorial(z[j], n)
        else:
            out *= z[j] ** n
    return out


# ---------------------------------------------------------------------------
# mass-action structure of a fast subsystem


@dataclass(frozen=True)
class FastReaction:
    """One fast reaction seen from the fast variables: a nonnegative
    coefficient (everything frozen folded in), reactant orders on the
    fast variables, and the effective change column."""

    k: int
    coeff: float
    orders: tuple[int, ...]
    column: tuple[int, ...]


def detect_birth_death(reactions, discrete) -> list[StationaryComponent] | None:
    """Independent linear birth-death detection, deliberately narrow.

    Succeeds only when every fast reaction changes exactly one variable
    by +-1 and its rate is constant (birth) or proportional to that same
    variable (death). Returns per-variable components: Poisson for
    discrete variables, point mass (the flow fixed point) for continuous
    ones. None when the structure does not match.
    """
    n = len(discrete)
    births = [0.0] * n
    deaths = [0.0] * n
    zero = tuple([0] * n)
    for fr in reactions:
        nz = [j for j, c in enumerate(fr.column) if c != 0]
        if len(nz) != 1:
            return None
        j = nz[0]
        change = fr.column[j]
        if change == 1:
            if fr.orders != zero:
                return None
            births[j] += fr.coeff
        elif change == -1:
            expected = tuple(1 if i == j else 0 for i in range(n))
            if fr.orders != expected:
                return None
            deaths[j] += fr.coeff
        else:
            return None
    components = []
    for j in range(n):
        if deaths[j] <= 0.0:
            # pure accumulation has no stationary law; a variable with no
            # active rates at all keeps its initial value (point mass),
            # which the closed form cannot express
            return None
        components.append(StationaryComponent(
            "poisson" if discrete[j] else "dirac", births[j] / deaths[j]))
    return components


def detect_conversion_blocks(reactions, basis_vectors, totals, discrete):
    """Constrained analytic stationary: closed unary-conversion blocks.

    When the conservation vectors are disjoint 0/1 vectors and every fast
    reaction converts one unit of a block species into another with a
    rate linear in the source, molecules of a block move independently;
    the constrained stationary law is Multinomial(total, per-molecule
    stationary). Returns blocks or None.
    """
    n = len(discrete)
    if not all(all(x in (0, 1) for x in vec) for vec in basis_vectors):
        return None
    owner = [None] * n
    for b, vec in enumerate(basis_vectors):
        for j, x in enumerate(vec):
            if x:
                if owner[j] is not None:
                    return None
                owner[j] = b
    if any(owner[j] is None for j in range(n)):
        return None
    if not all(discrete):
        return None
    conv = [dict() for _ in basis_vectors]   # (src, dst) -> rate
    for fr in reactions:
        nz = [j for j, c in enumerate(fr.column) if c != 0]
        if len(nz) != 2:
            return None
        a, b = nz
        if {fr.column[a], fr.column[b]} != {-1, 1}:
            return None
        src = a if fr.column[a] == -1 else b
        dst = b if src == a else a
        if owner[src] != owner[dst]:
            return None
        expected = tuple(1 if i == src else 0 for i in range(n))
        if fr.orders != expected:
            return None
        key = (src, dst)
        conv[owner[src]][key] = conv[owner[src]].get(key, 0.0) + fr.coeff
    blocks = []
    for b, vec in enumerate(basis_vectors):
        positions = tuple(j for j, x in enumerate(vec) if x)
        local = {p: i for i, p in enumerate(positions)}
        m = len(positions)
        rates = [[0.0] * m for _ in range(m)]
        for (src, dst), rate in conv[b].items():
            rates[local[src]][local[dst]] = rate
        try:
            pi = stationary_distribution(rates)
        except IsolatedSpeciesError:
            if m == 1:
                pi = [Fraction(1)]
            else:
                return None
        except Exception:
            return None
        blocks.append(MultinomialBlock(positions, float(totals[b]),
                                       tuple(float(p) for p in pi)))
    return blocks


def fast_reaction_structs(classification: ScaleClassification, frozen) -> list[FastReaction] | None:
    """Mass-action view of the fast tier with slower coordinates frozen;
    None when any fast reaction has an expression law."""
    network = classification.network
    fast = classification.fast
    rows = fast.rows
    row_pos = {i: j for j, i in enumerate(rows)}
    frozen = np.asarray(frozen, dtype=float)
    out = []
    for k in sorted(classification.k_sets["fast"]):
        reaction = network.reactions[k]
        if not isinstance(reaction.rate_law, MassAction):
            return None
        coeff = reaction.rate_law.kappa
        orders = [0] * len(rows)
        for i, n in reaction.reactants:
            if i in row_pos:
                orders[row_pos[i]] = n
            else:
                coeff *= _mixed_factor(frozen[i], n, network.species[i].alpha == 0)
        out.append(FastReaction(k, coeff, tuple(orders), tuple(fast.column(k))))
    return out


def _mixed_factor(value: float, n: int, discrete: bool) -> float:
    return falling_factorial(value, n) if discrete else value ** n


# ---------------------------------------------------------------------------
# Monte Carlo stationary estimation


@dataclass
class McConfig:
    budget: int = 100_000        # events (jump systems) or samples (hybrid)
    burn_in_frac: float = 0.2
    n_batches: int = 16
    ess_threshold: int = 100
    seed: int = 0
    ode: OdeConfig | None = None


def _empirical_from_jump_paths(fast_system: HybridSystem, v0,
                               mc: McConfig) -> StationaryMeasure:
    """Chunked time-average of a pure-jump fast path.

    The budget counts events burn-in inclusive; the first
    ``burn_in_frac`` of them are discarded and the rest aggregated as
    (state -> time weight) maps per batch for batch-means errors.
    """
    rng = rng_mod.stream(mc.seed)
    budget = int(mc.budget)
    burn_events = int(budget * mc.burn_in_frac)
    v = np.asarray(v0, dtype=float).copy()
    total_rate = float(fast_system.jump_rates(v).sum())
    if total_rate <= 0:
        return StationaryMeasure("pointmass", point=v)
    chunk_events = max(200, budget // (4 * mc.n_batches))
    batch_quota = max(1, (budget - burn_events) // mc.n_batches)
    batches: list[dict] = []
    current: dict[tuple, float] = {}
    events_seen = 0
    states_in_batch = 0
    absorbed = False
    while events_seen < budget and not absorbed:
        t_chunk = chunk_events / max(total_rate, 1e-12) * 1.2
        traj = simulate_pdmp(fast_system, v, t_chunk, record="events", rng=rng,
                             ode_config=mc.ode)
        n_ev = len(traj.event_log)
        if n_ev == 0:
            v = traj.final_state
            if fast_system.jump_rates(v).sum() <= 0:
                absorbed = True
            continue
        ts = [0.0] + [time for time, _ in traj.event_log] + [traj.t_end]
        for j in range(len(traj.states)):
            duration = ts[j + 1] - ts[j]
            if duration <= 0 or events_seen + j < burn_events:
                continue
            key = tuple(traj.states[j])
            current[key] = current.get(key, 0.0) + duration
            states_in_batch += 1
            if states_in_batch >= batch_quota:
                batches.append(current)
                current = {}
                states_in_batch = 0
        events_seen += n_ev
        v = traj.final_state.copy()
        total_rate = float(fast_system.jump_rates(v).sum())
        if total_rate <= 0:
            absorbed = True
    if absorbed:
        # time average of an absorbed chain is the absorbing state
        return StationaryMeasure("pointmass", point=v)
    if current:
        batches.append(current)
    post_events = events_seen - burn_events
    if post_events < mc.ess_threshold:
        raise NonErgodicSuspected(
            f"only {post_events} post-burn-in events (threshold {mc.ess_threshold})")
    return StationaryMeasure("empirical", batches=batches, ess=post_events,
                             n_events=events_seen, dim=fast_system.dim)


def _pointmass_from_flow(fast_system: HybridSystem, v0, mc: McConfig) -> StationaryMeasure:
    """Integrate a pure-flow fast subsystem to its fixed point."""
    v = np.asarray(v0, dtype=float).copy()
    cfg = mc.ode or OdeConfig()
    horizon = 1.0
    for _ in range(60):
        traj = simulate_pdmp(fast_system, v, horizon, ode_config=cfg)
        v_new = traj.final_state
        drift = fast_system.drift(np.maximum(v_new, 0.0))
        if np.linalg.norm(drift) <= 1e-9 * (1.0 + np.linalg.norm(v_new)):
            return StationaryMeasure("pointmass", point=np.maximum(v_new, 0.0))
        v = v_new
        horizon = min(horizon * 2.0, 1e6)
    raise NonErgodicSuspected("flow did not settle to a fixed point")


def _empirical_from_hybrid(fast_system: HybridSystem, v0, mc: McConfig) -> StationaryMeasure:
    """Grid-sampled time average for mixed jump/flow fast subsystems."""
    rng = rng_mod.stream(mc.seed)
    n_samples = min(int(mc.budget), 20_000)
    burn = int(n_samples * mc.burn_in_frac)
    # horizon chosen from initial jump-rate scale
    rate0 = float(fast_system.jump_rates(np.asarray(v0, dtype=float)).sum())
    t_end = max(50.0, 20.0 * n_samples / max(rate0, 1.0))
    grid = np.linspace(0.0, t_end, n_samples + 1)[1:]
    traj = simulate_pdmp(fast_system, v0, t_end, record=grid, rng=rng,
                         ode_config=mc.ode)
    keep = traj.states[burn:]
    batches = []
    for chunk in np.array_split(keep, mc.n_batches):
        batch = {}
        for row in chunk:
            key = tuple(row)
            batch[key] = batch.get(key, 0.0) + 1.0
        batches.append(batch)
    return StationaryMeasure("empirical", batches=batches, ess=len(keep),
                             n_events=int(traj.event_counts.sum()),
                             dim=fast_system.dim)


def constrained_start(basis: ConservedBasis, conserved_values, n_vars,
                      discrete) -> np.ndarray:
    """A nonnegative fast state on the constraint surface."""
    theta = np.array(basis.vectors, dtype=float)
    target = np.asarray(conserved_values, dtype=float)
    v, *_ = np.linalg.lstsq(theta, target, rcond=None)
    v = np.maximum(v, 0.0)
    if all(discrete):
        v = np.rint(v)
        # greedy repair for rounding drift, one vector at a time
        for j, vec in enumerate(basis.vectors):
            gap = target[j] - float(np.dot(vec, v))
            if gap != 0:
                support = [i for i, x in enumerate(vec) if x != 0]
                v[support[0]] += gap / vec[support[0]]
        v = np.maximum(v, 0.0)
    if not np.allclose(theta @ v, target, atol=1e-9) or np.any(v < 0):
        raise ModelError("could not construct a state on the constraint surface; "
                         "supply v_f0 explicitly")
    return v


def stationary_fast(classification: ScaleClassification, frozen, mode: str = "auto",
                    mc: McConfig | None = None, conserved: ConservedBasis | None = None,
                    conserved_values=None, v_f0=None) -> StationaryMeasure:
    """Stationary measure of the fast subsystem given frozen slower context.

    mode 'analytic' insists on a closed form (independent linear
    birth-death per fast species, or multinomially distributed closed
    conversion blocks under conservation constraints) and raises
    AnalyticUnavailable otherwise; 'montecarlo' always simulates;
    'auto' tries the closed form first and falls back explicitly.
    """
    mc = mc or McConfig()
    network = classification.network
    fast = classification.fast
    discrete = [network.species[i].alpha == 0 for i in fast.rows]
    constrained = conserved is not None and not conserved.empty
    if constrained and conserved_values is None:
        raise ModelError("conserved_values required with a conserved basis")

    if mode in ("auto", "analytic"):
        structs = fast_reaction_structs(classification, frozen)
        if structs is not None:
            if constrained:
                blocks = detect_conversion_blocks(structs, conserved.vectors,
                                                  conserved_values, discrete)
                if blocks is not None:
                    comps = tuple(StationaryComponent("poisson" if d else "dirac", 0.0)
                                  for d in discrete)
                    return StationaryMeasure("product", components=comps, blocks=blocks)
            else:
                comps = detect_birth_death(structs, discrete)
                if comps is not None:
                    return StationaryMeasure("product", components=tuple(comps))
        if mode == "analytic":
            raise AnalyticUnavailable(
                "fast subsystem is not an independent linear birth-death system")

    # Monte Carlo
    system = _conditional_system(classification, frozen)
    if v_f0 is None:
        if constrained:
            v_f0 = constrained_start(conserved, conserved_values, len(fast.rows), discrete)
        else:
            v_f0 = np.zeros(len(fast.rows))
    if not system.jumps and not system.flows:
        return StationaryMeasure("pointmass", point=v_f0)
    if not system.flows:
        measure = _empirical_from_jump_paths(system, v_f0, mc)
    elif not system.jumps:
        measure = _pointmass_from_flow(system, v_f0, mc)
    else:
        measure = _empirical_from_hybrid(system, v_f0, mc)
    measure._discrete_mask = discrete
    return measure


def _conditional_system(classification, frozen) -> HybridSystem:
    from .pdmp import fast_subsystem
    return fast_subsystem(classification, frozen)


# ---------------------------------------------------------------------------
# averaged rates, nonspatial


@dataclass
class AveragedRate:
    """Evaluator for one reduced reaction rate.

    ``fn(reduced_state)`` returns the averaged rate; ``se(reduced_state)``
    its standard error (0 for closed forms). ``text`` carries a printable
    closed form when one exists.
    """

    reaction: int
    kind: str                    # 'analytic' | 'montecarlo'
    fn: object
    se: object
    text: str | None = None

    def __call__(self, state) -> float:
        return self.fn(np.asarray(state, dtype=float))

    def standard_error(self, state) -> float:
        return self.se(np.asarray(state, dtype=float))


def _identity_rate(network: Network, k: int) -> AveragedRate:
    base = scaled_rate_function(network, k)
    return AveragedRate(k, "analytic", fn=base, se=lambda v: 0.0,
                        text=_mass_action_text(network, k))


def _mass_action_text(network: Network, k: int) -> str | None:
    reaction = network.reactions[k]
    if not isinstance(reaction.rate_law, MassAction):
        return None
    factors = [f"k{k + 1}"]
    for i, n in reaction.reactants:
        name = f"v{network.species[i].name}"
        if network.species[i].alpha == 0:
            factors.extend([name] if n == 1 else
                           [name] + [f"({name}-{j})" for j in range(1, n)])
        else:
            factors.append(name if n == 1 else f"{name}^{n}")
    return "*".join(factors)


class TwoScaleAverager:
    """Closed-form averaged rates for a two-scale system whose fast tier
    is an independent linear birth-death family.

    The averaged rate of a slow mass-action reaction is its slow-factor
    monomial times the product of fast stationary means raised to the
    reactant orders (factorial moments collapse to plain powers).
    """

    def __init__(self, classification: ScaleClassification, base=None):
        self.classification = classification
        network = classification.network
        self.network = network
        self.fast_rows = classification.fast.rows
        self.slow_rows = classification.slow.rows
        self.base = (np.zeros(network.n_species) if base is None
                     else np.asarray(base, dtype=float).copy())
        self.discrete = [network.species[i].alpha == 0 for i in self.fast_rows]
        # structural detection with coefficients kept symbolic in the slow state
        probe = self.frozen_from_reduced(np.ones(len(self.slow_rows)))
        structs = fast_reaction_structs(classification, probe)
        if structs is None:
            raise AnalyticUnavailable("fast tier contains expression rate laws")
        if detect_birth_death(structs, self.discrete) is None:
            raise AnalyticUnavailable(
                "fast subsystem is not an independent linear birth-death system")

    def frozen_from_reduced(self, reduced_state) -> np.ndarray:
        frozen = self.base.copy()
        reduced_state = np.asarray(reduced_state, dtype=float)
        for pos, i in enumerate(self.slow_rows):
            frozen[i] = reduced_state[pos]
        return frozen

    def measure(self, reduced_state) -> StationaryMeasure:
        frozen = self.frozen_from_reduced(reduced_state)
        structs = fast_reaction_structs(self.classification, frozen)
        comps = detect_birth_death(structs, self.discrete)
        if comps is None:
            raise AnalyticUnavailable("birth-death structure lost at this state")
        return StationaryMeasure("product", components=tuple(comps))

    def averaged_rate(self, k: int) -> AveragedRate:
        network = self.network
        reaction = network.reactions[k]
        if not isinstance(reaction.rate_law, MassAction):
            return self._averaged_expression_rate(k)
        row_pos = {i: j for j, i in enumerate(self.fast_rows)}
        fast_orders = [0] * len(self.fast_rows)
        slow_terms = []
        for i, n in reaction.reactants:
            if i in row_pos:
                fast_orders[row_pos[i]] = n
            else:
                slow_terms.append((i, n))

        def fn(reduced_state):
            frozen = self.frozen_from_reduced(reduced_state)
            coeff = reaction.rate_law.kappa
            for i, n in slow_terms:
                coeff *= _mixed_factor(frozen[i], n, network.species[i].alpha == 0)
            measure = self.measure(reduced_state)
            value, _ = measure.expect_mass_action(coeff, fast_orders)
            return value

        return AveragedRate(k, "analytic", fn=fn, se=lambda v: 0.0,
                            text=self._rate_text(k, slow_terms, fast_orders))

    def _averaged_expression_rate(self, k: int) -> AveragedRate:
        from . import expressions
        network = self.network
        law = network.reactions[k].rate_law
        fast_names = [network.species[i].name for i in self.fast_rows]

        def fn(reduced_state):
            frozen = self.frozen_from_reduced(reduced_state)
            measure = self.measure(reduced_state)
            env = {s.name: frozen[i] for i, s in enumerate(network.species)}
            try:
                poly = expressions.as_polynomial(law.ast, fast_names, env)
            except expressions.PolynomialError:
                raise AnalyticUnavailable(
                    "expression rate is not polynomial in the fast species")
            out = 0.0
            for exponents, coeff in poly.items():
                term = coeff
                for j, n in enumerate(exponents):
                    if n:
                        term *= measure.components[j].raw_moment(n)
                out += term
            if out < 0:
                raise RateEvaluationError(f"averaged rate is negative: {out}")
            return out

        return AveragedRate(k, "analytic", fn=fn, se=lambda v: 0.0, text=None)

    def _rate_text(self, k, slow_terms, fast_orders) -> str | None:
        """Printable closed form, e.g. ``k1*k2*vA/(k3+k1*vA)``."""
        network = self.network
        numerator = [f"k{k + 1}"]
        denominators = []
        for i, n in slow_terms:
            numerator.extend(_species_factor_texts(network, i, n))
        structs = fast_reaction_structs(
            self.classification, self.frozen_from_reduced(np.zeros(len(self.slow_rows))))
        birth_terms = [[] for _ in self.fast_rows]
        death_terms = [[] for _ in self.fast_rows]
        for fr in structs:
            j = next(idx for idx, c in enumerate(fr.column) if c != 0)
            term = _coeff_text(network, fr.k, set(self.fast_rows))
            (birth_terms[j] if fr.column[j] == 1 else death_terms[j]).append(term)
        for j, n in enumerate(fast_orders):
            for _ in range(n):
                birth = "+".join(sorted(birth_terms[j], key=_term_sort_key))
                death = "+".join(sorted(death_terms[j], key=_term_sort_key))
                numerator.append(birth if "+" not in birth else f"({birth})")
                denominators.append(death)
        text = "*".join(sorted(numerator, key=_symbol_sort_key))
        for d in denominators:
            text += f"/({d})"
        return text


def _species_factor_texts(network: Network, i: int, n: int) -> list[str]:
    name = f"v{network.species[i].name}"
    if network.species[i].alpha == 0:
        return [name] + [f"({name}-{j})" for j in range(1, n)]
    return [name] if n == 1 else [f"{name}^{n}"]


def _coeff_text(network: Network, k: int, fast_rows: set) -> str:
    """kappa symbol times frozen reactant symbols, fast variables omitted
    (their order is carried by the birth-death variable itself)."""
    parts = [f"k{k + 1}"]
    for i, n in network.reactions[k].reactants:
        if i not in fast_rows:
            parts.extend(_species_factor_texts(network, i, n))
    return "*".join(sorted(parts, key=_symbol_sort_key))


def _symbol_sort_key(token: str):
    if token.startswith("k") and token[1:].isdigit():
        return (0, int(token[1:]), token)
    if token.startswith("v"):
        return (1, 0, token)
    return (2, 0, token)


def _term_sort_key(term: str):
    return (term.count("*"), _symbol_sort_key(term.split("*")[0]), term)


def averaged_rate_two_scale(classification: ScaleClassification, k: int,
                            mode: str = "auto", base=None,
                            mc: McConfig | None = None,
                            conserved: ConservedBasis | None = None) -> AveragedRate:
    """Averaged rate of slow (or conserved-driving) reaction k.

    Closed form when the fast stationary law is analytic and the rate is
    mass action or polynomial in the fast species; Monte Carlo with
    reported standard errors otherwise. Never falls back silently: mode
    'analytic' raises AnalyticUnavailable instead of simulating.
    """
    mc = mc or McConfig()
    network = classification.network
    constrained = conserved is not None and not conserved.empty
    if mode in ("auto", "analytic") and not constrained:
        try:
            averager = TwoScaleAverager(classification, base=base)
            return averager.averaged_rate(k)
        except AnalyticUnavailable:
            if mode == "analytic":
                raise
    if mode in ("auto", "analytic") and constrained:
        rate = _constrained_analytic_rate(classification, k, conserved, base)
        if rate is not None:
            return rate
        if mode == "analytic":
            raise AnalyticUnavailable("no closed form for the constrained fast law")
    return _montecarlo_rate(classification, k, base, mc, conserved)


def _constrained_analytic_rate(classification, k, conserved, base) -> AveragedRate | None:
    network = classification.network
    slow_rows = classification.slow.rows
    fast_rows = classification.fast.rows
    discrete = [network.species[i].alpha == 0 for i in fast_rows]
    base_vec = np.zeros(network.n_species) if base is None else np.asarray(base, float)
    n_slow = len(slow_rows)
    reaction = network.reactions[k]
    if not isinstance(reaction.rate_law, MassAction):
        return None
    row_pos = {i: j for j, i in enumerate(fast_rows)}
    fast_orders = [0] * len(fast_rows)
    slow_terms = []
    for i, n in reaction.reactants:
        if i in row_pos:
            fast_orders[row_pos[i]] = n
        else:
            slow_terms.append((i, n))

    def build_measure(reduced_state):
        frozen = base_vec.copy()
        for pos, i in enumerate(slow_rows):
            frozen[i] = reduced_state[pos]
        values = reduced_state[n_slow:]
        structs = fast_reaction_structs(classification, frozen)
        if structs is None:
            return None
        blocks = detect_conversion_blocks(structs, conserved.vectors, values, discrete)
        if blocks is None:
            return None
        comps = tuple(StationaryComponent("poisson" if d else "dirac", 0.0)
                      for d in discrete)
        return StationaryMeasure("product", components=comps, blocks=blocks), frozen

    probe = np.ones(n_slow + len(conserved.vectors))
    if build_measure(probe) is None:
        return None

    def fn(reduced_state):
        built = build_measure(np.asarray(reduced_state, dtype=float))
        if built is None:
            raise AnalyticUnavailable("constrained closed form lost at this state")
        measure, frozen = built
        coeff = reaction.rate_law.kappa
        for i, n in slow_terms:
            coeff *= _mixed_factor(frozen[i], n, network.species[i].alpha == 0)
        value, _ = measure.expect_mass_action(coeff, fast_orders)
        return value

    return AveragedRate(k, "analytic", fn=fn, se=lambda v: 0.0, text=None)


def averaged_rate_three_scale(classification: ScaleClassification, k: int,
                              mode: str = "auto", base=None,
                              mc: McConfig | None = None) -> AveragedRate:
    """Doubly averaged rate for a three-scale system.

    The fastest tier is averaged first, given frozen middle and slow
    coordinates (closed form when it is an independent linear
    birth-death family, Monte Carlo otherwise); the result is then
    averaged over the stationary law of the middle tier, estimated by a
    time average along the middle path with the inner rates plugged in.
    Standard errors from the two levels combine in quadrature. A middle
    tier that is empty degenerates to the two-scale computation, and a
    rate touching neither faster tier passes through unchanged.
    """
    mc = mc or McConfig()
    if classification.kind == "two":
        return averaged_rate_two_scale(classification, k, mode=mode, base=base, mc=mc)
    if classification.kind != "three":
        raise ModelError("three-scale averaging needs a two- or three-scale system")
    network = classification.network
    reaction = network.reactions[k]
    fast_rows = list(classification.fast.rows)
    middle_rows = list(classification.middle.rows)
    slow_rows = classification.slow.rows
    base_vec = np.zeros(network.n_species) if base is None else np.asarray(base, float)

    touches = set()
    for i, _ in reaction.reactants:
        touches.add(i)
    if isinstance(reaction.rate_law, Expression):
        from . import expressions
        touches |= {network.index[name]
                    for name in expressions.variables(reaction.rate_law.ast)}
    if not (touches & set(fast_rows)) and not (touches & set(middle_rows)):
        return _identity_passthrough(classification, k, base_vec)

    inner_cache: dict[tuple, StationaryMeasure] = {}

    def inner_measure(frozen):
        key = tuple(np.round(frozen, 12))
        if key in inner_cache:
            return inner_cache[key]
        structs = fast_reaction_structs(classification, frozen)
        measure = None
        if structs is not None and mode in ("auto", "analytic"):
            discrete = [network.species[i].alpha == 0 for i in fast_rows]
            comps = detect_birth_death(structs, discrete)
            if comps is not None:
                measure = StationaryMeasure("product", components=tuple(comps))
        if measure is None:
            if mode == "analytic":
                raise AnalyticUnavailable("fastest tier has no closed form")
            inner_mc = McConfig(budget=max(mc.budget // 10, 2000),
                                burn_in_frac=mc.burn_in_frac, seed=mc.seed + 13,
                                ess_threshold=min(mc.ess_threshold, 50))
            measure = stationary_fast(classification, frozen, mode="montecarlo",
                                      mc=inner_mc)
        inner_cache[key] = measure
        return measure

    def tilde_rate(kk, frozen):
        """Fast-tier average of reaction kk at frozen (middle, slow)."""
        rr = network.reactions[kk]
        if isinstance(rr.rate_law, MassAction):
            coeff = rr.rate_law.kappa
            orders = [0] * len(fast_rows)
            pos = {i: j for j, i in enumerate(fast_rows)}
            for i, n in rr.reactants:
                if i in pos:
                    orders[pos[i]] = n
                else:
                    coeff *= _mixed_factor(frozen[i], n, network.species[i].alpha == 0)
            return inner_measure(frozen).expect_mass_action(coeff, orders)
        rate_fn = scaled_rate_function(network, kk)

        def integrand(z):
            full = frozen.copy()
            full[fast_rows] = z
            return rate_fn(full)

        return inner_measure(frozen).expect(integrand)

    cache: dict[tuple, tuple[float, float]] = {}

    def evaluate(reduced_state):
        reduced_state = np.asarray(reduced_state, dtype=float)
        key = tuple(np.round(reduced_state, 12))
        if key in cache:
            return cache[key]
        frozen = base_vec.copy()
        for pos, i in enumerate(slow_rows):
            frozen[i] = reduced_state[pos]

        # middle-tier path with fast-averaged rates
        middle_tier = classification.middle
        circ = classification.k_sets["middle_circ"]
        jumps = []
        flows = []
        for kk in sorted(classification.k_sets["middle"]):
            def rate(v_m, kk=kk):
                full = frozen.copy()
                full[middle_rows] = v_m
                return tilde_rate(kk, full)[0]
            column = middle_tier.column(kk)
            if kk in circ:
                jumps.append((rate, column.astype(np.int64)))
            else:
                flows.append((rate, column.astype(float)))
        labels = tuple(network.species[i].name for i in middle_rows)
        system = HybridSystem(labels, tuple(jumps), tuple(flows))

        middle_mc = McConfig(budget=mc.budget, burn_in_frac=mc.burn_in_frac,
                             n_batches=mc.n_batches, seed=mc.seed,
                             ess_threshold=mc.ess_threshold, ode=mc.ode)
        v0 = np.zeros(len(middle_rows))
        if not system.flows:
            outer = _empirical_from_jump_paths(system, v0, middle_mc)
        elif not system.jumps:
            outer = _pointmass_from_flow(system, v0, middle_mc)
        else:
            outer = _empirical_from_hybrid(system, v0, middle_mc)

        def outer_integrand(v_m):
            full = frozen.copy()
            full[middle_rows] = v_m
            return tilde_rate(k, full)[0]

        value, se_outer = outer.expect(outer_integrand)

        def inner_se(v_m):
            full = frozen.copy()
            full[middle_rows] = v_m
            return tilde_rate(k, full)[1]

        se_inner, _ = outer.expect(inner_se)
        out = (float(value), float(math.hypot(np.max(se_outer), np.max(se_inner))))
        cache[key] = out
        return out

    # the outer middle-tier average is a time average even when the
    # fastest tier has a closed form, so the estimate always carries noise
    return AveragedRate(k, "montecarlo",
                        fn=lambda v: evaluate(v)[0],
                        se=lambda v: evaluate(v)[1],
                        text=None)


def _identity_passthrough(classification, k, base_vec) -> AveragedRate:
    network = classification.network
    rate_fn = scaled_rate_function(network, k)
    slow_rows = classification.slow.rows

    def fn(reduced_state):
        frozen = base_vec.copy()
        for pos, i in enumerate(slow_rows):
            frozen[i] = np.asarray(reduced_state, dtype=float)[pos]
        return rate_fn(frozen)

    return AveragedRate(k, "analytic", fn=fn, se=lambda v: 0.0,
                        text=_mass_action_text(network, k))


def _montecarlo_rate(classification, k, base, mc: McConfig,
                     conserved: ConservedBasis | None) -> AveragedRate:
    network = classification.network
    slow_rows = classification.slow.rows
    fast_rows = list(classification.fast.rows)
    n_slow = len(slow_rows)
    base_vec = np.zeros(network.n_species) if base is None else np.asarray(base, float)
    rate_fn = scaled_rate_function(network, k)
    constrained = conserved is not None and not conserved.empty
    cache: dict[tuple, tuple[float, float]] = {}

    def evaluate(reduced_state):
        reduced_state = np.asarray(reduced_state, dtype=float)
        key = tuple(np.round(reduced_state, 12))
        if key in cache:
            return cache[key]
        frozen = base_vec.copy()
        for pos, i in enumerate(slow_rows):
            frozen[i] = reduced_state[pos]
        conserved_values = reduced_state[n_slow:] if constrained else None
        measure = stationary_fast(classification, frozen, mode="montecarlo", mc=mc,
                                  conserved=conserved if constrained else None,
                                  conserved_values=conserved_values)

        def integrand(z):
            full = frozen.copy()
            full[fast_rows] = z
            return rate_fn(full)

        value, se = measure.expect(integrand)
        out = (float(value), float(se))
        cache[key] = out
        return out

    return AveragedRate(k, "montecarlo",
                        fn=lambda v: evaluate(v)[0],
                        se=lambda v: evaluate(v)[1],
                        text=None)
