"""Canonical in-memory representation of (spatial) reaction networks.

A :class:`Network` couples species (with exact rational abundance
exponents) to reactions (integer stoichiometry, rational rate exponents,
mass-action or expression rate laws). A :class:`SpatialModel` adds an
ordered compartment set, per-compartment rate laws and movement rates.
Model objects are immutable after construction and safe to share across
simulation workers; :class:`State` objects are worker-local.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import expressions
from .errors import ModelError, RateEvaluationError, ValidationError


@dataclass(frozen=True)
class Species:
    """One chemical species; ``alpha`` is its abundance exponent and
    ``eta`` (spatial models only) its movement-speed exponent."""

    name: str
    alpha: Fraction = Fraction(0)
    eta: Fraction | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValidationError(f"species {self.name}: alpha must be >= 0")
        if self.eta is not None and self.eta <= 0:
            raise ValidationError(f"species {self.name}: eta must be > 0")

    @property
    def discrete(self) -> bool:
        return self.alpha == 0


@dataclass(frozen=True)
class MassAction:
    """Mass-action kinetics with rate constant ``kappa``.

    On raw integer counts the rate is kappa times the number of reactant
    combinations; on scaled counts, discrete species keep the
    combinatorial factor while continuous species contribute plain
    monomials.
    """

    kappa: float

    def __post_init__(self):
        if self.kappa < 0 or not math.isfinite(self.kappa):
            raise ValidationError(f"mass-action kappa must be finite and >= 0, got {self.kappa}")


@dataclass(frozen=True)
class Expression:
    """Arbitrary arithmetic rate law over scaled species counts."""

    source: str
    ast: expressions.Node = field(compare=False, default=None)

    def __post_init__(self):
        if self.ast is None:
            object.__setattr__(self, "ast", expressions.parse_expression(self.source))


RateLaw = MassAction | Expression


@dataclass(frozen=True)
class Reaction:
    """reactants/products map species index -> integer multiplicity."""

    reactants: tuple[tuple[int, int], ...]
    products: tuple[tuple[int, int], ...]
    beta: Fraction = Fraction(0)
    rate_law: RateLaw = MassAction(1.0)
    catalytic_only: bool = False

    @staticmethod
    def make(reactants: dict[int, int], products: dict[int, int], beta=Fraction(0),
             rate_law: RateLaw = MassAction(1.0), catalytic_only: bool | None = None) -> "Reaction":
        reactants = {i: n for i, n in reactants.items() if n != 0}
        products = {i: n for i, n in products.items() if n != 0}
        if not reactants and not products:
            raise ValidationError("reaction needs at least one reactant or product")
        if any(n < 0 for n in reactants.values()) or any(n < 0 for n in products.values()):
            raise ValidationError("stoichiometric multiplicities must be nonnegative")
        net = {i: products.get(i, 0) - reactants.get(i, 0)
               for i in set(reactants) | set(products)}
        is_catalytic = all(v == 0 for v in net.values())
        if catalytic_only is None:
            catalytic_only = is_catalytic
        if is_catalytic and not catalytic_only:
            raise ValidationError("reaction has zero net change; flag it catalytic_only")
        return Reaction(tuple(sorted(reactants.items())), tuple(sorted(products.items())),
                        Fraction(beta), rate_law, catalytic_only)

    def nu(self, i: int) -> int:
        for j, n in self.reactants:
            if j == i:
                return n
        return 0

    def nu_prime(self, i: int) -> int:
        for j, n in self.products:
            if j == i:
                return n
        return 0

    def zeta(self, i: int) -> int:
        return self.nu_prime(i) - self.nu(i)

    @property
    def order(self) -> int:
        return sum(n for _, n in self.reactants)


@dataclass
class State:
    """Species counts, either raw (``X``) or scaled (``V = N^-alpha X``).

    1-D for a single compartment, 2-D (species x compartments) for
    spatial models. Discrete species hold integer values in both forms.
    """

    counts: np.ndarray
    scaled: bool = False

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=float)
        if np.any(self.counts < 0) or not np.all(np.isfinite(self.counts)):
            raise ValidationError("state counts must be finite and nonnegative")

    def copy(self) -> "State":
        return State(self.counts.copy(), self.scaled)


def falling_factorial(x: float, n: int) -> float:
    """x(x-1)...(x-n+1); zero when fewer than n units are available."""
    if n == 0:
        return 1.0
    if x < n:
        return 0.0
    out = 1.0
    for j in range(n):
        out *= x - j
    return out


class Network:
    """Immutable reaction network over a single compartment."""

    def __init__(self, species: list[Species], reactions: list[Reaction]):
        names = [s.name for s in species]
        if len(set(names)) != len(names):
            raise ValidationError("species names must be unique")
        if not species:
            raise ValidationError("network needs at least one species")
        for r in reactions:
            for i, _ in r.reactants + r.products:
                if not 0 <= i < len(species):
                    raise ValidationError(f"reaction references unknown species index {i}")
        self.species = tuple(species)
        self.reactions = tuple(reactions)
        self.index = {s.name: i for i, s in enumerate(self.species)}
        self._zeta = self._build_zeta()

    def _build_zeta(self) -> np.ndarray:
        z = np.zeros((len(self.species), len(self.reactions)), dtype=np.int64)
        for k, r in enumerate(self.reactions):
            for i, n in r.reactants:
                z[i, k] -= n
            for i, n in r.products:
                z[i, k] += n
        return z

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @property
    def alphas(self) -> tuple[Fraction, ...]:
        return tuple(s.alpha for s in self.species)

    @property
    def betas(self) -> tuple[Fraction, ...]:
        return tuple(r.beta for r in self.reactions)

    def stoichiometric_matrix(self) -> np.ndarray:
        """Net-change matrix; column k is the jump vector of reaction k."""
        return self._zeta.copy()

    def species_reaction_sets(self) -> dict[int, frozenset[int]]:
        """Map species -> reactions that change its count."""
        return {i: frozenset(k for k in range(self.n_reactions) if self._zeta[i, k] != 0)
                for i in range(self.n_species)}

    @property
    def is_spatial(self) -> bool:
        return False


class SpatialModel:
    """A network replicated over compartments, plus movement rates.

    ``rate_laws[k][d]`` is the rate law of reaction k in compartment d
    (Assumption: each reaction is active in at least one compartment).
    ``movement[i, d1, d2]`` is the per-molecule rate at which species i
    moves d1 -> d2; the diagonal is zero.
    """

    def __init__(self, network: Network, compartments: list[str],
                 rate_laws: list[list[RateLaw]] | None = None,
                 movement: np.ndarray | None = None):
        if not compartments:
            raise ValidationError("spatial model needs at least one compartment")
        if len(set(compartments)) != len(compartments):
            raise ValidationError("compartment names must be unique")
        self.network = network
        self.compartments = tuple(compartments)
        nd = len(compartments)
        if rate_laws is None:
            rate_laws = [[r.rate_law] * nd for r in network.reactions]
        if len(rate_laws) != network.n_reactions or any(len(row) != nd for row in rate_laws):
            raise ValidationError("rate law table must be reactions x compartments")
        for k, row in enumerate(rate_laws):
            if all(isinstance(law, MassAction) and law.kappa == 0.0 for law in row):
                raise ValidationError(f"reaction {k} has zero rate in every compartment")
        self.rate_laws = tuple(tuple(row) for row in rate_laws)
        if movement is None:
            movement = np.zeros((network.n_species, nd, nd))
        movement = np.asarray(movement, dtype=float)
        if movement.shape != (network.n_species, nd, nd):
            raise ValidationError("movement tensor must be species x compartments x compartments")
        if np.any(movement < 0):
            raise ValidationError("movement rates must be nonnegative")
        if np.any(np.diagonal(movement, axis1=1, axis2=2) != 0):
            raise ValidationError("movement rate matrix must have zero diagonal")
        self.movement = movement
        self.movement.setflags(write=False)

    @property
    def species(self):
        return self.network.species

    @property
    def reactions(self):
        return self.network.reactions

    @property
    def index(self):
        return self.network.index

    @property
    def n_compartments(self) -> int:
        return len(self.compartments)

    def rate_law(self, k: int, d: int) -> RateLaw:
        return self.rate_laws[k][d]

    def stoichiometric_matrix(self) -> np.ndarray:
        return self.network.stoichiometric_matrix()

    def species_reaction_sets(self):
        return self.network.species_reaction_sets()

    @property
    def is_spatial(self) -> bool:
        return True


Model = Network | SpatialModel


@dataclass(frozen=True)
class ScalingSpec:
    """Time-dilation exponent; species/reaction exponents live on the model."""

    gamma: Fraction = Fraction(0)


def _mass_action_value(kappa: float, reactants, alphas, values) -> float:
    out = kappa
    for i, n in reactants:
        if alphas[i] == 0:
            out *= falling_factorial(values[i], n)
        else:
            out *= values[i] ** n
        if out == 0.0:
            return 0.0
    return out


def _raw_mass_action_value(kappa: float, reactants, values) -> float:
    out = kappa
    for i, n in reactants:
        out *= falling_factorial(values[i], n)
        if out == 0.0:
            return 0.0
    return out


def evaluate_rate(model: Model, k: int, state: State, compartment: int | None = None) -> float:
    """Rate of reaction k in the given state.

    Raw states use the combinatorial mass-action form; scaled states use
    the mixed form (combinatorial factors for discrete species, plain
    monomials for continuous ones). Expression laws evaluate on scaled
    states only.
    """
    spatial = isinstance(model, SpatialModel)
    if spatial != (compartment is not None):
        raise ModelError("compartment must be given exactly for spatial models")
    network = model.network if spatial else model
    if not 0 <= k < network.n_reactions:
        raise ModelError(f"no reaction {k}")
    counts = state.counts
    if spatial:
        if counts.ndim != 2 or counts.shape != (network.n_species, model.n_compartments):
            raise ModelError("state shape does not match species x compartments")
        if not 0 <= compartment < model.n_compartments:
            raise ModelError(f"no compartment {compartment}")
        law = model.rate_law(k, compartment)
        values = counts[:, compartment]
    else:
        if counts.ndim != 1 or counts.shape[0] != network.n_species:
            raise ModelError("state dimension does not match network")
        law = network.reactions[k].rate_law
        values = counts
    reaction = network.reactions[k]
    if isinstance(law, MassAction):
        if state.scaled:
            out = _mass_action_value(law.kappa, reaction.reactants, network.alphas, values)
        else:
            out = _raw_mass_action_value(law.kappa, reaction.reactants, values)
    else:
        if not state.scaled:
            raise ModelError("expression rate laws evaluate on scaled states")
        env = {s.name: values[i] for i, s in enumerate(network.species)}
        out = expressions.evaluate(law.ast, env)
    if out < 0 or not math.isfinite(out):
        raise RateEvaluationError(f"reaction {k}: rate {out} is negative or non-finite")
    return out


def scaled_rate_function(network: Network, k: int):
    """Compile reaction k's rate law into a function of a scaled species
    vector (mixed mass-action form, or the expression AST)."""
    reaction = network.reactions[k]
    law = reaction.rate_law
    return _compile_law(network, reaction, law)


def scaled_rate_function_spatial(model: SpatialModel, k: int, d: int):
    """Per-compartment variant; the argument is the scaled species vector
    of compartment d."""
    reaction = model.network.reactions[k]
    return _compile_law(model.network, reaction, model.rate_law(k, d))


def _compile_law(network: Network, reaction: Reaction, law: RateLaw):
    if isinstance(law, MassAction):
        kappa = law.kappa
        terms = tuple((i, n, network.species[i].alpha == 0) for i, n in reaction.reactants)

        def rate(values, kappa=kappa, terms=terms):
            out = kappa
            for i, n, discrete in terms:
                value = values[i]
                if discrete:
                    if value < n:
                        return 0.0
                    for j in range(n):
                        out *= value - j
                else:
                    out *= value if n == 1 else value ** n
            return out

        return rate

    names = [s.name for s in network.species]
    ast = law.ast

    def rate(values, names=names, ast=ast):
        env = {name: values[i] for i, name in enumerate(names)}
        out = expressions.evaluate(ast, env)
        if out < 0:
            raise RateEvaluationError(f"expression rate is negative: {out}")
        return out

    return rate


def check_state(model: Model, state: State) -> None:
    """Validate dimensions and integrality of discrete species."""
    network = model.network if isinstance(model, SpatialModel) else model
    expected = (network.n_species, model.n_compartments) if isinstance(model, SpatialModel) \
        else (network.n_species,)
    if state.counts.shape != expected:
        raise ModelError(f"state shape {state.counts.shape}, expected {expected}")
    for i, s in enumerate(network.species):
        values = np.atleast_1d(state.counts[i])
        if s.alpha == 0 and np.any(values != np.round(values)):
            raise ModelError(f"discrete species {s.name} must hold integer values")
