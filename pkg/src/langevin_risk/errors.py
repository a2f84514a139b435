"""Exception types shared across the package."""

from __future__ import annotations


class ContractViolation(ValueError):
    """An operation was called with arguments outside its domain."""


class NumericError(ArithmeticError):
    """A numerical routine failed to produce a trustworthy value."""


class DivergedChainError(NumericError):
    """A Langevin chain produced a non-finite coordinate.

    Attributes
    ----------
    iteration : int
        1-based index of the step whose gradient or update was non-finite.
    chain : int or None
        Index of the chain inside a multi-chain run, when known.
    partial : numpy.ndarray or None
        Terminal points of the chains that finished before the failure.
    """

    def __init__(self, iteration: int, chain: int | None = None, partial=None, lam: float | None = None):
        self.iteration = iteration
        self.chain = chain
        self.partial = partial
        self.lam = lam
        where = f"iteration {iteration}"
        if chain is not None:
            where = f"chain {chain}, {where}"
        if lam is not None:
            where = f"lambda={lam:g}, {where}"
        super().__init__(f"chain diverged at {where}")
