"""Exception hierarchy shared by every simulator module."""


class SimulationError(Exception):
    """Base class for all domain errors raised by the simulator."""


# fixed point / ledger
class NegativeAmount(SimulationError, ArithmeticError):
    pass


class DivisionByZero(SimulationError, ZeroDivisionError):
    pass


class InsufficientBalance(SimulationError):
    pass


# amm
class RatioMismatch(SimulationError):
    pass


class UnknownBand(SimulationError):
    pass


class InsufficientLiquidity(SimulationError):
    pass


class ZeroInput(SimulationError):
    pass


class PositionClosed(SimulationError):
    pass


class PositionEscrowed(SimulationError):
    pass


# perp market
class ImmediateLiquidation(SimulationError):
    pass


class NotNftHolder(SimulationError):
    pass


class AlreadyClosed(SimulationError):
    pass


# nft registry
class DuplicateMint(SimulationError):
    pass


class UnknownUnderlying(SimulationError):
    pass


class UnknownToken(SimulationError):
    pass


class NotOwner(SimulationError):
    pass


class Escrowed(SimulationError):
    pass


class MissingPrice(SimulationError):
    pass


# lending
class ExceedsLtv(SimulationError):
    pass


class VaultIlliquid(SimulationError):
    pass


class LoanClosed(SimulationError):
    pass


# strategy / analysis
class HedgeInfeasible(SimulationError):
    pass


class ZeroLiquidity(SimulationError):
    pass


class ZeroTotalLiquidity(SimulationError):
    pass


class ZeroFee(SimulationError):
    pass


class MissingAsset(SimulationError):
    pass


class CsvFormatError(SimulationError):
    pass


class SchemaError(SimulationError):
    pass
