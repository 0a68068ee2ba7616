"""Exception hierarchy. Every error raised by the package derives from IMCError."""


class IMCError(Exception):
    pass


class DimensionMismatch(IMCError, ValueError):
    pass


class DominationViolation(IMCError, ValueError):
    """The target has mass where the instrumental density vanishes."""

    def __init__(self, msg, step=None):
        if step is not None:
            msg = f"{msg} (at step {step})"
        super().__init__(msg)
        self.step = step


class NonFiniteWeight(IMCError, ValueError):
    def __init__(self, msg, step=None):
        if step is not None:
            msg = f"{msg} (at step {step})"
        super().__init__(msg)
        self.step = step


class NonFiniteDensity(IMCError, ValueError):
    pass


class InvalidBeta(IMCError, ValueError):
    pass


class DivisionByZero(IMCError, ZeroDivisionError):
    pass


class UnsupportedLaw(IMCError, TypeError):
    pass


class IndexOutOfRange(IMCError, IndexError):
    pass


class EmptyChain(IMCError, ValueError):
    pass


class AllZeroWeights(IMCError, ValueError):
    pass


class SingularSystem(IMCError, ArithmeticError):
    pass


class MeanNotZero(IMCError, ValueError):
    pass


class DegenerateVariance(IMCError, ArithmeticError):
    pass


class ZeroAcceptance(IMCError, ValueError):
    pass


class NonConvergence(IMCError, RuntimeError):
    """Power iteration failed, or the unit eigenvalue is not simple."""


class SupportTooSmall(IMCError, ValueError):
    pass


class InvalidSpec(IMCError, ValueError):
    pass


class ConfigError(IMCError, ValueError):
    def __init__(self, msg, path=None):
        if path:
            msg = f"{path}: {msg}"
        super().__init__(msg)
        self.path = path
