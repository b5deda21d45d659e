"""Exception hierarchy. Every error raised on bad input derives from
:class:`CogfactorError` so the CLI can report it as machine-readable JSON."""


class CogfactorError(Exception):
    pass


class ShapeMismatch(CogfactorError, ValueError):
    pass


class GramSingular(CogfactorError, ValueError):
    pass


class InvalidDictionary(CogfactorError, ValueError):
    pass


class UnknownStudy(CogfactorError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class LabelOutOfRange(CogfactorError, ValueError):
    pass


class InvalidRate(CogfactorError, ValueError):
    pass


class NonFiniteGradient(CogfactorError, FloatingPointError):
    pass


class EmptyStudy(CogfactorError, ValueError):
    pass


class InvalidConfig(CogfactorError, ValueError):
    pass


class TooFewSubjects(CogfactorError, ValueError):
    pass


class TooFewSamples(CogfactorError, ValueError):
    pass


class MissingAuxiliary(CogfactorError, ValueError):
    pass


class BadMagic(CogfactorError, ValueError):
    pass


class TruncatedFile(CogfactorError, ValueError):
    pass


class UnsupportedDtype(CogfactorError, TypeError):
    pass


class MissingInput(CogfactorError, FileNotFoundError):
    pass
