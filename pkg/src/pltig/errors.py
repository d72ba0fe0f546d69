"""Exception hierarchy shared by the toolkit."""


class PltigError(Exception):
    """Base class for all toolkit errors."""


class CorpusFormatError(PltigError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class VocabularyError(PltigError):
    """A token is not part of the closed tag set."""

    def __init__(self, symbols):
        self.symbols = sorted(set(symbols))
        super().__init__("unknown symbol(s): " + " ".join(self.symbols))


class ConfigError(PltigError):
    pass


class NoParseError(PltigError):
    pass


class TrainingError(PltigError):
    pass


class EvaluationError(PltigError):
    pass


class UsageError(PltigError):
    pass
