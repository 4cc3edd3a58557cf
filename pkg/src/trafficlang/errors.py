"""Exception hierarchy shared by every module in the toolkit."""


class TrafficLangError(Exception):
    """Base class; the CLI maps these to a one-line ``error:<Name>:`` prefix."""


class MalformedRow(TrafficLangError, ValueError):
    pass


class UnorderedTrace(TrafficLangError, ValueError):
    pass


class AmbiguousDirection(TrafficLangError, ValueError):
    pass


class TooManyClients(TrafficLangError, ValueError):
    pass


class EmptyCorpus(TrafficLangError, ValueError):
    pass


class ShapeMismatch(TrafficLangError, ValueError):
    pass


class IdOutOfRange(TrafficLangError, IndexError):
    pass


class BadConfig(TrafficLangError, ValueError):
    pass


class NonFiniteLoss(TrafficLangError, FloatingPointError):
    pass


class DegenerateClass(TrafficLangError, ValueError):
    pass


class DegenerateLabels(TrafficLangError, ValueError):
    pass


class NoPairSamples(TrafficLangError, ValueError):
    pass


class CheckpointError(TrafficLangError, ValueError):
    pass
