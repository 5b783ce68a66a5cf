"""Exception hierarchy. Every error carries the name of the module that raised it."""


class SymSearchError(Exception):
    module = "symsearch"

    def __str__(self):
        return f"[{self.module}] {super().__str__()}"


class DatasetError(SymSearchError, ValueError):
    module = "detections"


class FeatureError(SymSearchError, ValueError):
    module = "features"


class ExprError(SymSearchError, ValueError):
    module = "expr"


class ExprSyntaxError(ExprError):
    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class ExprTypeError(ExprError):
    def __init__(self, message, path):
        super().__init__(f"{message} (at {path})")
        self.path = path


class UnknownFeatureError(ExprError):
    def __init__(self, name, missing=None):
        self.missing = list(missing) if missing else [name]
        if len(self.missing) > 1:
            super().__init__("unknown features: " + ", ".join(self.missing))
        else:
            super().__init__(f"unknown feature {name!r}")
        self.name = name


class FitnessError(SymSearchError, ValueError):
    module = "fitness"


class SearchError(SymSearchError):
    module = "search"


class GuidanceError(SymSearchError):
    module = "guidance"


class HarnessError(SymSearchError):
    module = "harness"
