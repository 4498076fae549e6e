"""Exception types. Every error carries a stable ``code`` string."""


class RelPolicyError(Exception):
    code = "RelPolicyError"


class LanguageError(RelPolicyError):
    """Raised by :func:`relpolicy.schema.check_language` with all violations attached."""

    code = "InvalidLanguage"

    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(f"{v.code}: {v.message}" for v in self.violations)
        super().__init__(msg)


class TypeMismatch(RelPolicyError):
    code = "TypeMismatch"


class UnknownObject(RelPolicyError):
    code = "UnknownObject"


class UnknownPredicate(RelPolicyError):
    code = "UnknownPredicate"


class MixedLanguage(RelPolicyError):
    code = "MixedLanguage"


class ShapeMismatch(RelPolicyError, ValueError):
    code = "ShapeMismatch"


class AllMasked(RelPolicyError, ValueError):
    code = "AllMasked"


class BadSegmentIndex(RelPolicyError, IndexError):
    code = "BadSegmentIndex"


class NotScalar(RelPolicyError, ValueError):
    code = "NotScalar"


class NonFiniteGrad(RelPolicyError, FloatingPointError):
    code = "NonFiniteGrad"


class NonFiniteLoss(RelPolicyError, FloatingPointError):
    code = "NonFiniteLoss"


class NoLegalAction(RelPolicyError):
    code = "NoLegalAction"


class IllegalAction(RelPolicyError):
    code = "IllegalAction"


class LabelNotLegal(RelPolicyError):
    code = "LabelNotLegal"

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ConfigError(RelPolicyError):
    code = "ConfigError"


class ChecksumMismatch(RelPolicyError):
    code = "ChecksumMismatch"
