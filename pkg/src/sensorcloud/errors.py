"""Exception hierarchy shared by every layer of the protocol stack."""

from __future__ import annotations

from typing import Any


class SensorCloudError(Exception):
    """Base class. ``code`` is a stable machine-readable identifier."""

    code = "error"

    def __init__(self, message: str = "", **details: Any) -> None:
        super().__init__(message or self.code)
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        report: dict[str, Any] = {"error": self.code, "message": str(self)}
        for key, value in self.details.items():
            report[key] = value if isinstance(value, (str, int, bool, list)) else str(value)
        return report


# codec
class MalformedJson(SensorCloudError):
    code = "MalformedJson"

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} at byte {offset}", offset=offset)
        self.offset = offset


class InvalidEncoding(SensorCloudError):
    code = "InvalidEncoding"


class InvalidPem(SensorCloudError):
    code = "InvalidPem"


# message model
class DuplicateReading(SensorCloudError):
    code = "DuplicateReading"


class EmptyBatch(SensorCloudError):
    code = "EmptyBatch"


class UnsupportedVersion(SensorCloudError):
    code = "UnsupportedVersion"


class UnknownMessageType(SensorCloudError):
    code = "UnknownMessageType"


class InvalidHeader(SensorCloudError):
    code = "InvalidHeader"


class ValidationFailure(SensorCloudError):
    code = "ValidationFailure"


# envelope
class MissingField(SensorCloudError):
    code = "MissingField"


class NonStringValue(SensorCloudError):
    code = "NonStringValue"


class ExpiredKey(SensorCloudError):
    code = "ExpiredKey"


class AuthenticationFailure(SensorCloudError):
    code = "AuthenticationFailure"


class MalformedEnvelope(SensorCloudError):
    code = "MalformedEnvelope"


class AlreadySigned(SensorCloudError):
    code = "AlreadySigned"


class MissingSignature(SensorCloudError):
    code = "MissingSignature"


class MalformedSignatureBlock(SensorCloudError):
    code = "MalformedSignatureBlock"


class BadSignature(SensorCloudError):
    code = "BadSignature"


class WrongKeyLength(SensorCloudError):
    code = "WrongKeyLength"


class UnwrapFailure(SensorCloudError):
    code = "UnwrapFailure"


# key management
class OverlappingValidity(SensorCloudError):
    code = "OverlappingValidity"


class NoValidKey(SensorCloudError):
    code = "NoValidKey"


class MixedValidity(SensorCloudError):
    code = "MixedValidity"


class WrongRecipient(SensorCloudError):
    code = "WrongRecipient"


class DuplicateKid(SensorCloudError):
    code = "DuplicateKid"


class UnknownKid(SensorCloudError):
    code = "UnknownKid"


class NotAuthorized(SensorCloudError):
    code = "NotAuthorized"


class UnknownEntity(SensorCloudError):
    code = "UnknownEntity"


# nodes
class UnknownDestination(SensorCloudError):
    code = "UnknownDestination"


class EmptyBuffer(SensorCloudError):
    code = "EmptyBuffer"


class InvalidSchemaText(SensorCloudError):
    code = "InvalidSchemaText"


class UnknownActuator(SensorCloudError):
    code = "UnknownActuator"


class UnknownFunction(SensorCloudError):
    code = "UnknownFunction"


class UnmatchedResponse(SensorCloudError):
    code = "UnmatchedResponse"


class InconsistentEcho(SensorCloudError):
    code = "InconsistentEcho"


class KeyDownloadFailed(SensorCloudError):
    code = "KeyDownloadFailed"


class UnexpectedMessage(SensorCloudError):
    code = "UnexpectedMessage"


class ScenarioError(SensorCloudError):
    code = "ScenarioError"


class AssertionFailed(SensorCloudError):
    code = "AssertionFailed"

    def __init__(self, message: str, report: Any = None, **details: Any) -> None:
        super().__init__(message, **details)
        self.report = report
