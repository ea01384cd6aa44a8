"""Error taxonomy shared across the compiler, engine, and protocol layers.

Exit-code mapping for the CLI lives in ``EXIT_CODES``: schema and shape
problems are operator errors (2), constraint violations mean the circuit
cannot run on the lookup-table backend as planned (3), and transport errors
cover the wire protocol (4).
"""

from __future__ import annotations


class TTCError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(TTCError):
    """A serialized artifact (model, circuit, message) is malformed."""


class InvariantError(TTCError):
    """A structural invariant is violated; the message names the field."""


class ShapeError(TTCError):
    """An input does not match the expected geometry."""


class DegenerateError(TTCError):
    """An operation is undefined for this input (e.g. all-zero weights)."""


class ConstraintViolation(TTCError):
    """A runtime value exceeded a declared accumulator or bitwidth bound."""


class FrameError(TTCError):
    """A wire frame is truncated, oversized, or of unknown type."""


class UnknownModelError(TTCError):
    """The requested model id is not registered with the server."""


class ParseError(TTCError):
    """A dataset file could not be parsed; names the row and column."""


EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_CONSTRAINT = 3
EXIT_TRANSPORT = 4

EXIT_CODES: dict[type[TTCError], int] = {
    SchemaError: EXIT_SCHEMA,
    InvariantError: EXIT_SCHEMA,
    ShapeError: EXIT_SCHEMA,
    DegenerateError: EXIT_SCHEMA,
    ParseError: EXIT_SCHEMA,
    UnknownModelError: EXIT_SCHEMA,
    ConstraintViolation: EXIT_CONSTRAINT,
    FrameError: EXIT_TRANSPORT,
}


def exit_code_for(exc: BaseException) -> int:
    """Map an exception to the documented CLI exit code."""
    for klass, code in EXIT_CODES.items():
        if isinstance(exc, klass):
            return code
    if isinstance(exc, (ConnectionError, TimeoutError, OSError)):
        return EXIT_TRANSPORT
    return 1
