"""
Error hierarchy shared by every app.

Input problems are Django ``ValidationError`` subclasses so that ``code`` and
``params`` carry the machine-readable detail; numeric failures derive from
``NumericError``.
"""
from django.core.exceptions import ValidationError


class OutOfBounds(ValidationError):
    """An event coordinate lies outside the declared sensor size."""

    def __init__(self, index, message=None):
        self.index = index
        super().__init__(
            message or 'Event %(index)s lies outside the sensor bounds.',
            code='out_of_bounds',
            params={'index': index},
        )


class UnsortedTimestamps(ValidationError):
    def __init__(self, index):
        self.index = index
        super().__init__(
            'Event %(index)s has an earlier timestamp than its predecessor.',
            code='unsorted_timestamps',
            params={'index': index},
        )


class EmptyStream(ValidationError):
    def __init__(self, message='The event stream is empty.'):
        super().__init__(message, code='empty_stream')


class ParseError(ValidationError):
    """A malformed line in one of the text formats; ``line`` is 1-based."""

    def __init__(self, line, reason='malformed line'):
        self.line = line
        self.reason = reason
        super().__init__(
            'Line %(line)s: %(reason)s',
            code='parse_error',
            params={'line': line, 'reason': reason},
        )


class BothEmpty(ValidationError):
    def __init__(self):
        super().__init__('IoU of two empty pixel sets is undefined.', code='both_empty')


class InvalidParams(ValidationError):
    def __init__(self, message):
        super().__init__(message, code='invalid_params')


class NumericError(Exception):
    """Base class for failures of the numeric stages."""


class EmptyWindow(NumericError):
    def __init__(self, t_k, t_w):
        self.t_k = t_k
        self.t_w = t_w
        super().__init__(f'No events within {t_w} s of t={t_k:.6f}')


class OutOfRange(NumericError):
    """A timestamp is not covered by the pose trajectory."""

    def __init__(self, t, chain_id=None):
        self.t = t
        self.chain_id = chain_id
        where = f'track {chain_id}: ' if chain_id is not None else ''
        super().__init__(f'{where}no ground-truth pose covers t={t:.6f}')


class NoConvergence(NumericError):
    def __init__(self, point, residual):
        self.point = point
        self.residual = residual
        super().__init__(
            f'Undistortion of {tuple(point)} did not converge (residual {residual:.3e})'
        )


class InsufficientObservations(NumericError):
    def __init__(self, count):
        self.count = count
        super().__init__(f'Triangulation needs at least 2 observations, got {count}')


class BehindCamera(NumericError):
    def __init__(self, behind, total):
        self.behind = behind
        self.total = total
        super().__init__(f'Triangulated point is behind the camera in {behind}/{total} views')
