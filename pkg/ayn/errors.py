__all__ = [
    'AynError', 'ShapeError', 'InvalidValueError', 'DeterminismError',
    'FormatError', 'TaxonomyError', 'ConfigError', 'DivergenceError',
    'MissingResourceError']

from typing import Optional


class AynError(Exception):
    """
    Base for all errors raised by this package.

    Extra context goes into `details` and is carried into the
    machine-readable JSON the command line prints on failure.
    """
    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_json(self) -> dict:
        return {
            'error': type(self).__name__,
            'message': self.message,
            **{key: value for key, value in self.details.items()
               if value is not None}}

    @classmethod
    def from_json(cls, json: dict):
        message = json.get('message') or json.get('error')
        details = {
            key: value for key, value in json.items()
            if key not in ('error', 'message')}
        return cls(message, **details)


class ShapeError(AynError, ValueError):
    pass


class InvalidValueError(AynError, ValueError):
    pass


class DeterminismError(AynError, RuntimeError):
    pass


class FormatError(AynError, ValueError):
    def __init__(
            self,
            message: str,
            path: Optional[str] = None,
            line: Optional[int] = None,
            **details):
        if path is not None and line is not None:
            message = f'{path}:{line}: {message}'
        elif path is not None:
            message = f'{path}: {message}'
        super().__init__(message, path=path, line=line, **details)
        self.path = path
        self.line = line


class TaxonomyError(AynError, ValueError):
    pass


class ConfigError(AynError, ValueError):
    pass


class DivergenceError(AynError, RuntimeError):
    def __init__(self, message: str, epoch: int = None, batch: int = None, **details):
        super().__init__(message, epoch=epoch, batch=batch, **details)
        self.epoch = epoch
        self.batch = batch


class MissingResourceError(AynError, LookupError):
    def __init__(self, resource: str, message: Optional[str] = None):
        super().__init__(
            message or f'Missing required resource: {resource}',
            resource=resource)
        self.resource = resource
