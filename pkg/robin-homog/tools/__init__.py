from .storage_tools import StorageManager, read_ensemble, write_ensemble
from .errors import RobinHomogError, PreconditionError, NumericalError

__all__ = [
    'StorageManager',
    'read_ensemble',
    'write_ensemble',
    'RobinHomogError',
    'PreconditionError',
    'NumericalError'
]
