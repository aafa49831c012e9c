"""
Exceptions raised by the reconciliation pipeline.

Every error carries a stable ``code`` so the management commands can report
failures in machine-readable form.
"""


class ReconciliationError(Exception):
    code = 'error'

    def __init__(self, message, **params):
        super().__init__(message)
        self.message = message
        self.params = params

    def as_dict(self):
        return {'error': self.code, 'message': self.message, **self.params}


class FormatError(ReconciliationError):
    """Malformed header, truncated payload or malformed CSV row."""
    code = 'format'


class LabelRangeError(ReconciliationError):
    code = 'out_of_range_label'


class DimensionMismatch(ReconciliationError):
    code = 'dimension_mismatch'


class TaxonomyMismatch(ReconciliationError):
    code = 'taxonomy_mismatch'


class UnknownClassError(ReconciliationError):
    code = 'unknown_class'


class EmptyInputError(ReconciliationError):
    code = 'empty_input'


class UnresolvedConflicts(ReconciliationError):
    code = 'unresolved_conflicts'

    def __init__(self, count):
        super().__init__(f"unresolved conflicts: {count}", count=count)
        self.count = count


class InvalidUniversalTaxonomy(ReconciliationError):
    code = 'invalid_universal'


class BrokenMappingChain(ReconciliationError):
    code = 'broken_chain'


class ScheduleError(ReconciliationError):
    code = 'schedule'
