class HarnessError(Exception):
    """
    Base class of every domain error raised by the harness apps.

    The command line maps these to exit code 2.
    """


class RecordError(HarnessError):
    """
    A line of an input file does not match its schema.
    """

    def __init__(self, path, line: int, errors):
        self.path = path
        self.line = line
        self.errors = errors
        super().__init__(f'{path}:{line}: {errors}')
