from kb_harness.exceptions import HarnessError


class InsufficientPool(HarnessError):
    """
    A label pool holds fewer tasks than the dataset asks for.
    """

    def __init__(self, side: str, available: int, requested: int):
        self.side = side
        self.available = available
        self.requested = requested
        super().__init__(f'{side} pool has {available} tasks, {requested} requested')
