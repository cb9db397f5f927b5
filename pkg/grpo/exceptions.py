from kb_harness.exceptions import HarnessError


class GroupTooSmall(HarnessError):

    def __init__(self, size: int):
        self.size = size
        super().__init__(f'a group needs at least 2 rewards, got {size}')


class EmptyMask(HarnessError):
    """
    No token of the trajectory is an action token.
    """

    def __init__(self):
        super().__init__('mask selects no tokens')


class MissingLogprobs(HarnessError):

    def __init__(self, trajectory_id: str):
        self.trajectory_id = trajectory_id
        super().__init__(f'trajectory {trajectory_id!r} carries no old log-probabilities')


class BatchMismatch(HarnessError):
    """
    Imported advantages do not line up with the collected groups.
    """

    def __init__(self, group_id: str, detail: str):
        self.group_id = group_id
        super().__init__(f"group {group_id!r}: {detail}")
