from kb_harness.exceptions import HarnessError


class DuplicateIdError(HarnessError):
    """
    Two documents of one corpus share a doc_id.
    """

    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f'duplicate doc_id {doc_id!r}')
