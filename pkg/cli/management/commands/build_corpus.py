from environment.index import index_corpus
from environment.serializers import DocumentSerializer
from kb_harness.utils import dump_records

from ...base import HarnessCommand


class Command(HarnessCommand):
    help = 'Validate and index a corpus file; write it back in document order.'

    def run(self, cfg):
        index = index_corpus(self.documents(cfg))
        out = cfg.path('out', 'corpus.jsonl')
        dump_records(out, index.documents, DocumentSerializer)
        self.stdout.write(f'docs={index.n_docs} terms={len(index.postings)} avgdl={index.avgdl:.4f}')
        self.done(f'corpus written to {out}')
