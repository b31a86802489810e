import numpy as np
import pytest

from writer_retrieval.corpus import CorpusManifest, ManifestEntry


def make_manifest(writer_pages, subset="synthetic"):
    """Build an in-memory manifest from {writer_id: n_pages}."""
    entries = []
    for writer, pages in writer_pages.items():
        for p in range(pages):
            image_id = f"{writer}_p{p}"
            entries.append(ManifestEntry(image_id, f"/none/{image_id}.png", writer, subset))
    return CorpusManifest(entries)


@pytest.fixture(scope="session")
def synth_corpus_dir(tmp_path_factory):
    """Small deterministic synthetic corpus shared across tests."""
    from writer_retrieval.corpus import synth_corpus

    out = tmp_path_factory.mktemp("synth")
    manifest = synth_corpus(4, 3, 2, seed=11, out_dir=out)
    return out, manifest
