import random
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from raglog.embed import HashingEmbedder
from raglog.ingest import GroundTruth, LogEntry
from raglog.store import VectorRecord, VectorStore

import oracles


BGL_LINES = [
    "- 1117838570 2005.06.03 R02-M1-N0-C:J12-U11 2005-06-03-15.42.50.363779 R02-M1-N0-C:J12-U11 RAS KERNEL INFO instruction cache parity error corrected",
    "- 1117838573 2005.06.03 R02-M1-N0-C:J12-U11 2005-06-03-15.42.53.631490 R02-M1-N0-C:J12-U11 RAS KERNEL INFO generating core.2275",
    "KERNDTLB 1118769430 2005.06.14 R23-M0-NE-C:J05-U01 2005-06-14-10.17.10.932971 R23-M0-NE-C:J05-U01 RAS KERNEL FATAL data TLB error interrupt",
    "- 1117838976 2005.06.03 R16-M1-N2-C:J17-U01 2005-06-03-15.49.36.156884 R16-M1-N2-C:J17-U01 RAS KERNEL INFO CE sym 2, at 0x0b85eee0, mask 0x05",
    "APPSEV 1118073825 2005.06.06 R30-M0-N9-I:J18-U01 2005-06-06-08.23.45.447064 R30-M0-N9-I:J18-U01 RAS APP SEVERE ciod: Error loading program",
    "- 1117842440 2005.06.03 R24-M0-N1-C:J13-U11 2005-06-03-16.47.20.730545 R24-M0-N1-C:J13-U11 RAS KERNEL INFO 63543 double-hummer alignment exceptions",
]


@pytest.fixture
def bgl_file(tmp_path):
    path = tmp_path / "sample.log"
    path.write_text("\n".join(BGL_LINES) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def embedder():
    return HashingEmbedder(dim=256)


@pytest.fixture
def small_embedder():
    return HashingEmbedder(dim=64)


def make_entries(messages, label=GroundTruth.NORMAL, start_id=0, source="test"):
    return [
        LogEntry(id=start_id + i, source=source, label=label, message=m)
        for i, m in enumerate(messages)
    ]


@pytest.fixture
def normal_entries():
    return make_entries(oracles.make_normal_corpus(300, seed=11))


def random_unit_vectors(n, dim, seed):
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((n, dim)).astype(np.float32)
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return vectors / norms


def filled_store(n=50, dim=64, seed=0, embedder_name=""):
    store = VectorStore(dim=dim, normalized=True, embedder_name=embedder_name)
    vectors = random_unit_vectors(n, dim, seed)
    for i in range(n):
        store.insert(VectorRecord(id=i, text=f"entry {i}", vector=vectors[i]))
    return store


@pytest.fixture
def rng():
    return random.Random(1234)
