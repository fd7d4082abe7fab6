"""Named random substreams derived from one master seed."""

import zlib

import numpy as np
import torch

STREAMS = ("corpus", "generator-init", "discriminator-init", "sampling", "interleave",
           "batches", "negatives", "bootstrap", "split")


def stream_seed(master: int, name: str) -> int:
    seq = np.random.SeedSequence([master & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])
    return int(seq.generate_state(1, dtype=np.uint32)[0])


def numpy_stream(master: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(master, name))


def torch_stream(master: int, name: str) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(stream_seed(master, name))
    return gen
