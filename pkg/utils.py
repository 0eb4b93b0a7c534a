import hashlib
import json
import zlib
from pathlib import Path
from typing import Iterable, Iterator, Tuple

import faiss
import numpy as np
import pandas as pd
import torch


def philox(seed: int, *names) -> np.random.Generator:
    """Counter-based generator keyed by a seed and any number of stream names.

    Two calls with the same (seed, names) always produce the same stream, independent of
    what other streams were drawn before.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for name in names:
        if isinstance(name, int):
            words.append(name & 0xFFFFFFFF)
        else:
            words.append(zlib.crc32(str(name).encode("utf-8")))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def configure_threads(threads: int) -> None:
    # 0 keeps library defaults; 1 is the deterministic mode
    if threads < 0:
        raise ValueError(f"threads must be >= 0, got {threads}")
    if threads == 0:
        return
    torch.set_num_threads(threads)
    faiss.omp_set_num_threads(threads)
    if threads == 1:
        torch.use_deterministic_algorithms(True)


def sha256_hex(chunks: Iterable[bytes]) -> str:
    digest = hashlib.sha256()
    for chunk in chunks:
        digest.update(chunk)
    return digest.hexdigest()


def read_jsonl(path) -> Iterator[Tuple[int, dict]]:
    """Yield (line_number, record) for every non-blank line; raises json errors with the line number."""
    with open(path, "r", encoding="utf-8") as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_number}: malformed JSON ({e.msg})") from e
            yield line_number, record


def write_jsonl(path, records: Iterable[dict]) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as file:
        for record in records:
            file.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            file.write("\n")


def write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    return path