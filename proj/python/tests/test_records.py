# Copyright 2026 The maskdesk Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import numpy as np
import pytest

md = pytest.importorskip("maskdesk")


def random_entry(rng):
    entry = {}
    for k in range(int(rng.integers(0, 5))):
        kind = int(rng.integers(0, 3))
        n = int(rng.integers(1, 20))
        if kind == 0:
            entry[f"b{k}"] = rng.bytes(n)
        elif kind == 1:
            entry[f"i{k}"] = [int(v) for v in rng.integers(-(2**62), 2**62, size=n)]
        else:
            entry[f"f{k}"] = [float(np.float32(v)) for v in rng.normal(size=n)]
    return entry


def test_payload_round_trip(rng):
    for _ in range(100):
        e = random_entry(rng)
        assert md.decode_payload(md.encode_payload(e)) == e


def test_shards_round_trip_and_balance(rng, tmp_path):
    entries = [random_entry(rng) for _ in range(300)]
    sizes = md.write_shards(entries, 4, tmp_path / "shards")
    assert len(sizes) == 4
    back = md.read_shards(tmp_path / "shards")
    key = lambda e: md.encode_payload(e)
    assert sorted(map(key, back)) == sorted(map(key, entries))

    skewed = [{"blob": b"x" * int(s)} for s in rng.lognormal(7, 1, size=400)]
    sizes = md.write_shards(skewed, 8, tmp_path / "skewed")
    assert max(sizes) / min(sizes) <= 1.10


def test_corrupt_shard_raises(tmp_path):
    md.write_shards([{"a": b"hello"}], 1, tmp_path)
    shard = next(p for p in tmp_path.iterdir() if p.name != "manifest.txt")
    data = bytearray(shard.read_bytes())
    data[-1] ^= 0xFF
    shard.write_bytes(bytes(data))
    with pytest.raises(md.Error):
        md.read_shards(tmp_path)
