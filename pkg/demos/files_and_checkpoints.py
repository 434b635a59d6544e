"""
Streaming from files, checkpointing and resuming
================================================

The same pipeline the command line uses: write a dataset to disk, read it
chunk by chunk, stop halfway, save the model, restore it and finish.
"""

import tempfile
from pathlib import Path

import numpy as np

from omvfs import ingest, synth
from omvfs.evaluation import evaluate_selection
from omvfs.pipeline import rankings, run_stream
from omvfs.types import HyperParams, load_state, save_state

work = Path(tempfile.mkdtemp())
ds = synth.generate(synth.PlantSpec(n=1200, dims=(80, 60), k=3, informative=(12, 9), background=0.2, seed=4))
manifest = synth.write_dataset(ds, work / "data", fmt="sparse")
print(manifest.read_text())

params = HyperParams.uniform(2, 3, chunk_size=200, max_inner_iters=60)
desc = ingest.read_manifest(manifest)

# first half of the stream
with ingest.ChunkReader(desc) as reader:
    first = [reader.next_chunk(200) for _ in range(3)]
    state, _ = run_stream(first, params, list(desc.views))
    save_state(state, work / "half.npz")

    # a fresh process would only have the checkpoint
    restored = load_state(work / "half.npz")
    rest = iter(lambda: reader.next_chunk(200), None)
    restored, _ = run_stream(rest, params, list(desc.views), state=restored)
print("chunks processed:", restored.t)

views, labels, _ = ingest.load_all(manifest)
for p in (5, 10, 20, 40):
    rep = evaluate_selection(rankings(restored), [p, p], views, labels, k=3)
    print(f"p={p:3d}  {rep.summary()}")

print("objective per chunk:", np.round([tr[-1] for tr in restored.objective_trace], 2).tolist())
