"""
Gradient conflict between genres
================================

While one shared LoRA trains on a mix of two genres, we stop every few steps
and take the adapter gradient of a few users from each genre. Halves of the
same genre should point the same way more often than halves of different
genres.
"""

from pathlib import Path

from ilora.analysis import (GradientCapture, block_contrast, export_heatmap, grad_similarity,
                            split_groups)
from ilora.core import make_rng
from ilora.data import SyntheticSpec, corpus_vocab, gen_synthetic, render_pairs, user_regime
from ilora.lm import AdaptedLM, FinetuneConfig, LMConfig, ToyLM, finetune
from ilora.seqrec import SeqRecModel, SeqRecTrainConfig, sr_train

spec = SyntheticSpec(num_regimes=2, users_per_regime=60)
catalog, seqs = gen_synthetic(spec)
sr, _ = sr_train(SeqRecModel(catalog.size, seed=0), seqs, SeqRecTrainConfig(epochs=5))
sr.freeze()
vocab = corpus_vocab(catalog)
pairs = render_pairs(seqs, catalog, sr, vocab)

lm = ToyLM(len(vocab), LMConfig(d_model=32, n_layers=2, n_heads=2, d_ff=64))
lm.freeze()
model = AdaptedLM(lm, sr, vocab, "uniform-lora")

by_genre = {g: [p for p in pairs if user_regime(spec, p.user) == g] for g in range(2)}
groups, family = split_groups(by_genre, 8, make_rng(0))
capture = GradientCapture(groups)
finetune(model, pairs, FinetuneConfig(steps=100, batch_size=8, max_lr=3e-3, warmup_steps=10,
                                      ckpt_every=20), on_checkpoint=capture)

heat = grad_similarity(capture.records)
within, cross = block_contrast(heat, family)
print("labels:", heat.labels)
print(heat.matrix.round(3))
print(f"within genre {within:.3f}, across genres {cross:.3f}")

out = Path("demo_out")
export_heatmap(heat, out / "heatmap.csv", out / "heatmap.svg")
print("wrote", out / "heatmap.svg")
