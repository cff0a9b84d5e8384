import sys
import time

import numpy as np

from spandec.corpus import SyntheticSpec, generate_synthetic
from spandec.encoder import EncoderConfig
from spandec.models import ModelConfig
from spandec.train import desk_train_config, train

strategy = sys.argv[1] if len(sys.argv) > 1 else "spandec"
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 40
lr = float(sys.argv[3]) if len(sys.argv) > 3 else 1e-3
blocks = int(sys.argv[4]) if len(sys.argv) > 4 else 2
hidden = int(sys.argv[5]) if len(sys.argv) > 5 else 64

spec = SyntheticSpec(num_sentences=200)
train_corpus = generate_synthetic(spec, seed=7)
dev_corpus = generate_synthetic(SyntheticSpec(num_sentences=100), seed=8)

encoder = EncoderConfig(
    num_blocks=blocks, hidden_dim=hidden, num_heads=4, ffn_dim=4 * hidden,
    vocab_size=1, max_positions=32,
)
config = ModelConfig(strategy=strategy, encoder=encoder, label_set=spec.label_set())
tc = desk_train_config(epochs=epochs, base_lr=lr, batch_size=32, seed=0)

t0 = time.perf_counter()
report, model = train(config, tc, train_corpus, dev_corpus)
dt = time.perf_counter() - t0
f1s = np.array(report.dev_f1)
first_99 = int(np.argmax(f1s >= 0.99)) if (f1s >= 0.99).any() else -1
print(f"{strategy}: best={report.best_dev_f1:.4f} at epoch {report.best_epoch}, "
      f"first>=0.99 at {first_99}, wall {dt:.1f}s, per-epoch {dt/max(1,epochs):.2f}s")
print("loss:", " ".join(f"{v:.3f}" for v in report.epoch_losses[:12]), "...")
print("f1:  ", " ".join(f"{v:.3f}" for v in report.dev_f1[:12]), "...")
