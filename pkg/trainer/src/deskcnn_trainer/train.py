"""Training and evaluation loops for DeskCNN on MNIST."""

import time
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from deskcnn_trainer import idx
from deskcnn_trainer.model import DeskCNN, MNIST_MEAN, MNIST_STD


def load_split(data_dir, split):
    """Return (images, labels) for 'train' or 't10k' as torch tensors.

    Images come back normalized: scaled to [0, 1] then standardized with the
    dataset mean/std, shaped (N, 1, 28, 28) float32.
    """
    data_dir = Path(data_dir)
    images = idx.read_images(data_dir / f"{split}-images-idx3-ubyte.gz")
    labels = idx.read_labels(data_dir / f"{split}-labels-idx1-ubyte.gz")
    if len(images) != len(labels):
        raise ValueError(f"{split}: {len(images)} images vs {len(labels)} labels")
    x = images.astype(np.float32) / 255.0
    x = (x - MNIST_MEAN[0]) / MNIST_STD[0]
    x = torch.from_numpy(x).unsqueeze(1)
    y = torch.from_numpy(labels.astype(np.int64))
    return x, y


@torch.no_grad()
def evaluate(model, x, y, batch_size=512):
    model.eval()
    correct = 0
    for i in range(0, len(x), batch_size):
        logits = model(x[i : i + batch_size])
        correct += (logits.argmax(1) == y[i : i + batch_size]).sum().item()
    return correct / len(x)


def train_model(
    data_dir,
    epochs=5,
    batch_size=128,
    lr=1e-3,
    seed=0,
    model=None,
    mask_fn=None,
    label_smoothing=0.0,
    log=print,
):
    """Train (or finetune) DeskCNN; returns (model, test_top1).

    `mask_fn`, when given, is invoked after every optimizer step; the prune
    loop uses it to keep zeroed weights at zero. Label smoothing caps the
    trained logit margins, which keeps the exported model's behavior under
    perturbation (quantization, execution noise) in a realistic regime
    instead of the wildly overconfident one tiny MNIST models fall into.
    """
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    x_train, y_train = load_split(data_dir, "train")
    x_test, y_test = load_split(data_dir, "t10k")

    if model is None:
        model = DeskCNN()
    opt = torch.optim.Adam(model.parameters(), lr=lr)

    n = len(x_train)
    for epoch in range(epochs):
        model.train()
        order = rng.permutation(n)
        t0 = time.time()
        running = 0.0
        for step, i in enumerate(range(0, n, batch_size)):
            sel = order[i : i + batch_size]
            logits = model(x_train[sel])
            loss = F.cross_entropy(
                logits, y_train[sel], label_smoothing=label_smoothing
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            if mask_fn is not None:
                mask_fn(model)
            running += loss.item()
            if (step + 1) % 100 == 0:
                log(
                    f"epoch {epoch + 1} step {step + 1}: "
                    f"loss {running / (step + 1):.4f}"
                )
        top1 = evaluate(model, x_test, y_test)
        log(
            f"epoch {epoch + 1}/{epochs}: test top-1 {top1:.4%} "
            f"({time.time() - t0:.0f}s)"
        )

    for p in model.parameters():
        if not torch.isfinite(p).all():
            raise RuntimeError("training produced non-finite parameters")
    return model, evaluate(model, x_test, y_test)
